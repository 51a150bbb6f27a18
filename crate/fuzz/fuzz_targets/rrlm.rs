#![no_main]

use libfuzzer_sys::fuzz_target;
use rrl_core::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok((cfg, params)) = checkpoint::decode(data) {
        assert_eq!(checkpoint::encode(&cfg, &params).unwrap(), data);
    }
});
