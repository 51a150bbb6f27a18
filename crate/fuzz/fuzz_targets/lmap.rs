#![no_main]

use libfuzzer_sys::fuzz_target;
use rrl_core::labelmap::LabelMap;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = text.parse::<LabelMap>() {
        let again: LabelMap = map.to_string().parse().expect("re-parse");
        assert_eq!(map, again);
    }
});
