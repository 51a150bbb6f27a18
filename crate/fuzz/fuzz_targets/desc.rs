#![no_main]

use libfuzzer_sys::fuzz_target;
use rrl_core::retrieval::DescriptorStore;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = text.parse::<DescriptorStore>() {
        let again: DescriptorStore = store.to_string().parse().expect("re-parse");
        assert_eq!(store.to_string(), again.to_string());
    }
});
