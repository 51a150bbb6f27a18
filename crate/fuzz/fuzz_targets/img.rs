#![no_main]

use libfuzzer_sys::fuzz_target;
use rrl_core::image::Image;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(img) = text.parse::<Image>() {
        let again: Image = img.to_string().parse().expect("re-parse");
        assert_eq!(img, again);
    }
});
