#![no_main]

use hrb_core::formats::{decode_hrb1, encode_hrb1};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ens) = decode_hrb1(data) {
        assert_eq!(ens.data.len(), ens.n * ens.steps * ens.trajectories);
        // Anything accepted must re-encode to the same bytes.
        assert_eq!(encode_hrb1(&ens), data);
    }
});
