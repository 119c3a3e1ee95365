#![no_main]

use knightian_lq::volatility::{estimate_bounds, parse_samples_bytes, BatchedSamples};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(samples) = parse_samples_bytes(data) else {
        return;
    };
    assert!(samples.iter().all(|x| x.is_finite()));
    for batches in [2, 5] {
        if let Ok(b) = BatchedSamples::with_batches(samples.clone(), batches) {
            if let Ok(e) = estimate_bounds(&b) {
                assert!(e.lower <= e.upper);
            }
        }
    }
});
