#![no_main]

use knightian_lq::config::parse_config_bytes;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = parse_config_bytes(data) {
        assert!(!cfg.sigma_upper.is_empty());
        assert!(cfg.sigma_lower_sq > 0.0);
        let _ = cfg.model();
        for &s in &cfg.sigma_upper {
            let _ = cfg.bounds(s);
        }
    }
});
