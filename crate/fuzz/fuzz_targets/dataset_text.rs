#![no_main]

use byrd::models::Dataset;
use libfuzzer_sys::fuzz_target;

// The text loader must reject or accept arbitrary input without panicking,
// and anything it accepts must satisfy the dataset invariants.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let declared = match data.first() {
        Some(b) if b % 3 == 0 => None,
        Some(b) => Some((b % 7) as usize),
        None => None,
    };
    if let Ok(parsed) = Dataset::parse_text(text, declared) {
        assert!(!parsed.is_empty());
        assert!(parsed.feature_dim() >= 1);
        for sample in parsed.samples() {
            assert_eq!(sample.features.len(), parsed.feature_dim());
            if parsed.num_classes() > 0 {
                let class = sample.label as usize;
                assert!(sample.label.fract() == 0.0 && class < parsed.num_classes());
            }
            assert!(sample.features.iter().all(|v| v.is_finite()));
        }
    }
});
