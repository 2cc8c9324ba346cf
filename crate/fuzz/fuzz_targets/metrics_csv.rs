#![no_main]

use byrd_cli::metrics::{metrics_to_string, parse_metrics};
use libfuzzer_sys::fuzz_target;

// Bit-identical, except NaN: emitting canonicalizes NaN payloads (including
// the sign of "-NaN" input), so any NaN matches any NaN.
fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn same_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => same(a, b),
        (None, None) => true,
        _ => false,
    }
}

// Accepted metrics files must round-trip: parse -> emit -> parse yields the
// same rows (the determinism guarantees depend on this).
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_metrics(text) {
        let emitted = metrics_to_string(&rows);
        let reparsed = parse_metrics(&emitted).expect("emitted metrics must reparse");
        assert_eq!(rows.len(), reparsed.len());
        for (a, b) in rows.iter().zip(&reparsed) {
            assert_eq!(a.k, b.k);
            assert!(same(a.loss, b.loss), "loss: {} vs {}", a.loss, b.loss);
            assert!(same_opt(a.accuracy, b.accuracy));
            assert!(same_opt(a.dist_to_opt_sq, b.dist_to_opt_sq));
            assert!(same(a.grad_norm, b.grad_norm));
        }
    }
});
