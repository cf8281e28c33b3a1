pub mod effmap;
pub mod localize;
pub mod mle_fit;
pub mod sensitivity;
pub mod simulate;

/// Format a float for CSV output ('.' decimal separator, shortest
/// round-trip representation, deterministic across runs).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
