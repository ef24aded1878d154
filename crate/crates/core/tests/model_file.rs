//! The worked model-file example from the README, evaluated by hand.

use std::path::PathBuf;

use waveinr::fitted::{load_model, model_to_string, reconstruct};
use waveinr::waveform::normalize_time;

fn example() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/example_model.json")
}

#[test]
fn worked_example_forward_pass() {
    let fitted = load_model(example()).unwrap();
    assert_eq!(fitted.param_count(), 15);

    // z = sin(ω0·a1·t + b1); y_j = sin(z·A2[0][j] + b2[j]); out_c = Σ_j y_j·A3[j][c] + b3[c].
    let out = fitted.model.forward(0.5);
    let expected = [0.004371681833558329, -0.013542953965361171, 0.032944675440457726];
    for (got, want) in out.iter().zip(expected) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
    // Physical units: multiply by the stored per-channel scale.
    let physical = [0.0030911673423992376, -0.009577375582191777, 0.0232958106830101];
    for ((y, s), want) in out.iter().zip(&fitted.meta.scales).zip(physical) {
        assert!((y * s - want).abs() < 1e-15);
    }
}

#[test]
fn worked_example_is_canonical_and_reconstructs() {
    let text = std::fs::read_to_string(example()).unwrap();
    let fitted = load_model(example()).unwrap();
    assert_eq!(model_to_string(&fitted).unwrap(), text);
    let grid = normalize_time(fitted.meta.n_samples).unwrap();
    let set = reconstruct(&fitted, &grid).unwrap();
    assert_eq!(set.labels(), ["v_A", "v_B", "v_C"]);
    assert_eq!(set.n_samples(), 7936);
}
