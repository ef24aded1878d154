//! Structural invariants checked over randomly drawn inputs.

use proptest::prelude::*;
use waveinr::fitted::{model_from_str, model_to_string, FittedModel, ModelMeta};
use waveinr::model::{param_count, separate_param_count, Activation, ArchKind, ArchSpec, InrModel};
use waveinr::trainer::{fit, init_model, TrainConfig};
use waveinr::waveform::{
    format_capture, normalize_time, nmse_percent_slices, parse_capture, SamplingSpec, Unit, Waveform,
    WaveformSet,
};

fn arch_strategy() -> impl Strategy<Value = ArchSpec> {
    let act = || prop_oneof![Just(Activation::Sine), Just(Activation::Relu)];
    let kind = prop_oneof![
        (1usize..600).prop_map(|h| (ArchKind::Single { h }, Activation::Sine)),
        (1usize..120, 1usize..120, act()).prop_map(|(h1, h2, a)| (ArchKind::Double { h1, h2 }, a)),
        (1usize..120, 1usize..120, 2usize..6, act())
            .prop_map(|(h1, h2, channels, a)| (ArchKind::Multi { h1, h2, channels }, a)),
    ];
    (kind, 1.0f64..2000.0).prop_map(|((kind, activation), omega0)| ArchSpec { kind, activation, omega0 })
}

fn meta_for(model: &InrModel, n_samples: usize) -> ModelMeta {
    let c = model.n_outputs();
    ModelMeta {
        sampling: Some(SamplingSpec::new(60.0, 256).unwrap()),
        n_samples,
        labels: (0..c).map(|k| format!("ch{k}")).collect(),
        units: vec![Unit::Volts; c],
        scales: (0..c).map(|k| 1.0 + k as f64 / 3.0).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_form_count_matches_enumeration(arch in arch_strategy(), seed in any::<u64>()) {
        let model = init_model(&arch, seed).unwrap();
        prop_assert_eq!(param_count(&arch), model.enumerate_params());
        prop_assert_eq!(param_count(&arch), model.flatten().len());
    }

    #[test]
    fn shared_trunk_is_always_smaller(h1 in 1usize..500, h2 in 1usize..500, c in 2usize..8) {
        prop_assert!(param_count(&ArchSpec::multi(h1, h2, c)) < separate_param_count(h1, h2, c));
    }

    #[test]
    fn nmse_is_scale_invariant(
        raw in prop::collection::vec(-10.0f64..10.0, 8..64),
        noise in prop::collection::vec(-1.0f64..1.0, 64),
        k in prop_oneof![1e-3f64..1e-1, 1e1f64..1e3],
    ) {
        prop_assume!(raw.iter().any(|x| x.abs() > 1e-3));
        let recon: Vec<f64> = raw.iter().zip(&noise).map(|(r, e)| r + e).collect();
        let base = nmse_percent_slices(&raw, &recon).unwrap();
        let sr: Vec<f64> = raw.iter().map(|x| k * x).collect();
        let sc: Vec<f64> = recon.iter().map(|x| k * x).collect();
        let scaled = nmse_percent_slices(&sr, &sc).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-10 * base.max(1e-12), "{} vs {}", base, scaled);
    }

    #[test]
    fn grid_is_antisymmetric(n in 2usize..5000) {
        let g = normalize_time(n).unwrap();
        let t = g.times();
        prop_assert_eq!(t[0], -1.0);
        prop_assert_eq!(t[n - 1], 1.0);
        for k in 0..n {
            prop_assert_eq!(t[k], -t[n - 1 - k]);
        }
    }

    #[test]
    fn multi_output_channels_equal_their_slices(
        h1 in 1usize..40, h2 in 1usize..40, c in 2usize..5, seed in any::<u64>(),
        ts in prop::collection::vec(-1.0f64..=1.0, 20),
    ) {
        let model = init_model(&ArchSpec::multi(h1, h2, c).with_omega0(100.0), seed).unwrap();
        let InrModel::Multi(m) = &model else { unreachable!() };
        for &t in &ts {
            let all = m.forward(t);
            for (k, y) in all.iter().enumerate() {
                prop_assert_eq!(y.to_bits(), m.channel_model(k).forward(t).to_bits());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn capture_text_round_trips_exactly(
        cols in 1usize..4,
        values in prop::collection::vec(-1e6f64..1e6, 3 * 64),
    ) {
        let spec = SamplingSpec::new(50.0, 16).unwrap();
        let waves: Vec<Waveform> = (0..cols)
            .map(|c| {
                let s = values[c * 64..(c + 1) * 64].to_vec();
                Waveform::new(s, spec, format!("i_{c}"), Unit::Amperes).unwrap()
            })
            .collect();
        let set = WaveformSet::new(waves).unwrap();
        let back = parse_capture(&format_capture(&set), None, None).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn saved_model_evaluates_identically(arch in arch_strategy(), seed in any::<u64>()) {
        let model = init_model(&arch, seed).unwrap();
        let fitted = FittedModel::new(model.clone(), meta_for(&model, 7936)).unwrap();
        let loaded = model_from_str(&model_to_string(&fitted).unwrap()).unwrap();
        prop_assert_eq!(&loaded, &fitted);
        for k in 0..1000 {
            let t = -1.0 + 2.0 * (k as f64 + 0.37) / 1000.0;
            let (a, b) = (fitted.model.forward(t), loaded.model.forward(t));
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

fn one_channel(samples: Vec<f64>, spc: usize) -> WaveformSet {
    let spec = SamplingSpec::new(60.0, spc).unwrap();
    WaveformSet::new(vec![Waveform::new(samples, spec, "v_A", Unit::Volts).unwrap()]).unwrap()
}

#[test]
fn constant_target_is_fit_almost_exactly() {
    // Adam moves each parameter by at most about `lr` per step, so the
    // output bias needs lr well above 1/200 to reach the unit-RMS target.
    let target = one_channel(vec![5.0; 256], 32);
    let cfg = TrainConfig { learning_rate: 1e-2, epochs: 200, ..TrainConfig::default() };
    for arch in [ArchSpec::single(20), ArchSpec::double(30, 50), ArchSpec::double(4, 3)] {
        let (_, report) = fit(&target, &arch, &cfg).unwrap();
        assert!(report.final_nmse_percent < 0.1, "{arch}: NMSE {}%", report.final_nmse_percent);
    }
}

#[test]
fn small_single_layer_fits_a_pure_sine() {
    // Two cycles; in normalized time the tone has angular frequency 2π.
    let n = 64;
    let samples = (0..n).map(|k| (2.0 * std::f64::consts::PI * k as f64 / 32.0).sin()).collect();
    let target = one_channel(samples, 32);
    let cfg = TrainConfig { learning_rate: 5e-3, epochs: 2000, ..TrainConfig::default() };
    let (_, report) = fit(&target, &ArchSpec::single(4).with_omega0(8.0), &cfg).unwrap();
    assert!(report.final_nmse_percent < 0.5, "NMSE {}%", report.final_nmse_percent);
}
