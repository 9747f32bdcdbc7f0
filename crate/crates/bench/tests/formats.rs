//! Artifact formats: round trips and rejection of damaged files.

use calm_bench::formats::{masks_from_bytes, masks_to_bytes, Checkpoint, MaskRecord};
use calm_core::calm::BinaryMask;
use calm_core::nn::{Activation, ModelSpec};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn any_finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), Just(-0.0), Just(f64::MIN_POSITIVE / 2.0)]
}

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn checkpoint_save_load_save_is_identical(
        hidden in prop::collection::vec(1usize..5, 0..3),
        tanh in any::<bool>(),
        seed in any::<u64>(),
        extra in prop::collection::vec(any_finite(), 0..1),
    ) {
        let act = if tanh { Activation::Tanh } else { Activation::Relu };
        let spec = ModelSpec::new(3, hidden, 2, act).unwrap();
        let mut ck = Checkpoint::new(spec.clone());
        ck.push("a", spec.init_params(seed)).unwrap();
        let mut v = spec.init_params(seed ^ 1).into_values();
        if let Some(x) = extra.first() { v[0] = *x; }
        ck.push("b", spec.init_params(0).with_values(v).unwrap()).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes.clone());
        for name in ["a", "b"] {
            let x = ck.get(name).unwrap().values();
            let y = back.get(name).unwrap().values();
            prop_assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        // Any single flipped byte is caught.
        let pos = (seed as usize) % bytes.len();
        let mut bad = bytes;
        bad[pos] ^= 0x10;
        prop_assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn masks_round_trip(bits in prop::collection::vec(any::<bool>(), 1..200), trace in prop::collection::vec(-5.0..5.0f64, 0..10)) {
        let rec = MaskRecord {
            task_id: 3,
            mask: BinaryMask::from_bits(bits),
            objective_trace: trace.clone(),
            density_trace: trace.iter().map(|v| v.abs() / 5.0).collect(),
        };
        let bytes = masks_to_bytes(std::slice::from_ref(&rec)).unwrap();
        let back = masks_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back[0], &rec);
        prop_assert_eq!(masks_to_bytes(&back).unwrap(), bytes);
    }
}

#[test]
fn truncated_and_nonfinite_checkpoints_are_refused() {
    let spec = ModelSpec::new(2, vec![3], 2, Activation::Relu).unwrap();
    let mut ck = Checkpoint::new(spec.clone());
    ck.push("p", spec.init_params(1)).unwrap();
    let bytes = ck.to_bytes().unwrap();
    for cut in [0, 5, 10, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
    let mut v = spec.init_params(1).into_values();
    v[2] = f64::NAN;
    let mut bad = Checkpoint::new(spec.clone());
    bad.push("p", spec.init_params(0).with_values(v).unwrap()).unwrap();
    assert!(bad.to_bytes().is_err());
}
