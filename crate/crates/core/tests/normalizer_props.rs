use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rolereward_core::normalizer::{NormalizerError, NormalizerState, RewardType, RunningStat};
use rolereward_core::reward::RewardVector;

fn rv(x: f64) -> RewardVector {
    RewardVector {
        focus: x,
        focus_attr: x,
        reference: x,
        format_valid: true,
    }
}

fn stat() -> impl Strategy<Value = RunningStat> {
    (-1e6f64..1e6, 0f64..1e6, any::<u64>()).prop_map(|(mean, var, count)| RunningStat {
        mean,
        var,
        count,
    })
}

fn state() -> impl Strategy<Value = NormalizerState> {
    (
        0.001f64..0.999,
        1e-12f64..1.0,
        prop::collection::vec(
            (
                0usize..20,
                prop::sample::select(RewardType::ALL.to_vec()),
                stat(),
            ),
            0..12,
        ),
    )
        .prop_map(|(decay, eps, entries)| {
            let mut s = NormalizerState::new(decay, eps).unwrap();
            for (g, k, st) in entries {
                s.set_stat(g, k, st);
            }
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn snapshot_round_trip_is_bit_exact(s in state()) {
        let text = s.to_json();
        let back = NormalizerState::from_json(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn variance_stays_non_negative(stream in prop::collection::vec(-1e3f64..1e3, 1..200), decay in 0.01f64..0.999) {
        let mut st = RunningStat::default();
        for r in stream {
            st.update(r, decay);
            prop_assert!(st.var >= 0.0);
        }
    }

    #[test]
    fn normalization_is_affine_invariant(
        stream in prop::collection::vec(0f64..1.0, 1..100),
        scale in 0.1f64..10.0,
        shift in -5f64..5.0,
    ) {
        // A state bootstrapped at (shift, scale²) sees a·x + b exactly as a
        // fresh state sees x.
        let mut plain = NormalizerState::new(0.95, 1e-12).unwrap();
        let mut moved = NormalizerState::new(0.95, 1e-12).unwrap();
        for k in RewardType::ALL {
            moved.set_stat(0, k, RunningStat { mean: shift, var: scale * scale, count: 0 });
        }
        for x in stream {
            plain.update(0, &rv(x));
            moved.update(0, &rv(scale * x + shift));
            let a = plain.normalize(0, &rv(x));
            let b = moved.normalize(0, &rv(scale * x + shift));
            prop_assert!((a.focus - b.focus).abs() <= 1e-6 * (1.0 + a.focus.abs()), "{a:?} {b:?}");
        }
    }
}

#[test]
fn converges_on_gaussian_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dist = Normal::new(0.5, 0.1).unwrap();
    let mut state = NormalizerState::new(0.99, 1e-8).unwrap();
    let mut tail = Vec::new();
    for i in 0..10_000 {
        let r = dist.sample(&mut rng);
        state.update(3, &rv(r));
        if i >= 9_000 {
            tail.push(state.normalize(3, &rv(r)).focus);
        }
    }
    let s = state.stat(3, RewardType::Focus);
    assert!((0.47..=0.53).contains(&s.mean), "{s:?}");
    let m = tail.iter().sum::<f64>() / tail.len() as f64;
    let sd = (tail.iter().map(|x| (x - m).powi(2)).sum::<f64>() / tail.len() as f64).sqrt();
    assert!(
        m.abs() < 0.1 && (0.85..=1.15).contains(&sd),
        "mean {m} std {sd}"
    );
}

#[test]
fn constant_stream_closes_geometrically() {
    let mut st = RunningStat::default();
    let c = 0.8;
    for n in 1..=500 {
        st.update(c, 0.99);
        assert!((st.mean - c).abs() <= 0.99f64.powi(n) * c + 1e-15);
    }
}

#[test]
fn version_mismatch_is_distinguished() {
    let doc = r#"{"version":999,"epsilon":1e-8,"decay":0.99,"stats":[]}"#;
    assert!(matches!(
        NormalizerState::from_json(doc),
        Err(NormalizerError::Version(999))
    ));
    assert!(matches!(
        NormalizerState::from_json("{"),
        Err(NormalizerError::Malformed(_))
    ));
}
