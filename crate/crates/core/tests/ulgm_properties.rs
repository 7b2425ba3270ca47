use proptest::prelude::*;

use selfmm_core::ulgm::{
    compute_centers, generate_label, momentum_update, relative_distance, BatchOutcome, BatchReps, GlobalRepStore, ULabelStore, Ulgm,
    UlgmConfig,
};
use selfmm_core::{Modality, Task};

fn label(y: f64) -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(y), -1.0..1.0f64]
}

proptest! {
    #[test]
    fn momentum_weights_telescope(fresh in prop::collection::vec(-3.0..3.0f64, 1..50), y_m in -3.0..3.0f64) {
        let n = fresh.len() + 1;
        let mut y = y_m;
        for (k, &f) in fresh.iter().enumerate() {
            y = momentum_update(y, f, k + 2).unwrap();
        }
        let norm = (n * (n + 1)) as f64;
        let closed = 2.0 / norm * y_m + fresh.iter().enumerate().map(|(k, f)| 2.0 * (k + 2) as f64 / norm * f).sum::<f64>();
        prop_assert!((y - closed).abs() < 1e-9);
        let weight_sum: f64 = (1..=n).map(|i| 2.0 * i as f64 / norm).sum();
        prop_assert!((weight_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_epoch_change_is_bounded(prev in -3.0..3.0f64, fresh in -3.0..3.0f64, epoch in 2usize..200) {
        let next = momentum_update(prev, fresh, epoch).unwrap();
        prop_assert!((next - prev).abs() <= 2.0 / (epoch as f64 + 1.0) * (fresh - prev).abs() + 1e-15);
    }

    #[test]
    fn centers_match_brute_force(
        reps in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 2..500),
        seed_labels in prop::collection::vec(label(0.5), 500),
    ) {
        let n = reps.len();
        let mut labels = seed_labels[..n].to_vec();
        labels[0] = 0.3;
        labels[1] = -0.3;
        let mut store = GlobalRepStore::new(n, [3; 4]);
        for task in Task::ALL {
            for (j, r) in reps.iter().enumerate() {
                store.update(task, j, r).unwrap();
            }
        }
        let centers = compute_centers(&store, &labels).unwrap();
        for k in 0..3 {
            let mean = |keep: fn(f64) -> bool| {
                let picked: Vec<f64> = reps.iter().zip(&labels).filter(|(_, &y)| keep(y)).map(|(r, _)| r[k]).collect();
                picked.iter().sum::<f64>() / picked.len() as f64
            };
            let c = centers.get(Task::Audio);
            prop_assert!((c.positive[k] - mean(|y| y > 0.0)).abs() < 1e-12);
            prop_assert!((c.negative[k] - mean(|y| y < 0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_labels_stay_in_range(y_m in -1.0..1.0f64, a_s in -1.0..50.0f64, a_m in -1.0..50.0f64) {
        let cfg = UlgmConfig { epsilon: 1e-4, label_range: 1.0 };
        let y = generate_label(y_m, a_s, a_m, &cfg);
        prop_assert!(y.is_finite() && y.abs() <= 1.0);
        prop_assert_eq!(generate_label(y_m, a_m, a_m, &cfg), y_m);
    }

    #[test]
    fn zero_m_label_keeps_half_the_alpha_gap(a_s in -1.0..5.0f64, a_m in 0.01..5.0f64) {
        let cfg = UlgmConfig { epsilon: 1e-4, label_range: 100.0 };
        prop_assert!((generate_label(0.0, a_s, a_m, &cfg) - (a_s - a_m) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_ignores_the_feature_space_scale(
        f in prop::collection::vec(-3.0..3.0f64, 4),
        p in prop::collection::vec(-3.0..3.0f64, 4),
        q in prop::collection::vec(-3.0..3.0f64, 4),
        scale in 0.1..10.0f64,
    ) {
        let mut store = GlobalRepStore::new(2, [4; 4]);
        for task in Task::ALL {
            store.update(task, 0, &p).unwrap();
            store.update(task, 1, &q).unwrap();
        }
        let centers = compute_centers(&store, &[1.0, -1.0]).unwrap();
        let c = centers.get(Task::Text);
        let base = relative_distance(&f, c, 0.0).unwrap();
        prop_assume!(base.d_pos > 1e-6);
        let scaled: Vec<f64> = f.iter().map(|x| x * scale).collect();
        let mut store2 = GlobalRepStore::new(2, [4; 4]);
        for task in Task::ALL {
            store2.update(task, 0, &p.iter().map(|x| x * scale).collect::<Vec<_>>()).unwrap();
            store2.update(task, 1, &q.iter().map(|x| x * scale).collect::<Vec<_>>()).unwrap();
        }
        let centers2 = compute_centers(&store2, &[1.0, -1.0]).unwrap();
        let other = relative_distance(&scaled, centers2.get(Task::Text), 0.0).unwrap();
        prop_assert!((base.alpha - other.alpha).abs() <= 1e-9 * base.alpha.abs().max(1.0));
    }
}

#[test]
fn ulgm_only_touches_batch_members_once_per_epoch() {
    let y_m = vec![0.5, -0.5, 0.2, -0.1, 0.0];
    let mut ulgm = Ulgm::new(UlgmConfig::default(), y_m.clone(), [2; 4]).unwrap();
    let reps = |k: usize, shift: f64| BatchReps {
        dims: [2; 4],
        rows: std::array::from_fn(|t| (0..k * 2).map(|i| i as f64 * (0.3 + 0.2 * t as f64) + shift).collect()),
    };
    ulgm.update_reps(&[0, 1, 2, 3, 4], &reps(5, 0.0)).unwrap();
    ulgm.begin_epoch(2);
    let BatchOutcome::Updated(gen) = ulgm.generate(&[1, 3], &reps(2, 0.7), [true; 3]).unwrap() else { panic!() };
    assert_eq!(gen.len(), 2);
    for m in Modality::ALL {
        for j in [0, 2, 4] {
            assert_eq!(ulgm.labels().get(m, j), y_m[j]);
        }
    }
    assert!(ulgm.labels().max_drift() > 0.0);
}

#[test]
fn label_store_tracks_drift_per_epoch() {
    let mut s = ULabelStore::new(vec![0.4, -0.2]);
    s.begin_epoch(2);
    s.merge(Modality::Text, 0, 1.0).unwrap();
    assert!((s.max_drift() - 0.4).abs() < 1e-15);
    s.begin_epoch(3);
    assert_eq!(s.max_drift(), 0.0);
    assert!(s.merge(Modality::Text, 5, 0.0).is_err());
}
