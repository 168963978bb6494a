//! Structural and numerical invariants checked over random inputs.

use lifelong_dt::autodiff::{Rng, Tensor};
use lifelong_dt::data::MinMaxScaler;
use lifelong_dt::entropy::{config_entropy, gibbs_probabilities, latent_dim};
use lifelong_dt::evaluation::quartiles;
use lifelong_dt::lifecycle::ConfigDatabase;
use lifelong_dt::networks::{flatten_layer, fnn_forward, unflatten_layer, ConfigSnapshot, FnnSpec};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = FnnSpec> {
    (1usize..4, prop::collection::vec(1usize..7, 1..5), 1usize..3).prop_map(|(i, h, o)| {
        let mut dims = vec![i];
        dims.extend(h);
        dims.push(o);
        FnnSpec::new(dims).unwrap()
    })
}

fn random_snapshot(spec: &FnnSpec, stage: usize, seed: u64) -> ConfigSnapshot {
    let mut rng = Rng::new(seed);
    let flat: Vec<f64> = (0..spec.param_count())
        .map(|_| rng.normal(0.0, 1.0))
        .collect();
    ConfigSnapshot::from_flat(spec, stage, &flat).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn concat_then_split_is_identity(parts in prop::collection::vec(
        prop::collection::vec(-1e6f64..1e6, 1..8), 1..6)) {
        let rows: Vec<Tensor> = parts.iter().map(|p| Tensor::row(p.clone())).collect();
        let joined = Tensor::concat_rows(&rows).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert_eq!(joined.shape(), &[1, sizes.iter().sum::<usize>()][..]);
        prop_assert_eq!(joined.split_row(&sizes).unwrap(), rows);
    }

    #[test]
    fn layer_flatten_round_trips(n_in in 1usize..6, n_out in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let w = Tensor::matrix(n_out, n_in,
            (0..n_in * n_out).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let b = Tensor::vector((0..n_out).map(|_| rng.normal(0.0, 1.0)).collect());
        let flat = flatten_layer(&w, &b).unwrap();
        prop_assert_eq!(flat.len(), (n_in + 1) * n_out);
        let (w2, b2) = unflatten_layer(&flat, n_in, n_out).unwrap();
        prop_assert_eq!(w2, w);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn snapshot_views_round_trip(spec in spec_strategy(), seed in any::<u64>()) {
        let snap = random_snapshot(&spec, 3, seed);
        prop_assert_eq!(snap.param_count(), spec.param_count());
        let flat = snap.flat();
        prop_assert_eq!(&ConfigSnapshot::from_flat(&spec, 3, &flat).unwrap(), &snap);
        let branches = snap.branch_vectors(&spec);
        prop_assert_eq!(branches.iter().map(Vec::len).collect::<Vec<_>>(), spec.branch_sizes());
        prop_assert_eq!(branches.concat(), flat);
        prop_assert_eq!(&ConfigSnapshot::from_branches(&spec, 3, &branches).unwrap(), &snap);
        let params = snap.to_params(&spec).unwrap();
        let dims = spec.layer_dims();
        for (l, wb) in params.chunks(2).enumerate() {
            prop_assert_eq!(wb[0].shape(), &[dims[l + 1], dims[l]][..]);
            prop_assert_eq!(wb[1].shape(), &[dims[l + 1]][..]);
        }
        prop_assert_eq!(&ConfigSnapshot::from_params(&spec, 3, &params).unwrap(), &snap);
    }

    #[test]
    fn forward_output_shape(spec in spec_strategy(), n in 1usize..9, seed in any::<u64>()) {
        let snap = random_snapshot(&spec, 0, seed);
        let x = Tensor::matrix(n, spec.input_dim(), vec![0.5; n * spec.input_dim()]).unwrap();
        let y = fnn_forward(&spec, &snap, &x).unwrap();
        prop_assert_eq!(y.shape(), &[n, spec.output_dim()][..]);
    }

    #[test]
    fn gibbs_probabilities_ignore_a_common_shift(
        spec in spec_strategy(), seed in any::<u64>(), shift in -50.0f64..50.0) {
        let theta = random_snapshot(&spec, 0, seed).flat();
        let shifted: Vec<f64> = theta.iter().map(|v| v + shift).collect();
        let p = gibbs_probabilities(&theta, 1.0).unwrap();
        let q = gibbs_probabilities(&shifted, 1.0).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300) + 1e-15, "{} vs {}", a, b);
        }
        let h = config_entropy(&p).unwrap();
        prop_assert!((h - config_entropy(&q).unwrap()).abs() < 1e-9);
        prop_assert!(h >= 0.0 && h <= (theta.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn minmax_invert_undoes_apply(rows in prop::collection::vec(
        prop::collection::vec(-1e3f64..1e3, 3), 2..12)) {
        let t = Tensor::from_rows(&rows).unwrap();
        let scaler = MinMaxScaler::fit(&[&t]).unwrap();
        let scaled = scaler.apply(&t).unwrap();
        for (c, &v) in scaled.data().iter().enumerate() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "column {} value {}", c % 3, v);
        }
        let back = scaler.invert(&scaled).unwrap();
        for (j, (a, b)) in back.data().iter().zip(t.data()).enumerate() {
            if !scaler.constant_columns().contains(&(j % 3)) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn quartiles_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let q = quartiles(&values).unwrap();
        prop_assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
    }
}

#[test]
fn entropy_of_trivial_distributions() {
    for n in [1usize, 2, 7, 151, 6561] {
        let p = gibbs_probabilities(&vec![0.25; n], 1.0).unwrap();
        let h = config_entropy(&p).unwrap();
        assert!((h - (n as f64).log2()).abs() <= 1e-12, "n = {n}: {h}");
    }
    let mut one_hot = vec![0.0; 9];
    one_hot[4] = 1.0;
    assert_eq!(config_entropy(&one_hot).unwrap(), 0.0);
    let p = gibbs_probabilities(&[0.0, std::f64::consts::LN_2], 1.0).unwrap();
    let expected = -(2.0f64 / 3.0) * (2.0f64 / 3.0).log2() - (1.0f64 / 3.0) * (1.0f64 / 3.0).log2();
    assert!((config_entropy(&p).unwrap() - expected).abs() <= 1e-12);
    assert_eq!(latent_dim(7.13, 2.0), 14);
    assert_eq!(latent_dim(2.5, 2.0), 4);
    assert_eq!(latent_dim(3.5, 2.0), 8);
}

#[test]
fn database_round_trip_is_bitwise() {
    let spec = FnnSpec::battery();
    let mut db = ConfigDatabase::new(spec.clone(), 17);
    db.set_latent_dims(vec![14]);
    for i in 0..6 {
        db.push(random_snapshot(&spec, i, 100 + i as u64)).unwrap();
        db.record_training_stage(i);
    }
    let generated: Vec<ConfigSnapshot> = (6..9)
        .map(|j| random_snapshot(&spec, j, 500 + j as u64))
        .collect();
    db.set_rollout(5, generated).unwrap();
    let dir = tempfile::tempdir().unwrap();
    db.save(dir.path()).unwrap();
    let back = ConfigDatabase::load(dir.path(), Some(&spec)).unwrap();
    assert_eq!(back, db);
    for (a, b) in back.snapshots().iter().zip(db.snapshots()) {
        let bits = |s: &ConfigSnapshot| s.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert!(ConfigDatabase::load(dir.path(), Some(&FnnSpec::engine())).is_err());
}
