use proptest::prelude::*;

use reluhead::data::{kfold, stratified_kfold, Dataset, Split};
use reluhead::heads::{softmax, HeadKind};
use reluhead::model::{decode, encode, train, BuildOptions, InputSpec, Network, TrainConfig};
use reluhead::preprocess::{PcaParams, ScalerParams};
use reluhead::tensor::argmax_last;
use reluhead::{Rng, Tensor};

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |v| Tensor::new(&[rows, cols], v).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize, range: f64) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| matrix(r, c, range))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_distributions(o in sized_matrix(6, 12, 500.0)) {
        let p = softmax(&o).unwrap();
        for i in 0..p.rows() {
            let row = p.row(i);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(o in sized_matrix(5, 10, 50.0), shift in -1e3f64..1e3) {
        let shifted = o.map(|x| x + shift);
        let (a, b) = (softmax(&o).unwrap(), softmax(&shifted).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clamping_keeps_argmax_when_the_max_is_positive(o in sized_matrix(8, 10, 10.0)) {
        let clamped = o.max_scalar(0.0);
        let (a, b) = (argmax_last(&o).unwrap(), argmax_last(&clamped).unwrap());
        for i in 0..o.rows() {
            if o.row(i).iter().any(|&x| x > 0.0) {
                prop_assert_eq!(a[i], b[i]);
            }
        }
    }

    #[test]
    fn scaled_columns_have_zero_mean_and_unit_std(x in (2usize..30, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c, 100.0))) {
        let s = ScalerParams::fit(&x).unwrap();
        let z = s.transform(&x).unwrap();
        let n = z.rows() as f64;
        for j in 0..z.row_len() {
            let col: Vec<f64> = (0..z.rows()).map(|i| z.at(i, j)).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            if s.std[j] > 1e-9 {
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn pca_components_are_orthonormal(x in (8usize..30, 2usize..8).prop_flat_map(|(r, c)| matrix(r, c, 10.0))) {
        let d = x.row_len();
        let p = PcaParams::fit(&x, d).unwrap();
        let c = &p.components;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|j| c.at(j, a) * c.at(j, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-10, "({a},{b}) = {dot}");
            }
        }
        for w in p.explained_variance.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn pca_reconstruction_error_shrinks_with_dims(x in (8usize..30, 2usize..8).prop_flat_map(|(r, c)| matrix(r, c, 10.0))) {
        let d = x.row_len();
        let mut last = f64::INFINITY;
        for k in 1..=d {
            let p = PcaParams::fit(&x, k).unwrap();
            let back = p.reconstruct(&p.transform(&x).unwrap()).unwrap();
            let err: f64 = back.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(err <= last + 1e-9);
            last = err;
        }
        prop_assert!(last < 1e-12 * (1.0 + x.data().iter().map(|v| v * v).sum::<f64>()));
    }

    #[test]
    fn kfold_partitions_the_indices(n in 2usize..200, k in 2usize..12, seed: u64) {
        prop_assume!(k <= n);
        let plan = kfold(n, k, &mut Rng::seed(seed)).unwrap();
        prop_assert_eq!(plan.folds.len(), k);
        let mut seen = vec![0; n];
        for f in &plan.folds {
            for &i in &f.validation {
                seen[i] += 1;
            }
            prop_assert_eq!(f.train.len() + f.validation.len(), n);
            prop_assert!(f.train.iter().all(|i| !f.validation.contains(i)));
            prop_assert!(f.validation.len() >= n / k && f.validation.len() <= n / k + 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn stratified_folds_partition_and_balance(labels in prop::collection::vec(0usize..3, 20..120), seed: u64) {
        let k = 4;
        let plan = stratified_kfold(&labels, k, &mut Rng::seed(seed)).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in &plan.folds {
            f.validation.iter().for_each(|&i| seen[i] += 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for class in 0..3 {
            let counts: Vec<usize> = plan
                .folds
                .iter()
                .map(|f| f.validation.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn container_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>(), 0..64), desc in "[a-z0-9:=\n]{0,40}") {
        let bytes = encode(&desc, &values);
        let (d, v) = decode(&bytes).unwrap();
        prop_assert_eq!(d, desc);
        prop_assert_eq!(v.len(), values.len());
        for (a, b) in v.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

fn toy_dataset(seed: u64) -> Dataset {
    let mut rng = Rng::seed(seed);
    let n = 90;
    let mut x = Vec::with_capacity(n * 6);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        for j in 0..6 {
            let center = if j / 2 == c { 2.0 } else { 0.0 };
            x.push(center + rng.normal());
        }
        labels.push(c);
    }
    let names = vec!["a".into(), "b".into(), "c".into()];
    Dataset::new(Tensor::new(&[n, 6], x).unwrap(), labels, names, Split::Train).unwrap()
}

#[test]
fn trained_networks_round_trip_bit_exactly() {
    let data = toy_dataset(3);
    for head in [HeadKind::Softmax, HeadKind::Relu] {
        let mut net = Network::builder(InputSpec::Flat(6), 5).dense(8).unwrap().dropout(0.2).unwrap().head(head, 3).unwrap();
        train(&mut net, &data, &TrainConfig { epochs: 2, batch_size: 16, ..Default::default() }).unwrap();
        let bytes = net.to_bytes();
        let mut back = Network::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in net.params().iter().zip(back.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let x = data.features();
        let (pa, pb) = (net.predict_output(x, 7).unwrap(), back.predict_output(x, 7).unwrap());
        assert!(pa.data().iter().zip(pb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn seeded_training_is_reproducible_end_to_end() {
    let run = |seed: u64| {
        let data = toy_dataset(11);
        let opts = BuildOptions { seed, dropout: Some(vec![0.3]), ..Default::default() };
        let mut net = Network::ffnn_wdbc(6, HeadKind::Relu, 3, &opts).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed, ..Default::default() };
        let log = train(&mut net, &data, &cfg).unwrap();
        let scaler = ScalerParams::fit(data.features()).unwrap();
        let pca = PcaParams::fit(&scaler.transform(data.features()).unwrap(), 4).unwrap();
        (log.losses(), net.to_bytes(), scaler.to_bytes(), pca.to_bytes())
    };
    let a = run(42);
    let b = run(42);
    assert_eq!(a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.3, b.3);
    assert_ne!(a.1, run(43).1);
}
