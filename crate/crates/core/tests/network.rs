use hazard_core::linalg::Matrix;
use hazard_core::network::{Mode, NetworkParameters, NetworkShape, SIGMA_FLOOR};
use hazard_core::seed;
use proptest::prelude::*;
use rand::Rng;

fn inputs(rows: usize, cols: usize, seed_: u64) -> Matrix {
    let mut rng = seed::rng(seed_);
    let data = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
    Matrix { rows, cols, data }
}

#[test]
fn standard_architecture_size() {
    for d in [1usize, 9, 30] {
        let shape = NetworkShape::standard(d);
        assert_eq!((shape.blocks, shape.width), (16, 64));
        let net = NetworkParameters::init(shape, 0.2, 0.99, 1).unwrap();
        // first block: d*64 weights + 64 bias + 64 scale + 64 shift;
        // 15 more blocks of 64*64 + 3*64; two heads of 64 + 1; kappa and xi
        let expected = d * 64 + 3 * 64 + 15 * (64 * 64 + 3 * 64) + 2 * 65 + 2;
        assert_eq!(net.parameter_count(), expected);
        assert_eq!(shape.parameter_count(), expected);
        assert_eq!(net.blocks.len(), 16);
        assert!(net.blocks.iter().all(|b| b.bn.running_var.iter().all(|v| *v >= 0.0)));
    }
}

#[test]
fn initial_weight_variance_follows_fan_in() {
    let net = NetworkParameters::init(NetworkShape::standard(9), 0.2, 0.99, 3).unwrap();
    for (i, b) in net.blocks.iter().enumerate().skip(1) {
        let w = &b.dense.weights;
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 64.0;
        assert!((var / target - 1.0).abs() < 0.2, "block {i}: variance {var}");
    }
    assert!(net.blocks.iter().all(|b| b.dense.bias.iter().all(|v| *v == 0.0)));
    assert!((net.kappa() - 0.5).abs() < 1e-15 && (net.xi() - 0.5).abs() < 1e-15);
    assert_eq!(net, NetworkParameters::init(NetworkShape::standard(9), 0.2, 0.99, 3).unwrap());
}

#[test]
fn inference_does_not_depend_on_batch_company() {
    let mut net = NetworkParameters::init(NetworkShape::standard(6), 0.2, 0.99, 4).unwrap();
    // give batch norm non-trivial running statistics first
    for s in 0..5 {
        net.forward_train(&inputs(64, 6, 100 + s), s).unwrap();
    }
    let batch = inputs(100, 6, 9);
    let before = net.clone();
    let all = net.forward_inference(&batch).unwrap();
    assert_eq!(net, before, "inference changed the parameters");
    for i in [0usize, 17, 99] {
        let one = Matrix {
            rows: 1,
            cols: 6,
            data: batch.row(i).to_vec(),
        };
        let single = net.forward_inference(&one).unwrap()[0];
        assert!((single.p - all[i].p).abs() <= 1e-12);
        assert!((single.sigma - all[i].sigma).abs() <= 1e-12 * all[i].sigma.max(1.0));
    }
    let again = net.forward(&batch, Mode::Inference, 0).unwrap();
    assert_eq!(all, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heads_stay_in_range(seed_ in 0u64..1000, scale in 0.0f64..1e3) {
        let net = NetworkParameters::init(NetworkShape { input_width: 3, blocks: 3, width: 8 }, 0.2, 0.99, seed_).unwrap();
        let mut x = inputs(5, 3, seed_ + 1);
        x.data.iter_mut().for_each(|v| *v *= scale);
        for o in net.forward_inference(&x).unwrap() {
            prop_assert!(o.p > 0.0 && o.p < 1.0);
            prop_assert!(o.sigma >= SIGMA_FLOOR);
        }
    }
}
