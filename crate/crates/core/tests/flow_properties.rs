use flowood::flow::{ActNorm, AffineCoupling, Architecture, FlowModel, InvertibleLinear};
use flowood::numerics::{finite_diff_check, Matrix};
use flowood::{train, TrainConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_rows(rows: usize, dim: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, dim, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// Glow/RealNVP stack with every parameter moved away from its identity
/// init. Triangular factors get entries of order 1/sqrt(D) so the product
/// stays well conditioned at large D.
fn random_model(dim: usize, blocks: usize, hidden: usize, arch: Architecture, seed: u64) -> FlowModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = FlowModel::<f64>::new(dim, blocks, hidden, arch, &mut rng).unwrap();
    model.actnorm_init(&gaussian_rows(64, dim, seed + 1)).unwrap();
    let tri = 0.5 / (dim as f64).sqrt();
    model
        .visit_parameters(|name, p, _| {
            let scale = if name.ends_with("lower") || name.ends_with("upper") {
                tri
            } else if name.contains("output") {
                0.3 / (hidden as f64).sqrt()
            } else {
                0.1
            };
            for v in p.iter_mut() {
                *v += rng.random_range(-scale..=scale);
            }
            Ok(())
        })
        .unwrap();
    // re-apply the triangular masks
    let flat = model.flat_parameters();
    model.set_flat_parameters(&flat).unwrap();
    model
}

fn max_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `log|det J|` of a row map by central differences.
fn fd_log_det(f: impl Fn(&Matrix<f64>) -> Matrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let h = 1e-5;
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[j] += h;
        down[j] -= h;
        let fu = f(&Matrix::new(1, d, up).unwrap());
        let fd = f(&Matrix::new(1, d, down).unwrap());
        for i in 0..d {
            jac[(i, j)] = (fu.get(0, i) - fd.get(0, i)) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

fn assert_rel(analytic: f64, numeric: f64, tol: f64, what: &str) {
    let rel = (analytic - numeric).abs() / numeric.abs().max(1e-12);
    // log-dets near zero are compared absolutely
    let err = if numeric.abs() < 1e-3 { (analytic - numeric).abs() } else { rel };
    assert!(err < tol, "{what}: analytic {analytic} vs fd {numeric}");
}

#[test]
fn round_trip_small_and_wide() {
    for (dim, blocks) in [(4, 2), (4, 10), (64, 2), (64, 10)] {
        for arch in [Architecture::Glow, Architecture::RealNvp] {
            let model = random_model(dim, blocks, 64, arch, dim as u64 + blocks as u64);
            let x = gaussian_rows(1000, dim, 7).cast::<f32>();
            let m32 = model.cast::<f32>();
            let (z, _) = m32.forward(&x).unwrap();
            let back = m32.inverse(&z).unwrap();
            let err = max_abs_diff(&back.cast(), &x.cast());
            assert!(err < 1e-4, "D={dim} blocks={blocks} {arch:?}: {err}");
        }
    }
}

#[test]
fn round_trip_d512() {
    let model = random_model(512, 2, 128, Architecture::Glow, 3).cast::<f32>();
    let x = gaussian_rows(200, 512, 4).cast::<f32>();
    let back = model.inverse(&model.forward(&x).unwrap().0).unwrap();
    assert!(max_abs_diff(&back.cast(), &x.cast()) < 1e-4);
}

#[test]
fn log_det_matches_jacobian_per_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dim in [2, 3, 5, 8] {
        let x = gaussian_rows(1, dim, dim as u64);
        let batch = gaussian_rows(32, dim, 100 + dim as u64);

        let mut act = ActNorm::<f64>::new(dim);
        act.initialize(&batch, 0).unwrap();
        let ld = act.log_det();
        assert_rel(ld, fd_log_det(|r| act.forward(r).unwrap(), x.row(0)), 1e-3, "actnorm");

        let model = random_model(dim, 1, 16, Architecture::Glow, dim as u64);
        let lin: &InvertibleLinear<f64> = model.blocks[0].linear.as_ref().unwrap();
        let ld = lin.log_det();
        assert!(ld.abs() > 1e-3, "linear layer should not be volume preserving");
        assert_rel(ld, fd_log_det(|r| lin.forward(r).unwrap().0, x.row(0)), 1e-3, "linear");

        for parity in [0, 1] {
            let mut c = AffineCoupling::<f64>::new(dim, parity, 16, &mut rng);
            for v in c.output.weight.as_mut_slice() {
                *v = rng.random_range(-0.5..0.5);
            }
            let (_, ld, _) = c.forward(&x).unwrap();
            let fd = fd_log_det(|r| c.forward(r).unwrap().0, x.row(0));
            assert_rel(ld[0], fd, 1e-3, "coupling");
        }
    }
}

#[test]
fn log_det_matches_jacobian_full_stack() {
    for arch in [Architecture::Glow, Architecture::RealNvp] {
        for dim in [2, 4, 8] {
            let model = random_model(dim, 4, 16, arch, 40 + dim as u64);
            let x = gaussian_rows(3, dim, 9);
            let (_, ld) = model.forward(&x).unwrap();
            for (i, l) in ld.iter().enumerate() {
                let fd = fd_log_det(|r| model.forward(r).unwrap().0, x.row(i));
                assert_rel(*l, fd, 1e-3, "stack");
            }
        }
    }
}

#[test]
fn nll_gradient_matches_central_differences() {
    let mut model = random_model(8, 2, 12, Architecture::Glow, 5);
    let batch = gaussian_rows(16, 8, 6);
    model.zero_grad();
    model.accumulate_nll_gradient(&batch).unwrap();
    let params = model.flat_parameters();
    let grads = model.flat_gradients();
    let mut probe = model.clone();
    let err = finite_diff_check(
        |p| {
            probe.set_flat_parameters(p).unwrap();
            let lp = probe.log_prob(&batch).unwrap();
            -lp.iter().sum::<f64>() / lp.len() as f64
        },
        &params,
        &grads,
        // near cbrt(f64::EPSILON): balances truncation against roundoff
        1e-5,
    );
    assert!(err < 1e-4, "max relative gradient error {err}");
}

#[test]
fn coupling_parity_alternates() {
    let model = random_model(6, 4, 8, Architecture::RealNvp, 1);
    let ranges: Vec<_> = model.blocks.iter().map(|b| b.coupling.transformed_range()).collect();
    assert_eq!(ranges, vec![3..6, 0..3, 3..6, 0..3]);
    // odd D: the passed half takes the extra coordinate
    let (pass, moved) = AffineCoupling::<f64>::ranges(5, 0);
    assert_eq!((pass, moved), (0..3, 3..5));
    let (pass, moved) = AffineCoupling::<f64>::ranges(5, 1);
    assert_eq!((pass, moved), (2..5, 0..2));
}

#[test]
fn training_is_deterministic() {
    let x = gaussian_rows(300, 6, 1).cast::<f32>();
    let v = gaussian_rows(50, 6, 2).cast::<f32>();
    let cfg = TrainConfig {
        blocks: 3,
        hidden_width: 16,
        learning_rate: 1e-3,
        epochs: 2,
        batch_size: 32,
        seed: 9,
        normalize_features: false,
        ..Default::default()
    };
    let (a, ha) = train(&x, &v, None, &cfg).unwrap();
    let (b, hb) = train(&x, &v, None, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ha.to_csv(), hb.to_csv());
    let other = TrainConfig { seed: 10, ..cfg };
    let (c, _) = train(&x, &v, None, &other).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn saved_model_scores_identically() {
    let model = random_model(5, 3, 8, Architecture::Glow, 2).cast::<f32>();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.flod");
    model.save(&path).unwrap();
    let loaded = FlowModel::load(&path).unwrap();
    let x = gaussian_rows(20, 5, 3).cast::<f32>();
    assert_eq!(model.log_prob(&x).unwrap(), loaded.log_prob(&x).unwrap());
}

#[test]
fn samples_look_like_training_data() {
    let x = gaussian_rows(2000, 4, 1).map(|v| v * 0.5 + 1.0).cast::<f32>();
    let v = gaussian_rows(500, 4, 2).map(|v| v * 0.5 + 1.0).cast::<f32>();
    let cfg = TrainConfig {
        blocks: 2,
        hidden_width: 16,
        learning_rate: 1e-3,
        epochs: 1,
        batch_size: 64,
        normalize_features: false,
        ..Default::default()
    };
    let (model, _) = train(&x, &v, None, &cfg).unwrap();
    let s = model.sample(2000, 4).unwrap();
    let mean = |m: &Matrix<f32>| {
        let lp = model.log_prob(m).unwrap();
        lp.iter().sum::<f64>() / lp.len() as f64
    };
    assert!((mean(&s) - mean(&v)).abs() < 2.0);
}
