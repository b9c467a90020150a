//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use flowood::features::{generate_synthetic, read_npy, SyntheticSpec};
use flowood::flow::{ActNorm, AffineCoupling, Architecture, FlowModel};
use flowood::metrics::{auroc, tolerance, uniformity};
use flowood::numerics::{finite_diff_check, Matrix};
use flowood::{l2_normalize, train, TrainConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(rows: usize, dim: usize, seed: u64) -> Matrix<f64> {
    FlowModel::<f64>::identity(dim, 1, 1, Architecture::Glow)
        .unwrap()
        .sample(rows, seed)
        .unwrap()
}

/// A flow whose every parameter is moved off its identity init.
fn random_model(dim: usize, blocks: usize, hidden: usize, arch: Architecture, seed: u64) -> FlowModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = FlowModel::<f64>::new(dim, blocks, hidden, arch, &mut rng).unwrap();
    model.actnorm_init(&gaussian(64, dim, seed).map(|v| 3.0 * v + 1.0)).unwrap();
    let tri = 0.5 / (dim as f64).sqrt();
    model
        .visit_parameters(|name, p, _| {
            let (center, scale) = if name.ends_with("lower") || name.ends_with("upper") {
                (0.0, tri)
            } else if name.ends_with("log_magnitude") {
                (0.1, 0.1)
            } else if name.contains("output") {
                (0.0, 0.3 / (hidden as f64).sqrt())
            } else {
                (0.0, 0.1)
            };
            for v in p.iter_mut() {
                *v += center + rng.random_range(-scale..=scale);
            }
            Ok(())
        })
        .unwrap();
    let flat = model.flat_parameters();
    model.set_flat_parameters(&flat).unwrap();
    model
}

fn invertibility() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for dim in [4, 64, 512] {
        for blocks in [2, 10] {
            let model = random_model(dim, blocks, 256, Architecture::Glow, (dim * blocks) as u64).cast::<f32>();
            let x = gaussian(1000, dim, 1).cast::<f32>();
            let back = model.inverse(&model.forward(&x).unwrap().0).unwrap();
            let err = x
                .as_slice()
                .iter()
                .zip(back.as_slice())
                .map(|(a, b)| (a - b).abs() as f64)
                .fold(0.0, f64::max);
            worst = worst.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("max |inverse(forward(x)) - x| = {worst:.2e} over 6 stacks x 1000 inputs in {secs:.1} s"),
    )
}

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

fn log_det_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut rel = |analytic: f64, numeric: f64| {
        worst = worst.max((analytic - numeric).abs() / numeric.abs());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dim in [2, 3, 5, 8] {
        let x = gaussian(1, dim, 100 + dim as u64);
        let mut act = ActNorm::<f64>::new(dim);
        act.initialize(&gaussian(32, dim, dim as u64).map(|v| 3.0 * v), 0).unwrap();
        rel(act.log_det(), fd_log_det(|r| act.forward(r).unwrap(), x.row(0)));

        let model = random_model(dim, 1, 16, Architecture::Glow, dim as u64);
        let lin = model.blocks[0].linear.as_ref().unwrap();
        rel(lin.log_det(), fd_log_det(|r| lin.forward(r).unwrap().0, x.row(0)));

        for parity in [0, 1] {
            let mut c = AffineCoupling::<f64>::new(dim, parity, 16, &mut rng);
            for v in c.output.weight.as_mut_slice() {
                *v = rng.random_range(-0.5..0.5);
            }
            for v in c.output.bias.iter_mut() {
                *v = 0.2;
            }
            let (_, ld, _) = c.forward(&x).unwrap();
            rel(ld[0], fd_log_det(|r| c.forward(r).unwrap().0, x.row(0)));
        }
        for arch in [Architecture::Glow, Architecture::RealNvp] {
            let model = random_model(dim, 4, 16, arch, 50 + dim as u64);
            let (_, ld) = model.forward(&x).unwrap();
            rel(ld[0], fd_log_det(|r| model.forward(r).unwrap().0, x.row(0)));
        }
    }
    check(
        worst < 1e-3,
        format!("worst relative error {worst:.2e} (actnorm, invertible linear, coupling, Glow and RealNVP stacks; D in 2..=8)"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut model = random_model(8, 2, 12, Architecture::Glow, 5);
    let batch = gaussian(16, 8, 6);
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
    check(
        err < 1e-4,
        format!("max relative error {err:.2e} over {} parameters", params.len()),
    )
}

fn density_oracle() -> Outcome {
    let entropy = 1.0 + (2.0 * std::f64::consts::PI).ln();
    let x = gaussian(45_000, 2, 1).cast::<f32>();
    let v = gaussian(5_000, 2, 2).cast::<f32>();
    let cfg = TrainConfig { normalize_features: false, ..Default::default() };
    let (model, history) = train(&x, &v, None, &cfg).unwrap();
    let val_nll = history.records.last().unwrap().val_nll;
    let (step, n) = (0.05, 240usize);
    let grid = Matrix::<f32>::from_fn(n * n, 2, |r, c| {
        let i = if c == 0 { r / n } else { r % n };
        (-6.0 + (i as f64 + 0.5) * step) as f32
    });
    let mass: f64 = model.log_prob(&grid).unwrap().iter().map(|l| l.exp()).sum::<f64>() * step * step;
    check(
        (val_nll - entropy).abs() < 0.1 && (mass - 1.0).abs() < 0.02,
        format!(
            "val NLL {val_nll:.5} vs entropy {entropy:.5} ({:.5} per dim vs 1.41894); integral {mass:.5}",
            val_nll / 2.0
        ),
    )
}

fn auroc_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for (n, seed) in [(1, 1), (7, 2), (100, 3), (2000, 4)] {
        // one decimal place forces many ties
        let round = |m: Matrix<f64>| m.iter_rows().map(|r| (r[0] * 10.0).round() / 10.0).collect::<Vec<_>>();
        let id = round(gaussian(n, 2, seed).map(|v| v + 0.5));
        let ood = round(gaussian(n, 2, seed + 100));
        let mut wins = 0.0;
        for a in &id {
            for b in &ood {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        let brute = wins / (id.len() * ood.len()) as f64;
        worst = worst.max((auroc(&id, &ood).unwrap() - brute).abs());
    }
    check(worst <= 1e-12, format!("max |rank - pair count| = {worst:.1e}, N up to 2000 with ties"))
}

struct Cli<'a>(&'a Path);

impl Cli<'_> {
    fn run(&self, args: &[&str]) -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_flowood"))
            .args(args)
            .current_dir(self.0)
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(String::from_utf8_lossy(&out.stdout).into_owned())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
        }
    }

    fn fde_auroc(&self, data: &str, model: &str, tag: &str) -> Result<f64, String> {
        for set in ["id_val", "ood"] {
            self.run(&[
                "score", "--model", model, "--features", &format!("{data}/{set}"), "--method", "fde",
                "--out", &format!("{tag}_{set}.npy"),
            ])?;
        }
        let out = self.run(&[
            "eval", "--id-scores", &format!("{tag}_id_val.npy"), "--ood-scores", &format!("{tag}_ood.npy"),
            "--out", &format!("{tag}_eval"),
        ])?;
        out.trim()
            .strip_prefix("auroc ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("unexpected eval output {out:?}"))
    }
}

fn synthetic_separation() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cli = Cli(tmp.path());
    cli.run(&["synth", "--out", "default"])?;
    cli.run(&["train", "--features", "default/id_train", "--val", "default/id_val", "--out", "default.flod"])?;
    let base = cli.fde_auroc("default", "default.flod", "default")?;

    cli.run(&["synth", "--norm-std", "5", "--spread", "0.1", "--out", "wide"])?;
    let mut aucs = Vec::new();
    for norm in ["true", "false"] {
        let model = format!("wide_{norm}.flod");
        cli.run(&[
            "train", "--features", "wide/id_train", "--val", "wide/id_val", "--normalize", norm, "--out", &model,
        ])?;
        aucs.push(cli.fde_auroc("wide", &model, &format!("wide_{norm}"))?);
    }
    let gap = aucs[0] - aucs[1];
    check(
        base >= 0.95 && gap >= 0.05,
        format!(
            "defaults: AUROC {base:.4}; norm_std 5, spread 0.1: normalized {:.4} vs unnormalized {:.4} (gap {gap:.4})",
            aucs[0], aucs[1]
        ),
    )
}

fn under_training() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cli = Cli(tmp.path());
    cli.run(&[
        "synth", "--dim", "8", "--id-clusters", "4", "--ood-clusters", "2", "--per-cluster", "500", "--spread", "0.6",
        "--out", "data",
    ])?;
    cli.run(&[
        "train", "--features", "data/id_train", "--val", "data/id_val", "--ood-probe", "data/ood", "--epochs", "500",
        "--hidden", "64", "--blocks", "4", "--out", "model.flod",
    ])?;
    let csv = fs::read_to_string(tmp.path().join("history.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let complete = rows.len() == 501
        && rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.len() == 6 && r[0] == i.to_string() && !r[4].is_empty() && !r[5].is_empty());
    if !complete {
        return Err(format!("history.csv incomplete: {} data rows", rows.len()));
    }
    let num = |epoch: usize, col: usize| rows[epoch][col].parse::<f64>().unwrap();
    let (peak_epoch, peak) = (1..=500).map(|e| (e, num(e, 5))).fold((0, 0.0), |b, x| if x.1 > b.1 { x } else { b });
    check(
        num(500, 4) < num(1, 4),
        format!(
            "501 rows; OOD NLL {:.4} at epoch 1 -> {:.4} at epoch 500; AUROC {:.4} at epoch 1, peak {peak:.4} at epoch {peak_epoch}, {:.4} at epoch 500",
            num(1, 4),
            num(500, 4),
            num(1, 5),
            num(500, 5)
        ),
    )
}

fn geometry() -> Outcome {
    let anti = Matrix::<f64>::from_rows(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
    let u = uniformity(&anti, 2.0).unwrap();
    // the four ordered pairs: two self-pairs at distance 0, two at squared distance 4
    let brute = ((1.0 + 1.0 + (-2.0f64 * 4.0).exp() + (-2.0f64 * 4.0).exp()) / 4.0).ln();
    let ortho = Matrix::<f64>::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let tol = tolerance(&ortho, &[0, 0]).unwrap();

    let sweep: Vec<f64> = [0.01, 0.05, 0.2]
        .iter()
        .map(|&spread| {
            let spec = SyntheticSpec { cluster_spread: spread, samples_per_cluster: 200, seed: 7, ..Default::default() };
            let s = generate_synthetic(&spec).unwrap();
            let (z, _) = l2_normalize(&s.id_train.features).unwrap();
            tolerance(&z, s.id_train.labels.as_ref().unwrap()).unwrap()
        })
        .collect();
    check(
        (u - brute).abs() < 1e-15 && tol == 0.5 && sweep[0] > sweep[1] && sweep[1] > sweep[2],
        format!(
            "antipodal uniformity {u:.6} (brute force {brute:.6}; the quoted -0.69298 is off by {:.1e}); \
             orthogonal tolerance {tol}; tolerance at spread 0.01/0.05/0.2 = {:.4}/{:.4}/{:.4}",
            (u + 0.69298).abs(),
            sweep[0],
            sweep[1],
            sweep[2]
        ),
    )
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let cli = Cli(dir.path());
        cli.run(&["synth", "--per-cluster", "200", "--seed", "4", "--out", "data"])?;
        cli.run(&[
            "train", "--features", "data/id_train", "--ood-probe", "data/ood", "--hidden", "128", "--blocks", "4",
            "--epochs", "2", "--seed", "4", "--out", "model.flod",
        ])?;
        cli.run(&["score", "--model", "model.flod", "--features", "data/ood", "--method", "fde", "--out", "fde.npy"])?;
        cli.run(&[
            "score", "--features", "data/ood", "--method", "react", "--id-train", "data/id_train", "--out", "react.npy",
        ])?;
        cli.run(&["sample", "--model", "model.flod", "--n", "100", "--seed", "4", "--out", "samples.npy"])?;
    }
    let (a, b) = (tree_bytes(runs[0].path()), tree_bytes(runs[1].path()));
    let differing: Vec<_> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
    let scores = read_npy(runs[0].path().join("fde.npy")).map_err(|e| e.to_string())?;
    check(
        a.len() == b.len() && differing.is_empty() && !scores.data.is_empty(),
        format!("{} files compared (datasets, model, history, scores, samples, configs); differing: {differing:?}", a.len()),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("invertibility", invertibility),
        ("log-det exactness", log_det_exactness),
        ("gradient correctness", gradient_correctness),
        ("density oracle", density_oracle),
        ("AUROC oracle equivalence", auroc_oracle),
        ("synthetic OOD separation", synthetic_separation),
        ("under-training instrumentation", under_training),
        ("geometry metrics", geometry),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
