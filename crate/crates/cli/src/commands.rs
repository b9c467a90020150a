use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flowood::features::{self, load_feature_set, read_npy, write_npy, FeatureSet, NpyArray, SyntheticSpec};
use flowood::flow::{train_with_observer, FlowModel, TrainConfig};
use flowood::metrics::{evaluate, geometry_report};
use flowood::scores::{self, ScoreMethod, ScoreVector};
use serde::Serialize;
use serde_json::json;

use crate::{EvalArgs, SampleArgs, ScoreArgs, StatsArgs, SynthArgs, TrainArgs};

const VAL_FRACTION: f64 = 0.1;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

/// `model.flod` → `model.config.json`.
fn config_path(out: &Path) -> PathBuf {
    out.with_extension("config.json")
}

fn load_features(dir: &Path, flag: &str) -> Result<FeatureSet> {
    let fs = load_feature_set(dir).with_context(|| format!("{flag} {}", dir.display()))?;
    for w in fs.warnings() {
        eprintln!("warning: {}: {w}", dir.display());
    }
    Ok(fs)
}

fn load_model(path: &Path) -> Result<FlowModel<f32>> {
    FlowModel::load(path).with_context(|| format!("--model {}", path.display()))
}

fn check_dim(fs: &FeatureSet, dim: usize, flag: &str) -> Result<()> {
    if fs.dim() != dim {
        bail!("{flag} has dimension {} but --features has {dim}", fs.dim());
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let features = load_features(&args.features, "--features")?;
    let (train_set, val_set, val_source) = match &args.val {
        Some(dir) => {
            let val = load_features(dir, "--val")?;
            check_dim(&val, features.dim(), "--val")?;
            (features, val, dir.display().to_string())
        }
        None => {
            let (val, rest) = features::split(&features, VAL_FRACTION, args.seed)
                .context("holding out validation rows from --features")?;
            (rest, val, format!("{VAL_FRACTION} of --features (seed {})", args.seed))
        }
    };
    let ood = match &args.ood_probe {
        Some(dir) => {
            let o = load_features(dir, "--ood-probe")?;
            check_dim(&o, train_set.dim(), "--ood-probe")?;
            Some(o)
        }
        None => None,
    };
    let config = TrainConfig {
        blocks: args.blocks,
        hidden_width: args.hidden,
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        normalize_features: args.normalize,
        eval_every: args.eval_every,
        architecture: args.arch,
    };
    let history_path = args.history.clone().unwrap_or_else(|| {
        args.out
            .parent()
            .unwrap_or(Path::new(""))
            .join("history.csv")
    });
    write_json(
        &config_path(&args.out),
        &json!({
            "command": "train",
            "args": &args,
            "train": &config,
            "validation": val_source,
            "n_train": train_set.len(),
            "n_val": val_set.len(),
            "history": &history_path,
        }),
    )?;

    let (model, history) = train_with_observer(
        &train_set.features,
        &val_set.features,
        ood.as_ref().map(|o| &o.features),
        &config,
        |r| {
            let probe = match (r.ood_nll, r.auroc) {
                (Some(n), Some(a)) => format!(" ood_nll {n:.4} auroc {a:.4}"),
                _ => String::new(),
            };
            eprintln!(
                "epoch {} step {} train_nll {:.4} val_nll {:.4}{probe}",
                r.epoch, r.step, r.train_nll, r.val_nll
            );
        },
    )?;
    ensure_parent(&args.out)?;
    model.save(&args.out)?;
    write_text(&history_path, &history.to_csv())?;
    println!("model {}", args.out.display());
    println!("history {}", history_path.display());
    Ok(())
}

/// Per-sample extras for plotting score against feature norm.
fn sample_diagnostics(fs: &FeatureSet) -> (Vec<f64>, Option<Vec<bool>>) {
    let norms = fs
        .features
        .iter_rows()
        .map(|r| r.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt())
        .collect();
    let correct = match (&fs.logits, &fs.labels) {
        (Some(logits), Some(labels)) => Some(
            logits
                .iter_rows()
                .zip(labels)
                .map(|(row, &y)| {
                    let arg = row
                        .iter()
                        .enumerate()
                        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0;
                    arg as i64 == y
                })
                .collect(),
        ),
        _ => None,
    };
    (norms, correct)
}

fn require_logits<'a>(fs: &'a FeatureSet, dir: &Path, method: ScoreMethod) -> Result<&'a flowood::Matrix<f32>> {
    fs.logits
        .as_ref()
        .with_context(|| format!("{method} needs {} in {}", features::LOGITS_FILE, dir.display()))
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let fs = load_features(&args.features, "--features")?;
    let scores: ScoreVector = match args.method {
        ScoreMethod::Fde => {
            let path = args.model.as_ref().context("fde needs --model")?;
            let model = load_model(path)?;
            let normalize = args.normalize.unwrap_or(model.normalized_features);
            scores::fde_score(&model, &fs, normalize)?
        }
        ScoreMethod::Msp => scores::msp_score(require_logits(&fs, &args.features, args.method)?)?,
        ScoreMethod::Energy => {
            scores::energy_score(require_logits(&fs, &args.features, args.method)?, args.temperature)?
        }
        ScoreMethod::ReactEnergy => {
            let dir = args.id_train.as_ref().context("react needs --id-train to fit the clip threshold")?;
            let id_train = load_features(dir, "--id-train")?;
            check_dim(&id_train, fs.dim(), "--id-train")?;
            let clip = scores::fit_react_threshold(&id_train.features, args.react_percentile)?;
            scores::react_energy_score(&fs, clip, args.temperature)
                .with_context(|| format!("--features {}", args.features.display()))?
        }
    };
    ensure_parent(&args.out)?;
    write_npy(&args.out, &NpyArray::f64_vector(scores.values.clone()))?;
    let (norms, correct) = sample_diagnostics(&fs);
    let sidecar = args.out.with_extension("json");
    write_json(
        &sidecar,
        &json!({
            "method": scores.method,
            "params": scores.params,
            "model_file": &args.model,
            "feature_dir": &args.features,
            "args": &args,
            "n": scores.len(),
            "norms": norms,
            "correct": correct,
        }),
    )?;
    println!("scores {} ({} rows)", args.out.display(), scores.len());
    Ok(())
}

fn read_scores(path: &Path, flag: &str) -> Result<Vec<f64>> {
    let arr = read_npy(path).with_context(|| format!("{flag} {}", path.display()))?;
    if arr.shape.len() != 1 {
        bail!("{flag} {}: expected a 1-D score vector, got shape {:?}", path.display(), arr.shape);
    }
    let v = arr
        .to_f64()
        .with_context(|| format!("{flag} {}: scores must be floating point", path.display()))?;
    if v.is_empty() {
        bail!("{flag} {}: empty score file", path.display());
    }
    Ok(v)
}

/// Method recorded in a score file's sidecar, if there is one.
fn sidecar_method(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path.with_extension("json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("method")?.as_str().map(str::to_string)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let id = read_scores(&args.id_scores, "--id-scores")?;
    let ood = read_scores(&args.ood_scores, "--ood-scores")?;
    let method = match (sidecar_method(&args.id_scores), sidecar_method(&args.ood_scores)) {
        (Some(a), Some(b)) if a != b => bail!("score files come from different methods ({a} vs {b})"),
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => "unknown".to_string(),
    };
    let report = evaluate(&id, &ood, args.bins, &method)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("report.json"), &report)?;
    write_text(&args.out.join("id_histogram.csv"), &report.id_histogram.to_csv())?;
    write_text(&args.out.join("ood_histogram.csv"), &report.ood_histogram.to_csv())?;
    write_json(&args.out.join("config.json"), &json!({ "command": "eval", "args": &args }))?;
    println!("auroc {:.6}", report.auroc);
    Ok(())
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let fs = load_features(&args.features, "--features")?;
    let report = geometry_report(&fs.features, fs.labels.as_deref(), args.t, args.seed)?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    write_json(&args.out, &report)?;
    write_json(&config_path(&args.out), &json!({ "command": "stats", "args": &args }))?;
    println!("uniformity {:.6}", report.uniformity);
    if let Some(t) = report.tolerance {
        println!("tolerance {t:.6}");
    }
    Ok(())
}

pub fn sample(args: SampleArgs) -> Result<()> {
    if args.n < 1 {
        bail!("--n must be at least 1");
    }
    let model = load_model(&args.model)?;
    let x = model.sample(args.n, args.seed)?;
    ensure_parent(&args.out)?;
    let (rows, cols) = x.shape();
    write_npy(&args.out, &NpyArray::f32_matrix(rows, cols, x.into_vec())?)?;
    write_json(&config_path(&args.out), &json!({ "command": "sample", "args": &args }))?;
    println!("samples {} ({rows}×{cols})", args.out.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        dim: args.dim,
        id_clusters: args.id_clusters,
        ood_clusters: args.ood_clusters,
        samples_per_cluster: args.per_cluster,
        cluster_spread: args.spread,
        norm_mean: args.norm_mean,
        norm_std: args.norm_std,
        seed: args.seed,
    };
    let sets = features::generate_synthetic(&spec)?;
    for (name, set) in [("id_train", &sets.id_train), ("id_val", &sets.id_val), ("ood", &sets.ood)] {
        set.save(args.out.join(name))?;
    }
    write_json(&args.out.join("config.json"), &json!({ "command": "synth", "spec": &spec }))?;
    println!(
        "synthetic sets in {} (train {}, val {}, ood {})",
        args.out.display(),
        sets.id_train.len(),
        sets.id_val.len(),
        sets.ood.len()
    );
    Ok(())
}
