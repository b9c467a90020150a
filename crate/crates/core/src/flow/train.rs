use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::l2_normalize;
use crate::flow::{Architecture, FlowModel};
use crate::metrics::auroc;
use crate::numerics::{adam_step, AdamState, Matrix, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub blocks: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub normalize_features: bool,
    /// Record history every this many epochs (the last epoch is always recorded).
    pub eval_every: usize,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            blocks: 10,
            hidden_width: 2048,
            learning_rate: 1e-4,
            epochs: 1,
            batch_size: 256,
            seed: 0,
            normalize_features: true,
            eval_every: 1,
            architecture: Architecture::Glow,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.hidden_width == 0 || self.batch_size == 0 || self.eval_every == 0
        {
            return Err(Error::InvalidArgument(
                "blocks, hidden width, batch size and eval interval must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One recorded evaluation point. Epoch 0 is the model right after ActNorm
/// initialization, before any optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean NLL over the epoch's mini-batches (full training set at epoch 0).
    pub train_nll: f64,
    pub val_nll: f64,
    pub ood_nll: Option<f64>,
    /// Validation-vs-probe AUROC of log-likelihood scores.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    /// CSV with header `epoch,step,train_nll,val_nll,ood_nll,auroc`; missing
    /// values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,train_nll,val_nll,ood_nll,auroc\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.step,
                r.train_nll,
                r.val_nll,
                opt(r.ood_nll),
                opt(r.auroc)
            ));
        }
        out
    }
}

fn mean_nll<T: Real>(model: &FlowModel<T>, x: &Matrix<T>) -> Result<(f64, Vec<f64>)> {
    let lp = model.log_prob(x)?;
    let mean = -lp.iter().sum::<f64>() / lp.len() as f64;
    Ok((mean, lp))
}

fn prepare<T: Real>(x: &Matrix<T>, normalize: bool) -> Result<Matrix<T>> {
    if normalize {
        Ok(l2_normalize(x)?.0)
    } else {
        Ok(x.clone())
    }
}

/// Fit a flow by minimizing mean NLL with Adam over shuffled mini-batches.
pub fn train<T: Real>(
    features_train: &Matrix<T>,
    features_val: &Matrix<T>,
    ood_probe: Option<&Matrix<T>>,
    config: &TrainConfig,
) -> Result<(FlowModel<T>, TrainHistory)> {
    train_with_observer(features_train, features_val, ood_probe, config, |_| {})
}

/// [`train`], calling `observer` after each history record is appended.
pub fn train_with_observer<T: Real, F: FnMut(&HistoryRecord)>(
    features_train: &Matrix<T>,
    features_val: &Matrix<T>,
    ood_probe: Option<&Matrix<T>>,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(FlowModel<T>, TrainHistory)> {
    config.validate()?;
    if features_train.rows() == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if features_val.rows() == 0 {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let dim = features_train.cols();
    for (name, m) in [("validation", Some(features_val)), ("ood probe", ood_probe)] {
        if let Some(m) = m {
            if m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    context: if name == "validation" {
                        "validation features"
                    } else {
                        "ood probe features"
                    },
                    expected: dim,
                    actual: m.cols(),
                });
            }
        }
    }
    let train_x = prepare(features_train, config.normalize_features)?;
    let val_x = prepare(features_val, config.normalize_features)?;
    let ood_x = ood_probe
        .map(|m| prepare(m, config.normalize_features))
        .transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = FlowModel::new(
        dim,
        config.blocks,
        config.hidden_width,
        config.architecture,
        &mut rng,
    )?;
    model.normalized_features = config.normalize_features;

    let n = train_x.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let first = &order[..config.batch_size.min(n)];
    model.actnorm_init(&train_x.select_rows(first))?;

    let mut optimizer: Vec<AdamState<T>> = model
        .parameter_sizes()
        .into_iter()
        .map(AdamState::new)
        .collect();
    let mut history = TrainHistory::default();
    let mut step = 0usize;

    let record = |model: &FlowModel<T>, epoch, step, train_nll| -> Result<HistoryRecord> {
        let (val_nll, val_lp) = mean_nll(model, &val_x)?;
        let (ood_nll, auc) = match &ood_x {
            Some(o) => {
                let (nll, lp) = mean_nll(model, o)?;
                (Some(nll), Some(auroc(&val_lp, &lp)?))
            }
            None => (None, None),
        };
        Ok(HistoryRecord {
            epoch,
            step,
            train_nll,
            val_nll,
            ood_nll,
            auroc: auc,
        })
    };

    let initial_train = mean_nll(&model, &train_x)?.0;
    history.records.push(record(&model, 0, 0, initial_train)?);
    observer(history.records.last().unwrap());

    for epoch in 1..=config.epochs {
        if epoch > 1 {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_x.select_rows(chunk);
            model.zero_grad();
            let loss = model.accumulate_nll_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let mut states = optimizer.iter_mut();
            let lr = config.learning_rate;
            model.visit_parameters(|name, p, g| {
                let state = states.next().expect("one state per parameter block");
                adam_step(p, g, state, lr, name)
            })?;
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            history
                .records
                .push(record(&model, epoch, step, epoch_loss / n as f64)?);
            observer(history.records.last().unwrap());
        }
    }
    Ok((model, history))
}
