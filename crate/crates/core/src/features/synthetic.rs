use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMeta, FeatureSet};
use crate::numerics::Matrix;

/// Clustered-hypersphere benchmark: class centers uniform on the unit
/// sphere, samples `center + N(0, σ²I)` rescaled to a norm drawn from
/// `N(norm_mean, norm_std²)` (redrawn until positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub id_clusters: usize,
    pub ood_clusters: usize,
    /// Training samples per ID cluster. Validation gets a tenth of this per
    /// ID cluster and the OOD set a fifth per OOD cluster (at least one each).
    pub samples_per_cluster: usize,
    pub cluster_spread: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            id_clusters: 10,
            ood_clusters: 5,
            samples_per_cluster: 1000,
            cluster_spread: 0.05,
            norm_mean: 10.0,
            norm_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.id_clusters == 0 || self.ood_clusters == 0 || self.samples_per_cluster == 0 {
            return Err(Error::InvalidArgument(
                "synthetic spec needs dim ≥ 2 and at least one cluster and sample".into(),
            ));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::InvalidArgument("cluster spread must be ≥ 0".into()));
        }
        if !(self.norm_mean > 0.0 && self.norm_mean.is_finite()) {
            return Err(Error::InvalidArgument("norm mean must be > 0".into()));
        }
        if !(self.norm_std >= 0.0 && self.norm_std.is_finite()) {
            return Err(Error::InvalidArgument("norm std must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn val_per_cluster(&self) -> usize {
        (self.samples_per_cluster / 10).max(1)
    }

    pub fn ood_per_cluster(&self) -> usize {
        (self.samples_per_cluster / 5).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSets {
    pub id_train: FeatureSet,
    pub id_val: FeatureSet,
    pub ood: FeatureSet,
    /// `[id_clusters × D]`, also used as the classifier head.
    pub id_centers: Matrix<f64>,
    pub ood_centers: Matrix<f64>,
}

fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn draw_cluster_samples<R: Rng>(
    spec: &SyntheticSpec,
    centers: &Matrix<f64>,
    per_cluster: usize,
    rng: &mut R,
) -> (Matrix<f32>, Vec<i64>) {
    let d = spec.dim;
    let mut data = Vec::with_capacity(centers.rows() * per_cluster * d);
    let mut labels = Vec::with_capacity(centers.rows() * per_cluster);
    for k in 0..centers.rows() {
        let c = centers.row(k);
        for _ in 0..per_cluster {
            let v: Vec<f64> = c
                .iter()
                .map(|&ci| ci + spec.cluster_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let radius = loop {
                let r = spec.norm_mean + spec.norm_std * rng.sample::<f64, _>(StandardNormal);
                if r > 0.0 {
                    break r;
                }
            };
            data.extend(v.iter().map(|x| (radius * x / n) as f32));
            labels.push(k as i64);
        }
    }
    let rows = labels.len();
    (Matrix::new(rows, d, data).expect("sizes agree"), labels)
}

/// Deterministic per seed. ID sets carry labels (cluster index), logits and
/// a head whose rows are the ID centers; the OOD set carries logits and head
/// but no labels, since its clusters are not classes of the head.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSets> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = |n: usize, rng: &mut ChaCha8Rng| {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(spec.dim, rng)).collect();
        Matrix::from_rows(&rows).expect("equal rows")
    };
    let id_centers = centers(spec.id_clusters, &mut rng);
    let ood_centers = centers(spec.ood_clusters, &mut rng);
    let head: Matrix<f32> = id_centers.cast();

    let make = |features: Matrix<f32>, labels: Option<Vec<i64>>, name: &str| -> Result<FeatureSet> {
        let logits = features.matmul_nt(&head)?;
        let fs = FeatureSet {
            features,
            logits: Some(logits),
            labels,
            head_weight: Some(head.clone()),
            head_bias: Some(vec![0.0; spec.id_clusters]),
            source_name: name.to_string(),
            meta: FeatureMeta {
                source_name: name.to_string(),
                backbone: Some("synthetic-hypersphere".into()),
                augment: Some(false),
            },
        };
        fs.validate()?;
        Ok(fs)
    };

    let (x, y) = draw_cluster_samples(spec, &id_centers, spec.samples_per_cluster, &mut rng);
    let id_train = make(x, Some(y), "id_train")?;
    let (x, y) = draw_cluster_samples(spec, &id_centers, spec.val_per_cluster(), &mut rng);
    let id_val = make(x, Some(y), "id_val")?;
    let (x, _) = draw_cluster_samples(spec, &ood_centers, spec.ood_per_cluster(), &mut rng);
    let ood = make(x, None, "ood")?;
    Ok(SyntheticSets {
        id_train,
        id_val,
        ood,
        id_centers,
        ood_centers,
    })
}
