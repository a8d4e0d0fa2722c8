//! Stock operators for audits and sweeps, plus file-backed operators in
//! the JSON interchange format.
//!
//! Every kind is fully determined by its parameters (random kinds by their
//! seed), so a zoo entry names one reproducible `(T, v)` pair.

use std::path::Path;

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use thiserror::Error;

use crate::operator::{CVector, Operator, OperatorError};

type C64 = Complex<f64>;

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("unknown zoo kind {0:?}")]
    UnknownKind(String),
    #[error("zoo entry {kind:?}: {message}")]
    BadSpec { kind: String, message: String },
    #[error("zoo dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("custom cyclic vector must be unit norm, got {norm}")]
    NonUnitCustomVector { norm: f64 },
    #[error("failed to read operator file {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("operator file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: OperatorError,
    },
}

/// Complex parameter in configuration files; `im` defaults to zero.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ComplexParam {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// Designated start vector of a zoo entry.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CyclicChoice {
    E1,
    Ones,
    Custom { re: Vec<f64>, im: Vec<f64> },
}

fn default_cyclic() -> CyclicChoice {
    CyclicChoice::E1
}

/// One zoo entry. `kind` selects the operator; the remaining fields are
/// kind-specific and validated at build time.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ZooSpec {
    pub kind: String,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda: Option<ComplexParam>,
    #[serde(default)]
    pub entries: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default = "default_cyclic")]
    pub cyclic_vector: CyclicChoice,
}

impl ZooSpec {
    pub fn simple(kind: &str, n: usize) -> Self {
        Self {
            kind: kind.to_string(),
            n: Some(n),
            weights: None,
            lambda: None,
            entries: None,
            seed: None,
            path: None,
            cyclic_vector: default_cyclic(),
        }
    }

    pub fn seeded(kind: &str, n: usize, seed: u64) -> Self {
        Self { seed: Some(seed), ..Self::simple(kind, n) }
    }
}

/// A built zoo entry: a stable identifier fragment, the operator, and its
/// designated unit start vector.
#[derive(Clone, Debug)]
pub struct BuiltOperator {
    pub id: String,
    pub operator: Operator<f64>,
    pub cyclic: CVector<f64>,
}

fn e1(n: usize) -> CVector<f64> {
    CVector::from_fn(n, |i, _| if i == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

fn ones(n: usize) -> CVector<f64> {
    let scale = 1.0 / (n as f64).sqrt();
    CVector::from_element(n, C64::new(scale, 0.0))
}

fn subdiagonal(n: usize, weight: impl Fn(usize) -> C64) -> Operator<f64> {
    Operator::from_fn(n, move |i, j| if i == j + 1 { weight(j) } else { C64::new(0.0, 0.0) })
}

fn require_n(spec: &ZooSpec) -> Result<usize, ZooError> {
    let n = spec.n.ok_or_else(|| ZooError::BadSpec {
        kind: spec.kind.clone(),
        message: "field \"n\" is required".into(),
    })?;
    if n < 2 {
        return Err(ZooError::DimensionTooSmall(n));
    }
    Ok(n)
}

/// Materialize a zoo entry. `base_dir` anchors relative `from_file` paths
/// (typically the configuration file's directory).
pub fn build(spec: &ZooSpec, base_dir: Option<&Path>) -> Result<BuiltOperator, ZooError> {
    let (id, operator) = match spec.kind.as_str() {
        "shift" => {
            let n = require_n(spec)?;
            (format!("shift_n{n}"), subdiagonal(n, |_| C64::new(1.0, 0.0)))
        }
        "weighted_shift" => {
            let n = require_n(spec)?;
            let weights = spec.weights.clone().ok_or_else(|| ZooError::BadSpec {
                kind: spec.kind.clone(),
                message: "field \"weights\" is required".into(),
            })?;
            if weights.len() != n - 1 {
                return Err(ZooError::BadSpec {
                    kind: spec.kind.clone(),
                    message: format!("expected {} weights for n={n}, got {}", n - 1, weights.len()),
                });
            }
            (
                format!("weighted_shift_n{n}"),
                subdiagonal(n, |j| C64::new(weights[j], 0.0)),
            )
        }
        "jordan" => {
            let n = require_n(spec)?;
            let lambda = spec.lambda.unwrap_or(ComplexParam { re: 0.0, im: 0.0 });
            let l = C64::new(lambda.re, lambda.im);
            let op = Operator::from_fn(n, |i, j| {
                if i == j {
                    l
                } else if i == j + 1 {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            (format!("jordan_n{n}"), op)
        }
        "diagonal" => {
            let entries = spec.entries.clone().ok_or_else(|| ZooError::BadSpec {
                kind: spec.kind.clone(),
                message: "field \"entries\" is required".into(),
            })?;
            let n = spec.n.unwrap_or(entries.len());
            if n != entries.len() {
                return Err(ZooError::BadSpec {
                    kind: spec.kind.clone(),
                    message: format!("n={n} disagrees with {} entries", entries.len()),
                });
            }
            if n < 2 {
                return Err(ZooError::DimensionTooSmall(n));
            }
            (format!("diagonal_n{n}"), Operator::from_real_diagonal(&entries))
        }
        "random_ginibre" => {
            let n = require_n(spec)?;
            let seed = spec.seed.unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1.0 / (2.0 * n as f64).sqrt();
            let op = Operator::from_fn(n, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                C64::new(re * scale, im * scale)
            });
            (format!("random_ginibre_s{seed}_n{n}"), op)
        }
        "random_hessenberg" => {
            // Strictly positive subdiagonal: the first coordinate vector is
            // cyclic by construction.
            let n = require_n(spec)?;
            let seed = spec.seed.unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut op = Operator::zeros(n).into_matrix();
            for j in 0..n {
                for i in 0..=(j + 1).min(n - 1) {
                    if i == j + 1 {
                        op[(i, j)] = C64::new(0.5 + 0.5 * rng.gen::<f64>(), 0.0);
                    } else {
                        op[(i, j)] = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                    }
                }
            }
            (
                format!("random_hessenberg_s{seed}_n{n}"),
                Operator::new(op).expect("generated entries are finite"),
            )
        }
        "from_file" => {
            let rel = spec.path.clone().ok_or_else(|| ZooError::BadSpec {
                kind: spec.kind.clone(),
                message: "field \"path\" is required".into(),
            })?;
            let path = match base_dir {
                Some(dir) => dir.join(&rel),
                None => std::path::PathBuf::from(&rel),
            };
            let text = std::fs::read_to_string(&path).map_err(|source| ZooError::File {
                path: path.display().to_string(),
                source,
            })?;
            let op =
                Operator::<f64>::from_json_str(&text).map_err(|source| ZooError::Parse {
                    path: path.display().to_string(),
                    source,
                })?;
            if op.dim() < 2 {
                return Err(ZooError::DimensionTooSmall(op.dim()));
            }
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().replace([',', ' '], "_"))
                .unwrap_or_else(|| "file".into());
            (format!("file_{stem}_n{}", op.dim()), op)
        }
        other => return Err(ZooError::UnknownKind(other.to_string())),
    };

    let n = operator.dim();
    let cyclic = match &spec.cyclic_vector {
        CyclicChoice::E1 => e1(n),
        CyclicChoice::Ones => ones(n),
        CyclicChoice::Custom { re, im } => {
            if re.len() != n || im.len() != n {
                return Err(ZooError::BadSpec {
                    kind: spec.kind.clone(),
                    message: format!(
                        "custom vector length {}/{} does not match n={n}",
                        re.len(),
                        im.len()
                    ),
                });
            }
            let v = CVector::from_fn(n, |i, _| C64::new(re[i], im[i]));
            let norm = v.norm();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(ZooError::NonUnitCustomVector { norm });
            }
            v
        }
    };
    Ok(BuiltOperator { id, operator, cyclic })
}

/// The laboratory's stock zoo at dimension `n`: the shift, a weighted
/// shift, a Jordan block, a distinct-diagonal operator started from the
/// flat vector, and one seeded instance of each random kind.
pub fn standard_specs(n: usize) -> Vec<ZooSpec> {
    let weights: Vec<f64> = (1..n).map(|k| (k as f64 + 1.0) / (k as f64 + 2.0)).collect();
    let entries: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    vec![
        ZooSpec::simple("shift", n),
        ZooSpec { weights: Some(weights), ..ZooSpec::simple("weighted_shift", n) },
        ZooSpec {
            lambda: Some(ComplexParam { re: 0.3, im: -0.2 }),
            ..ZooSpec::simple("jordan", n)
        },
        ZooSpec {
            entries: Some(entries),
            cyclic_vector: CyclicChoice::Ones,
            ..ZooSpec::simple("diagonal", n)
        },
        ZooSpec::seeded("random_ginibre", n, 7),
        ZooSpec::seeded("random_hessenberg", n, 11),
    ]
}

/// Names and one-line descriptions of the available kinds, for the CLI.
pub fn kind_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("shift", "ones on the subdiagonal; start vector e1 is cyclic"),
        ("weighted_shift", "given positive weights on the subdiagonal"),
        ("jordan", "lambda on the diagonal, ones on the subdiagonal"),
        ("diagonal", "given real diagonal; cyclic from the flat vector when entries are distinct"),
        ("random_ginibre", "seeded iid complex Gaussian entries, variance 1/(2n)"),
        ("random_hessenberg", "seeded upper Hessenberg with strictly positive subdiagonal"),
        ("from_file", "operator JSON file {\"n\", \"re\", \"im\"}"),
    ]
}
