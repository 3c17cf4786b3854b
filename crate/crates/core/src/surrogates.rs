//! Decomposable fairness surrogates.
//!
//! Every surrogate here is an average of per-instance terms,
//! `phi(f) = (1/n) sum_i phi(f, i)`, so its effect on one example reduces to
//! a scalar coefficient `d phi(f, i) / d f` evaluated at that example's score.
//! The absolute values in the relaxed and covariance measures are removed by
//! resolving a sign at a reference snapshot; that sign stays frozen until the
//! spec is resolved again.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ndcore::{FlatGrad, Label, ModelSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    #[serde(rename = "dp")]
    RelaxedDp,
    #[serde(rename = "tpr")]
    EqualTpr,
    #[serde(rename = "fpr")]
    EqualFpr,
    #[serde(rename = "eo")]
    EqualOdds,
    #[serde(rename = "cov")]
    Covariance,
    Mine,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 6] = [
        SurrogateKind::RelaxedDp,
        SurrogateKind::EqualTpr,
        SurrogateKind::EqualFpr,
        SurrogateKind::EqualOdds,
        SurrogateKind::Covariance,
        SurrogateKind::Mine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::RelaxedDp => "dp",
            SurrogateKind::EqualTpr => "tpr",
            SurrogateKind::EqualFpr => "fpr",
            SurrogateKind::EqualOdds => "eo",
            SurrogateKind::Covariance => "cov",
            SurrogateKind::Mine => "mine",
        }
    }

    /// Kinds defined by a difference between the two groups.
    pub fn is_relaxed(self) -> bool {
        matches!(
            self,
            SurrogateKind::RelaxedDp | SurrogateKind::EqualTpr | SurrogateKind::EqualFpr | SurrogateKind::EqualOdds
        )
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        SurrogateKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| {
                let valid: Vec<&str> = SurrogateKind::ALL.iter().map(|k| k.name()).collect();
                Error::invalid(format!("unknown surrogate `{s}`; valid kinds: {}", valid.join(", ")))
            })
    }
}

/// Score function `g(w, z)` of the mutual-information surrogate, with its
/// analytic derivative in `w`.
pub trait Critic: fmt::Debug + Send + Sync {
    fn value(&self, w: f64, z: u32) -> f64;
    fn dw(&self, w: f64, z: u32) -> f64;
}

/// `g(w, z) = z * w`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearCritic;

impl Critic for LinearCritic {
    fn value(&self, w: f64, z: u32) -> f64 {
        f64::from(z) * w
    }

    fn dw(&self, _w: f64, z: u32) -> f64 {
        f64::from(z)
    }
}

/// Training-set statistics captured when a spec is resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    pub zbar: f64,
    /// `cell_counts[z] = [count(y = -1), count(y = +1)]`.
    pub cell_counts: Vec<[usize; 2]>,
    /// Empirical `Pr(z = a)`.
    pub group_freq: Vec<f64>,
    /// `E[f * 1[z = a]]`.
    pub group_score_mass: Vec<f64>,
    /// `E[f * 1[z = a, y = b]]`, indexed like `cell_counts`.
    pub cell_score_mass: Vec<[f64; 2]>,
}

impl GroupStats {
    fn collect(data: &Dataset, scores: &[f64]) -> Self {
        let n = data.len();
        let m = data.num_groups();
        let mut cell_counts = vec![[0usize; 2]; m];
        let mut cell_score_mass = vec![[0.0f64; 2]; m];
        for (i, &f) in scores.iter().enumerate() {
            let z = data.group(i) as usize;
            let b = usize::from(data.label(i).is_pos());
            cell_counts[z][b] += 1;
            cell_score_mass[z][b] += f;
        }
        let nf = n as f64;
        for cell in &mut cell_score_mass {
            cell[0] /= nf;
            cell[1] /= nf;
        }
        let group_freq = cell_counts.iter().map(|c| (c[0] + c[1]) as f64 / nf).collect();
        let group_score_mass = cell_score_mass.iter().map(|c| c[0] + c[1]).collect();
        Self {
            n,
            zbar: data.mean_group(),
            cell_counts,
            group_freq,
            group_score_mass,
            cell_score_mass,
        }
    }

    pub fn cell(&self, z: u32, y: Label) -> usize {
        self.cell_counts
            .get(z as usize)
            .map_or(0, |c| c[usize::from(y.is_pos())])
    }
}

#[inline]
fn sign_of(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `alpha_z = 1[z = 1] - 1[z = 0]`.
#[inline]
fn alpha(z: u32) -> f64 {
    if z == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Signs that remove the absolute values, one per difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Directions {
    pub dp: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub cov: f64,
}

#[derive(Debug, Clone)]
struct Resolution {
    signs: Directions,
    stats: GroupStats,
}

/// A surrogate kind, its regularizer weight and (once resolved) the frozen
/// direction signs and group statistics.
#[derive(Debug, Clone)]
pub struct SurrogateSpec {
    kind: SurrogateKind,
    lambda: f64,
    critic: Arc<dyn Critic>,
    resolution: Option<Resolution>,
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self {
            kind,
            lambda,
            critic: Arc::new(LinearCritic),
            resolution: None,
        })
    }

    /// Replaces the mutual-information critic (ignored by other kinds).
    pub fn with_critic(mut self, critic: Arc<dyn Critic>) -> Self {
        self.critic = critic;
        self.resolution = None;
        self
    }

    pub fn kind(&self) -> SurrogateKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_resolved(&self) -> bool {
        self.resolution.is_some()
    }

    pub fn directions(&self) -> Result<Directions> {
        Ok(self.resolved()?.signs)
    }

    pub fn stats(&self) -> Result<&GroupStats> {
        Ok(&self.resolved()?.stats)
    }

    fn resolved(&self) -> Result<&Resolution> {
        self.resolution.as_ref().ok_or(Error::Unresolved)
    }

    /// Resolves signs and statistics at `snapshot` over `data`.
    pub fn resolve(&self, snapshot: &ModelSnapshot, data: &Dataset) -> Result<Self> {
        if snapshot.input_dim() != data.dim() {
            return Err(Error::Shape {
                what: "dataset features",
                expected: snapshot.input_dim(),
                got: data.dim(),
            });
        }
        let scores: Vec<f64> = (0..data.len()).map(|i| snapshot.params().eval(data.row(i))).collect();
        self.resolve_with_scores(data, &scores)
    }

    /// Same as [`resolve`](Self::resolve) with precomputed model scores.
    pub fn resolve_with_scores(&self, data: &Dataset, scores: &[f64]) -> Result<Self> {
        if scores.len() != data.len() {
            return Err(Error::Shape {
                what: "score vector",
                expected: data.len(),
                got: scores.len(),
            });
        }
        if self.kind.is_relaxed() && data.num_groups() > 2 {
            return Err(Error::NonBinaryGroups {
                kind: self.kind.name(),
                groups: data.num_groups(),
            });
        }
        let stats = GroupStats::collect(data, scores);
        let required: &[(u32, Option<Label>)] = match self.kind {
            SurrogateKind::RelaxedDp => &[(0, None), (1, None)],
            SurrogateKind::EqualTpr => &[(0, Some(Label::Pos)), (1, Some(Label::Pos))],
            SurrogateKind::EqualFpr => &[(0, Some(Label::Neg)), (1, Some(Label::Neg))],
            SurrogateKind::EqualOdds => &[
                (0, Some(Label::Pos)),
                (1, Some(Label::Pos)),
                (0, Some(Label::Neg)),
                (1, Some(Label::Neg)),
            ],
            SurrogateKind::Covariance | SurrogateKind::Mine => &[],
        };
        for &(z, y) in required {
            let count = match y {
                Some(y) => stats.cell(z, y),
                None => stats.cell(z, Label::Neg) + stats.cell(z, Label::Pos),
            };
            if count == 0 {
                return Err(Error::EmptyCell(match y {
                    Some(y) => format!("(z={z}, y={}) required by surrogate {}", i8::from(y), self.kind),
                    None => format!("(z={z}) required by surrogate {}", self.kind),
                }));
            }
        }

        let mass = |z: usize, b: Option<usize>| -> f64 {
            match (stats.cell_score_mass.get(z), b) {
                (Some(c), Some(b)) => c[b],
                (Some(c), None) => c[0] + c[1],
                (None, _) => 0.0,
            }
        };
        let zbar = stats.zbar;
        let cov: f64 = scores
            .iter()
            .zip(data.groups())
            .map(|(&f, &z)| (f64::from(z) - zbar) * f)
            .sum();
        let signs = Directions {
            dp: sign_of(mass(1, None) - mass(0, None)),
            tpr: sign_of(mass(1, Some(1)) - mass(0, Some(1))),
            fpr: sign_of(mass(1, Some(0)) - mass(0, Some(0))),
            cov: sign_of(cov),
        };
        Ok(Self {
            kind: self.kind,
            lambda: self.lambda,
            critic: Arc::clone(&self.critic),
            resolution: Some(Resolution { signs, stats }),
        })
    }

    /// `d phi(f, i) / d f` at score `w` for an example with group `z` and label `y`.
    pub fn per_instance_coeff(&self, z: u32, y: Label, w: f64) -> Result<f64> {
        let r = self.resolved()?;
        Ok(coeff(self.kind, r, self.critic.as_ref(), z, y, w))
    }

    /// The per-instance term `phi(f, i)` itself.
    pub fn instance_term(&self, z: u32, y: Label, w: f64) -> Result<f64> {
        let r = self.resolved()?;
        Ok(match self.kind {
            SurrogateKind::Mine => {
                let critic = self.critic.as_ref();
                let logs: Vec<f64> = (0..r.stats.group_freq.len() as u32)
                    .map(|a| critic.value(w, a))
                    .collect();
                let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean_exp: f64 = logs
                    .iter()
                    .zip(&r.stats.group_freq)
                    .map(|(g, p)| p * (g - peak).exp())
                    .sum();
                critic.value(w, z) - (peak + mean_exp.ln())
            }
            _ => coeff(self.kind, r, self.critic.as_ref(), z, y, w) * w,
        })
    }

    /// `phi(f) = (1/n) sum_i phi(f, i)` over `data` at `snapshot`.
    pub fn surrogate_value(&self, snapshot: &ModelSnapshot, data: &Dataset) -> Result<f64> {
        if snapshot.input_dim() != data.dim() {
            return Err(Error::Shape {
                what: "dataset features",
                expected: snapshot.input_dim(),
                got: data.dim(),
            });
        }
        let scores: Vec<f64> = (0..data.len()).map(|i| snapshot.params().eval(data.row(i))).collect();
        self.value_from_scores(data, &scores)
    }

    pub(crate) fn value_from_scores(&self, data: &Dataset, scores: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (i, &f) in scores.iter().enumerate() {
            total += self.instance_term(data.group(i), data.label(i), f)?;
        }
        Ok(total / data.len() as f64)
    }

    /// `grad_theta phi(f, i) = coeff_i * df(x_i)/dtheta`.
    pub fn gradient_contribution(&self, snapshot: &ModelSnapshot, data: &Dataset, i: usize) -> Result<FlatGrad> {
        let x = data.row(i);
        let g = snapshot.output_gradient(x)?;
        let c = self.per_instance_coeff(data.group(i), data.label(i), snapshot.params().eval(x))?;
        Ok(g.scaled(c))
    }
}

fn coeff(kind: SurrogateKind, r: &Resolution, critic: &dyn Critic, z: u32, y: Label, w: f64) -> f64 {
    let s = &r.signs;
    match kind {
        SurrogateKind::RelaxedDp => s.dp * alpha(z),
        SurrogateKind::EqualTpr => tpr_coeff(s, z, y),
        SurrogateKind::EqualFpr => fpr_coeff(s, z, y),
        SurrogateKind::EqualOdds => tpr_coeff(s, z, y) + fpr_coeff(s, z, y),
        SurrogateKind::Covariance => s.cov * (f64::from(z) - r.stats.zbar),
        SurrogateKind::Mine => {
            let mean: f64 = r
                .stats
                .group_freq
                .iter()
                .enumerate()
                .map(|(a, p)| p * critic.dw(w, a as u32))
                .sum();
            critic.dw(w, z) - mean
        }
    }
}

#[inline]
fn tpr_coeff(s: &Directions, z: u32, y: Label) -> f64 {
    if y.is_pos() {
        s.tpr * alpha(z)
    } else {
        0.0
    }
}

#[inline]
fn fpr_coeff(s: &Directions, z: u32, y: Label) -> f64 {
    if y.is_pos() {
        0.0
    } else {
        s.fpr * alpha(z)
    }
}

/// Builds a spec with the default regularizer weight and resolves it.
pub fn resolve_direction(snapshot: &ModelSnapshot, data: &Dataset, kind: SurrogateKind) -> Result<SurrogateSpec> {
    SurrogateSpec::new(kind, 1.0)?.resolve(snapshot, data)
}
