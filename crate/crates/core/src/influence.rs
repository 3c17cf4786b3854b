//! First-order influence of training examples through the empirical NTK.
//!
//! Removing example `i` is emulated by one gradient step of weight `-1/n`
//! and learning rate `eta` from the reference snapshot. To first order the
//! output on a target `x_j` then moves by
//!
//! ```text
//! (eta / n) * K(x_i, x_j) * (dl/dw(f_i, y_i) + lambda * dphi_i/df)
//! ```
//!
//! where `K` is the kernel of output gradients. The fairness half of that
//! expression is the pairwise score `S(i, j)`; averaging `dphi_j/df * S(i, j)`
//! over the training set gives the aggregated score `S(i)` used for pruning.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::ndcore::{dot, loss_score_derivative, Label, ModelSnapshot};
use crate::stats;
use crate::surrogates::SurrogateSpec;

/// How the loss-influence column of an [`InfluenceTable`] is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossAggregation {
    /// Mean over every training target, mirroring the fairness score.
    #[default]
    Aggregated,
    /// Self-influence, target `j = i`.
    SelfInfluence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceConfig {
    /// Learning rate of the counterfactual step.
    pub eta: f64,
    /// Regularizer weight on the fairness term.
    pub lambda: f64,
    /// Population size in the `1/n` step weight.
    pub n: usize,
    /// Rows per block when streaming per-example gradients.
    pub tile_size: usize,
    pub loss_aggregation: LossAggregation,
}

impl InfluenceConfig {
    pub fn new(eta: f64, lambda: f64, n: usize) -> Result<Self> {
        let cfg = Self {
            eta,
            lambda,
            n,
            tile_size: 256,
            loss_aggregation: LossAggregation::Aggregated,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.tile_size == 0 {
            return Err(Error::invalid("tile_size must be at least 1"));
        }
        Ok(())
    }

    #[inline]
    fn weight(&self) -> f64 {
        self.eta / self.n as f64
    }
}

/// One labelled example, borrowed from a dataset or built ad hoc.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub y: Label,
    pub z: u32,
}

impl<'a> Example<'a> {
    pub fn new(x: &'a [f64], y: Label, z: u32) -> Self {
        Self { x, y, z }
    }

    pub fn from_dataset(data: &'a Dataset, i: usize) -> Self {
        Self {
            x: data.row(i),
            y: data.label(i),
            z: data.group(i),
        }
    }
}

/// Empirical NTK `K(x_i, x_j) = df(x_i)/dtheta . df(x_j)/dtheta` at the snapshot.
pub fn ntk(snapshot: &ModelSnapshot, xi: &[f64], xj: &[f64]) -> Result<f64> {
    let gi = snapshot.output_gradient(xi)?;
    let gj = snapshot.output_gradient(xj)?;
    Ok(gi.dot(&gj))
}

/// Influence of removing `train` on `f(xj)` without a fairness term.
pub fn influence_unconstrained(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    train: Example<'_>,
    xj: &[f64],
) -> Result<f64> {
    let k = ntk(snapshot, train.x, xj)?;
    let dl = loss_score_derivative(snapshot.params().eval(train.x), train.y);
    Ok(cfg.weight() * k * dl)
}

/// Pairwise fairness score `S(i, j) = lambda (eta/n) K(x_i, x_j) dphi_i/df`.
pub fn fairness_score_pairwise(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    spec: &SurrogateSpec,
    train: Example<'_>,
    xj: &[f64],
) -> Result<f64> {
    let k = ntk(snapshot, train.x, xj)?;
    let c = spec.per_instance_coeff(train.z, train.y, snapshot.params().eval(train.x))?;
    Ok(cfg.lambda * cfg.weight() * k * c)
}

/// Loss influence plus fairness influence. Without a spec this is
/// [`influence_unconstrained`].
pub fn influence_constrained(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    spec: Option<&SurrogateSpec>,
    train: Example<'_>,
    xj: &[f64],
) -> Result<f64> {
    let base = influence_unconstrained(cfg, snapshot, train, xj)?;
    match spec {
        Some(spec) => Ok(base + fairness_score_pairwise(cfg, snapshot, spec, train, xj)?),
        None => Ok(base),
    }
}

/// First-order change of the target's loss when `train` is removed.
pub fn loss_influence(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    spec: Option<&SurrogateSpec>,
    train: Example<'_>,
    target: Example<'_>,
) -> Result<f64> {
    let k = ntk(snapshot, train.x, target.x)?;
    let fi = snapshot.params().eval(train.x);
    let dl_j = loss_score_derivative(snapshot.params().eval(target.x), target.y);
    let mut inner = loss_score_derivative(fi, train.y);
    if let Some(spec) = spec {
        inner += cfg.lambda * spec.per_instance_coeff(train.z, train.y, fi)?;
    }
    Ok(cfg.weight() * dl_j * k * inner)
}

/// Parameters after the step that emulates removing `train`:
/// `theta_0 + (eta/n) grad[l(f_i, y_i) + lambda phi(f, i)]`.
pub fn one_counterfactual_step(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    spec: Option<&SurrogateSpec>,
    train: Example<'_>,
) -> Result<ModelSnapshot> {
    let g = snapshot.output_gradient(train.x)?;
    let fi = snapshot.params().eval(train.x);
    let mut scale = loss_score_derivative(fi, train.y);
    if let Some(spec) = spec {
        scale += cfg.lambda * spec.per_instance_coeff(train.z, train.y, fi)?;
    }
    let tag = format!("{}-counterfactual", snapshot.tag());
    snapshot.stepped(g.as_slice(), cfg.weight() * scale, tag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub index: usize,
    pub z: u32,
    pub y: Label,
    pub fairness_score: f64,
    pub loss_score: f64,
}

/// One record per training example, in dataset order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InfluenceTable {
    pub records: Vec<InfluenceRecord>,
}

impl InfluenceTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn fairness_scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.fairness_score).collect()
    }

    pub fn loss_scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_score).collect()
    }

    /// Builds a table from bare score columns (labels/groups zeroed).
    pub fn from_scores(fairness: &[f64], loss: &[f64]) -> Result<Self> {
        if fairness.len() != loss.len() {
            return Err(Error::Shape {
                what: "loss scores",
                expected: fairness.len(),
                got: loss.len(),
            });
        }
        Ok(Self {
            records: fairness
                .iter()
                .zip(loss)
                .enumerate()
                .map(|(index, (&f, &l))| InfluenceRecord {
                    index,
                    z: 0,
                    y: Label::Pos,
                    fairness_score: f,
                    loss_score: l,
                })
                .collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "index,z,y,fairness_score,loss_score")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.index,
                r.z,
                i8::from(r.y),
                fmt_f64(r.fairness_score),
                fmt_f64(r.loss_score)
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        let mut records = Vec::new();
        for row in reader.deserialize::<InfluenceRecord>() {
            records.push(row.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }
}

/// `S(i)` for every training example plus the loss-influence column.
///
/// Both aggregates factor through a weighted mean gradient,
/// `mean_j S(i, j) c_j = lambda (eta/n) c_i g_i . mean_j(c_j g_j)`, so the
/// kernel is never materialised: one streaming pass accumulates the weighted
/// gradient sums block by block and a second pass takes one dot product per
/// example. Blocks are fixed by `tile_size` and reduced in order, so results
/// do not depend on the number of worker threads.
pub fn aggregated_fairness_score(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    spec: &SurrogateSpec,
    data: &Dataset,
) -> Result<InfluenceTable> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    if data.dim() != snapshot.input_dim() {
        return Err(Error::Shape {
            what: "dataset features",
            expected: snapshot.input_dim(),
            got: data.dim(),
        });
    }
    let n = data.len();
    let p = snapshot.num_params();
    let params = snapshot.params();

    let scores: Vec<f64> = (0..n).map(|i| params.eval(data.row(i))).collect();
    let fair_coeff: Vec<f64> = (0..n)
        .map(|i| spec.per_instance_coeff(data.group(i), data.label(i), scores[i]))
        .collect::<Result<_>>()?;
    let loss_coeff: Vec<f64> = (0..n)
        .map(|i| loss_score_derivative(scores[i], data.label(i)))
        .collect();

    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(cfg.tile_size)
        .map(|s| (s, (s + cfg.tile_size).min(n)))
        .collect();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = blocks
        .par_iter()
        .map(|&(start, end)| {
            let mut fair = vec![0.0; p];
            let mut loss = vec![0.0; p];
            let mut g = vec![0.0; p];
            for j in start..end {
                g.iter_mut().for_each(|v| *v = 0.0);
                params.accumulate_output_gradient(data.row(j), 1.0, &mut g);
                for ((f, l), gv) in fair.iter_mut().zip(loss.iter_mut()).zip(&g) {
                    *f += fair_coeff[j] * gv;
                    *l += loss_coeff[j] * gv;
                }
            }
            (fair, loss)
        })
        .collect();
    let mut fair_mean = vec![0.0; p];
    let mut loss_mean = vec![0.0; p];
    for (f, l) in &partials {
        for k in 0..p {
            fair_mean[k] += f[k];
            loss_mean[k] += l[k];
        }
    }
    let nf = n as f64;
    fair_mean.iter_mut().for_each(|v| *v /= nf);
    loss_mean.iter_mut().for_each(|v| *v /= nf);

    let w = cfg.weight();
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = snapshot.output_gradient_unchecked(data.row(i));
            let fairness_score = cfg.lambda * w * fair_coeff[i] * dot(g.as_slice(), &fair_mean);
            let loss_score = match cfg.loss_aggregation {
                LossAggregation::Aggregated => w * loss_coeff[i] * dot(g.as_slice(), &loss_mean),
                LossAggregation::SelfInfluence => w * loss_coeff[i] * loss_coeff[i] * g.dot(&g),
            };
            InfluenceRecord {
                index: i,
                z: data.group(i),
                y: data.label(i),
                fairness_score,
                loss_score,
            }
        })
        .collect();
    Ok(InfluenceTable { records })
}

/// `S(i)` averaged over an explicit target multiset (indices into `data`),
/// evaluated pair by pair. Used to study how the estimate concentrates as the
/// target set grows.
pub fn fairness_score_over_targets(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    spec: &SurrogateSpec,
    data: &Dataset,
    i: usize,
    targets: &[usize],
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::invalid("target set is empty"));
    }
    let params = snapshot.params();
    let gi = snapshot.output_gradient(data.row(i))?;
    let ci = spec.per_instance_coeff(data.group(i), data.label(i), params.eval(data.row(i)))?;
    let mut total = 0.0;
    for &j in targets {
        let xj = data.row(j);
        let cj = spec.per_instance_coeff(data.group(j), data.label(j), params.eval(xj))?;
        let k = gi.dot(&snapshot.output_gradient_unchecked(xj));
        total += cj * cfg.lambda * cfg.weight() * k * ci;
    }
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderReport {
    pub correlation: f64,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

/// Samples `(train i, target j)` pairs and correlates the predicted influence
/// with the output change after the actual counterfactual step.
pub fn verify_first_order(
    cfg: &InfluenceConfig,
    snapshot: &ModelSnapshot,
    spec: Option<&SurrogateSpec>,
    train: &Dataset,
    targets: &Dataset,
    num_pairs: usize,
    seed: u64,
) -> Result<FirstOrderReport> {
    cfg.validate()?;
    if num_pairs < 2 {
        return Err(Error::invalid("need at least two pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = (0..num_pairs)
        .map(|_| (rng.gen_range(0..train.len()), rng.gen_range(0..targets.len())))
        .collect();
    let results: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ex = Example::from_dataset(train, i);
            let xj = targets.row(j);
            let predicted = influence_constrained(cfg, snapshot, spec, ex, xj)?;
            let moved = one_counterfactual_step(cfg, snapshot, spec, ex)?;
            let actual = moved.forward(xj)? - snapshot.forward(xj)?;
            Ok((predicted, actual))
        })
        .collect::<Result<_>>()?;
    let (predicted, actual): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    let correlation = stats::pearson(&predicted, &actual).ok_or_else(|| {
        Error::DegenerateVariance("predicted or actual influences are constant; the snapshot is uninformative".into())
    })?;
    Ok(FirstOrderReport {
        correlation,
        predicted,
        actual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{Architecture, ModelParams};
    use crate::surrogates::{resolve_direction, SurrogateKind};

    fn affine(w: &[f64], b: f64) -> ModelSnapshot {
        ModelSnapshot::new(ModelParams::affine(w, b).unwrap(), "affine")
    }

    #[test]
    fn affine_kernel_closed_form() {
        let s = affine(&[0.3, -0.2], 0.1);
        assert_eq!(ntk(&s, &[1.0, 2.0], &[3.0, -1.0]).unwrap(), 2.0);
    }

    #[test]
    fn self_kernel_is_squared_norm() {
        let s = ModelSnapshot::new(
            ModelParams::mlp(2, 2, &[0.5, -0.1, 0.3, 0.8], &[0.1, -0.2], &[1.2, -0.7], 0.0).unwrap(),
            "",
        );
        let x = [0.4, 0.9];
        let g = s.output_gradient(&x).unwrap();
        assert_eq!(ntk(&s, &x, &x).unwrap(), g.dot(&g));
        assert!(ntk(&s, &[1.0], &x).is_err());
    }

    #[test]
    fn substitution_examples() {
        // K = 2 on the affine model below
        let s = affine(&[0.0, 0.0], 0.0);
        let (xi, xj) = ([1.0, 2.0], [3.0, -1.0]);
        let cfg = InfluenceConfig::new(0.1, 1.0, 10).unwrap();
        // f = 0, y = +1 gives dl/dw = -0.5
        let ex = Example::new(&xi, Label::Pos, 1);
        assert!((influence_unconstrained(&cfg, &s, ex, &xj).unwrap() - -0.01).abs() < 1e-15);

        let d = Dataset::new(vec![1.0, 2.0, 3.0, -1.0], 2, vec![Label::Pos, Label::Neg], vec![1, 0], None).unwrap();
        let dp = resolve_direction(&s, &d, SurrogateKind::RelaxedDp).unwrap();
        assert!((fairness_score_pairwise(&cfg, &s, &dp, ex, &xj).unwrap() - 0.02).abs() < 1e-15);

        let target = Example::new(&xj, Label::Pos, 0);
        let cfg0 = InfluenceConfig { lambda: 0.0, ..cfg };
        assert!((loss_influence(&cfg0, &s, Some(&dp), ex, target).unwrap() - 0.005).abs() < 1e-15);
        assert_eq!(
            influence_constrained(&cfg0, &s, Some(&dp), ex, &xj).unwrap(),
            influence_unconstrained(&cfg0, &s, ex, &xj).unwrap()
        );
        // coefficient +1 exactly cancels dl/dw = -0.5 when lambda = 0.5
        let half = InfluenceConfig { lambda: 0.5, ..cfg };
        assert_eq!(loss_influence(&half, &s, Some(&dp), ex, target).unwrap(), 0.0);
    }

    #[test]
    fn tpr_negative_example_has_zero_score() {
        let s = ModelSnapshot::new(ModelParams::mlp(1, 1, &[1.0], &[0.5], &[2.0], 0.0).unwrap(), "");
        let d = Dataset::new(vec![1.0, -1.0, 2.0, 0.5], 1, vec![Label::Pos, Label::Neg, Label::Pos, Label::Neg], vec![1, 1, 0, 0], None)
            .unwrap();
        let tpr = resolve_direction(&s, &d, SurrogateKind::EqualTpr).unwrap();
        let cfg = InfluenceConfig::new(0.1, 1.0, 4).unwrap();
        let ex = Example::from_dataset(&d, 1);
        assert_eq!(fairness_score_pairwise(&cfg, &s, &tpr, ex, &[3.0]).unwrap(), 0.0);
        assert_eq!(
            influence_constrained(&cfg, &s, Some(&tpr), ex, &[3.0]).unwrap(),
            influence_unconstrained(&cfg, &s, ex, &[3.0]).unwrap()
        );
    }

    #[test]
    fn zero_eta_step_is_identity_and_delta_matches_definition() {
        let s = affine(&[0.4, -0.3], 0.2);
        let x = [1.0, 2.0];
        let ex = Example::new(&x, Label::Neg, 0);
        let cfg = InfluenceConfig {
            eta: 0.0,
            lambda: 1.0,
            n: 5,
            tile_size: 4,
            loss_aggregation: LossAggregation::Aggregated,
        };
        // eta = 0 bypasses validation on purpose: the step itself is defined.
        let moved = one_counterfactual_step(&cfg, &s, None, ex).unwrap();
        assert_eq!(moved.params(), s.params());

        let cfg = InfluenceConfig::new(0.5, 1.0, 5).unwrap();
        let moved = one_counterfactual_step(&cfg, &s, None, ex).unwrap();
        let dl = loss_score_derivative(s.forward(&x).unwrap(), Label::Neg);
        let g = s.output_gradient(&x).unwrap();
        for k in 0..3 {
            let delta = moved.params().as_slice()[k] - s.params().as_slice()[k];
            assert!((delta - 0.1 * dl * g.as_slice()[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn table_csv_round_trip() {
        let t = InfluenceTable::from_scores(&[0.1, -2.5e-7], &[1.0 / 3.0, 0.0]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        t.save_csv(f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("index,z,y,fairness_score,loss_score\n0,0,1,1.0000000000000001e-1,"));
        assert_eq!(InfluenceTable::load_csv(f.path()).unwrap(), t);
    }

    #[test]
    fn empty_target_set_rejected() {
        let s = affine(&[1.0], 0.0);
        let d = Dataset::new(vec![1.0, -1.0], 1, vec![Label::Pos, Label::Neg], vec![1, 0], None).unwrap();
        let dp = resolve_direction(&s, &d, SurrogateKind::RelaxedDp).unwrap();
        let cfg = InfluenceConfig::new(0.1, 1.0, 2).unwrap();
        assert!(fairness_score_over_targets(&cfg, &s, &dp, &d, 0, &[]).is_err());
    }

    #[test]
    fn verifier_rejects_constant_predictions() {
        let s = ModelSnapshot::new(ModelParams::zeros(Architecture::Affine { d: 1 }), "");
        let d = Dataset::new(vec![1.0, 1.0, 1.0], 1, vec![Label::Pos; 3], vec![1, 0, 0], None).unwrap();
        let cfg = InfluenceConfig::new(0.1, 1.0, 3).unwrap();
        let e = verify_first_order(&cfg, &s, None, &d, &d, 10, 0).unwrap_err();
        assert!(matches!(e, Error::DegenerateVariance(_)));
        assert!(verify_first_order(&cfg, &s, None, &d, &d, 1, 0).is_err());
    }
}
