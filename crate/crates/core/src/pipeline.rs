//! Evaluation metrics and the prune-and-retrain experiment.
//!
//! A sweep splits the data, pretrains on the training part, scores every
//! training example at the pretrained snapshot, and then for each strategy and
//! keep fraction removes examples in the strategy's order and retrains with the
//! relaxed demographic-parity regularizer. Accuracy and the acceptance-rate gap
//! are measured on the held-out part.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, split, Dataset};
use crate::error::{Error, Result};
use crate::influence::{aggregated_fairness_score, InfluenceConfig, InfluenceTable, LossAggregation};
use crate::ndcore::{Label, ModelSnapshot};
use crate::stats;
use crate::surrogates::{SurrogateKind, SurrogateSpec};
use crate::training::{train, TrainConfig};

pub const DEFAULT_FRACTIONS: [f64; 8] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    ByFairness,
    ByAccuracy,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Random, StrategyKind::ByFairness, StrategyKind::ByAccuracy];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::ByFairness => "by_fairness",
            StrategyKind::ByAccuracy => "by_accuracy",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(StrategyKind::Random),
            "by_fairness" | "fairness" => Ok(StrategyKind::ByFairness),
            "by_accuracy" | "accuracy" => Ok(StrategyKind::ByAccuracy),
            other => Err(Error::invalid(format!(
                "unknown prune strategy `{other}`; expected one of random, by_fairness, by_accuracy"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PruneStrategy {
    pub kind: StrategyKind,
    /// Reverses the score ordering of the two scored strategies.
    pub order_flip: bool,
}

impl PruneStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, order_flip: false }
    }
}

/// Removal order over table positions, first entry removed first.
///
/// `ByFairness` removes ascending `|fairness_score|`, `ByAccuracy` descending
/// `|loss_score|`; `order_flip` swaps the direction. Ties go to the lower index.
pub fn rank_for_prune(strategy: PruneStrategy, table: &InfluenceTable, seed: u64) -> Result<Vec<usize>> {
    if table.is_empty() {
        return Err(Error::invalid("influence table is empty"));
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    let key: fn(&crate::influence::InfluenceRecord) -> f64;
    let mut ascending;
    match strategy.kind {
        StrategyKind::Random => {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            return Ok(order);
        }
        StrategyKind::ByFairness => {
            key = |r| r.fairness_score.abs();
            ascending = true;
        }
        StrategyKind::ByAccuracy => {
            key = |r| r.loss_score.abs();
            ascending = false;
        }
    }
    if strategy.order_flip {
        ascending = !ascending;
    }
    let keys: Vec<f64> = table.records.iter().map(key).collect();
    order.sort_by(|&a, &b| {
        let c = keys[a].total_cmp(&keys[b]);
        let c = if ascending { c } else { c.reverse() };
        c.then(a.cmp(&b))
    });
    Ok(order)
}

/// Number of examples removed when keeping `keep_fraction` of `n`.
pub fn removal_count(n: usize, keep_fraction: f64) -> usize {
    let raw = n as f64 * (1.0 - keep_fraction);
    // absorb representation error such as 10 * (1 - 0.7) = 3.0000000000000004
    let r = raw.round();
    if (raw - r).abs() < 1e-9 {
        r as usize
    } else {
        raw.ceil() as usize
    }
}

/// Drops the first `ceil(n (1 - keep_fraction))` entries of `removal_order`;
/// survivors keep their original relative order.
pub fn prune(data: &Dataset, removal_order: &[usize], keep_fraction: f64) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep_fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let n = data.len();
    if removal_order.len() != n {
        return Err(Error::Shape {
            what: "removal order",
            expected: n,
            got: removal_order.len(),
        });
    }
    let mut keep = vec![true; n];
    for &i in &removal_order[..removal_count(n, keep_fraction).min(n)] {
        if i >= n || !keep[i] {
            return Err(Error::invalid(format!("removal order is not a permutation (index {i})")));
        }
        keep[i] = false;
    }
    let survivors: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if survivors.is_empty() {
        return Err(Error::invalid(format!("keep_fraction {keep_fraction} leaves no examples")));
    }
    data.subset(&survivors)
}

/// Fraction of examples whose predicted label equals the true label.
pub fn accuracy(snapshot: &ModelSnapshot, data: &Dataset) -> Result<f64> {
    check_dims(snapshot, data)?;
    let correct = (0..data.len())
        .filter(|&i| Label::predict(snapshot.params().eval(data.row(i))) == data.label(i))
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Per-group acceptance rate `Pr(f >= 0 | z)`.
pub fn acceptance_rates(snapshot: &ModelSnapshot, data: &Dataset) -> Result<Vec<f64>> {
    check_dims(snapshot, data)?;
    let m = data.num_groups();
    let mut accepted = vec![0usize; m];
    let mut total = vec![0usize; m];
    for i in 0..data.len() {
        let z = data.group(i) as usize;
        total[z] += 1;
        if snapshot.params().eval(data.row(i)) >= 0.0 {
            accepted[z] += 1;
        }
    }
    if let Some(z) = total.iter().position(|&t| t == 0) {
        return Err(Error::EmptyCell(format!("(z={z}) has no examples")));
    }
    Ok(accepted.iter().zip(&total).map(|(&a, &t)| a as f64 / t as f64).collect())
}

/// Largest acceptance-rate gap over all pairs of groups.
pub fn fairness_violation(snapshot: &ModelSnapshot, data: &Dataset) -> Result<f64> {
    let rates = acceptance_rates(snapshot, data)?;
    if rates.len() < 2 {
        return Err(Error::invalid("fairness violation needs at least two groups"));
    }
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(hi - lo)
}

/// Empirical rates for one group; `None` marks an empty conditioning cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub group: u32,
    pub acceptance: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

pub fn group_rates(snapshot: &ModelSnapshot, data: &Dataset) -> Result<Vec<GroupRates>> {
    check_dims(snapshot, data)?;
    let m = data.num_groups();
    // [group][label] -> (accepted, total)
    let mut counts = vec![[(0usize, 0usize); 2]; m];
    for i in 0..data.len() {
        let cell = &mut counts[data.group(i) as usize][data.label(i).is_pos() as usize];
        cell.1 += 1;
        if snapshot.params().eval(data.row(i)) >= 0.0 {
            cell.0 += 1;
        }
    }
    let ratio = |a: usize, t: usize| (t > 0).then(|| a as f64 / t as f64);
    Ok(counts
        .iter()
        .enumerate()
        .map(|(z, [neg, pos])| GroupRates {
            group: z as u32,
            acceptance: ratio(neg.0 + pos.0, neg.1 + pos.1),
            tpr: ratio(pos.0, pos.1),
            fpr: ratio(neg.0, neg.1),
        })
        .collect())
}

fn check_dims(snapshot: &ModelSnapshot, data: &Dataset) -> Result<()> {
    if snapshot.input_dim() != data.dim() {
        return Err(Error::Shape {
            what: "dataset features",
            expected: snapshot.input_dim(),
            got: data.dim(),
        });
    }
    Ok(())
}

/// Which model scores the training set before pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pretrain {
    /// Trained with the scoring surrogate as regularizer.
    #[default]
    Regularized,
    /// Plain empirical risk minimization.
    Erm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub strategies: Vec<PruneStrategy>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Surrogate used for scoring and for the regularized pretrain.
    pub surrogate: SurrogateKind,
    /// Weight of the relaxed-DP regularizer when retraining.
    pub lambda: f64,
    pub train_fraction: f64,
    pub pretrain: Pretrain,
    pub tile_size: usize,
    pub loss_aggregation: LossAggregation,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            strategies: StrategyKind::ALL.iter().map(|&k| PruneStrategy::new(k)).collect(),
            seeds: vec![0],
            train: TrainConfig::default(),
            surrogate: SurrogateKind::RelaxedDp,
            lambda: 1.0,
            train_fraction: 0.8,
            pretrain: Pretrain::Regularized,
            tile_size: 256,
            loss_aggregation: LossAggregation::Aggregated,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::config("fractions", "at least one keep fraction is required"));
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::config("fractions", format!("{f} is outside (0, 1]")));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("strategies", "at least one strategy is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed", "at least one seed is required"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be >= 0 and finite"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        if self.tile_size == 0 {
            return Err(Error::config("tile_size", "must be at least 1"));
        }
        self.train.validate()
    }
}

/// One `(strategy, fraction, seed)` cell. Metrics are `None` when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: StrategyKind,
    pub order_flip: bool,
    pub keep_fraction: f64,
    pub seed: u64,
    pub test_acc: Option<f64>,
    pub dp_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub strategy: StrategyKind,
    pub order_flip: bool,
    pub keep_fraction: f64,
    /// Seeds that produced metrics.
    pub runs: usize,
    pub test_acc_mean: Option<f64>,
    pub test_acc_std: Option<f64>,
    pub dp_violation_mean: Option<f64>,
    pub dp_violation_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepReport {
    fn from_rows(rows: Vec<SweepRow>) -> Self {
        let mut cells: BTreeMap<(StrategyKind, bool, u64), (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in &rows {
            let e = cells
                .entry((r.strategy, r.order_flip, r.keep_fraction.to_bits()))
                .or_insert((r.keep_fraction, Vec::new(), Vec::new()));
            if let (Some(a), Some(v)) = (r.test_acc, r.dp_violation) {
                e.1.push(a);
                e.2.push(v);
            }
        }
        let summary = cells
            .into_iter()
            .map(|((strategy, order_flip, _), (keep_fraction, acc, viol))| {
                let some = |xs: &[f64], f: fn(&[f64]) -> f64| (!xs.is_empty()).then(|| f(xs));
                SweepSummary {
                    strategy,
                    order_flip,
                    keep_fraction,
                    runs: acc.len(),
                    test_acc_mean: some(&acc, stats::mean),
                    test_acc_std: some(&acc, stats::std_dev),
                    dp_violation_mean: some(&viol, stats::mean),
                    dp_violation_std: some(&viol, stats::std_dev),
                }
            })
            .collect();
        Self { rows, summary }
    }

    /// Summary entry for a strategy (without order flip) and fraction.
    pub fn cell(&self, strategy: StrategyKind, keep_fraction: f64) -> Option<&SweepSummary> {
        self.summary
            .iter()
            .find(|s| s.strategy == strategy && !s.order_flip && s.keep_fraction == keep_fraction)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        writeln!(w, "strategy,keep_fraction,seed,test_acc,dp_violation")?;
        for r in &self.rows {
            let name = if r.order_flip {
                format!("{}_flipped", r.strategy)
            } else {
                r.strategy.to_string()
            };
            writeln!(
                w,
                "{},{},{},{},{}",
                name,
                r.keep_fraction,
                r.seed,
                opt(r.test_acc),
                opt(r.dp_violation)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(csv_path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        let mut j = BufWriter::new(File::create(json_path)?);
        serde_json::to_writer_pretty(&mut j, self)?;
        writeln!(j)?;
        j.flush()?;
        Ok(())
    }
}

/// Pretrained snapshot and scores for one seed.
#[derive(Debug, Clone)]
pub struct ScoredSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub snapshot: ModelSnapshot,
    pub table: InfluenceTable,
}

/// Split, pretrain and score for one seed.
pub fn score_split(data: &Dataset, cfg: &SweepConfig, seed: u64) -> Result<ScoredSplit> {
    let (train_set, test_set) = split(data, cfg.train_fraction, seed)?;
    let train_cfg = TrainConfig { seed, lambda: cfg.lambda, ..cfg.train.clone() };
    let spec = SurrogateSpec::new(cfg.surrogate, cfg.lambda)?;
    let reg = match cfg.pretrain {
        Pretrain::Regularized => Some(&spec),
        Pretrain::Erm => None,
    };
    let (snapshot, _) = train(&train_set, None, &train_cfg, reg)?;
    let resolved = spec.resolve(&snapshot, &train_set)?;
    let icfg = InfluenceConfig {
        eta: cfg.train.learning_rate,
        lambda: cfg.lambda,
        n: train_set.len(),
        tile_size: cfg.tile_size,
        loss_aggregation: cfg.loss_aggregation,
    };
    let table = aggregated_fairness_score(&icfg, &snapshot, &resolved, &train_set)?;
    Ok(ScoredSplit {
        train: train_set,
        test: test_set,
        snapshot,
        table,
    })
}

/// Prunes by `strategy`, retrains with the relaxed-DP regularizer and evaluates
/// on the held-out split.
pub fn run_cell(scored: &ScoredSplit, cfg: &SweepConfig, strategy: PruneStrategy, keep_fraction: f64, seed: u64) -> Result<(f64, f64)> {
    let order = rank_for_prune(strategy, &scored.table, seed)?;
    let pruned = prune(&scored.train, &order, keep_fraction)?;
    let train_cfg = TrainConfig { seed, lambda: cfg.lambda, ..cfg.train.clone() };
    let dp = SurrogateSpec::new(SurrogateKind::RelaxedDp, cfg.lambda)?;
    let (model, _) = train(&pruned, None, &train_cfg, Some(&dp))?;
    Ok((accuracy(&model, &scored.test)?, fairness_violation(&model, &scored.test)?))
}

/// Runs the full `(seed, strategy, fraction)` grid. Cells run in parallel and
/// are reported in grid order; a cell that fails is kept with empty metrics.
pub fn run_sweep(data: &Dataset, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let scored: Vec<ScoredSplit> = cfg
        .seeds
        .par_iter()
        .map(|&seed| score_split(data, cfg, seed))
        .collect::<Result<_>>()?;
    let mut grid = Vec::new();
    for (s, &seed) in cfg.seeds.iter().enumerate() {
        for &strategy in &cfg.strategies {
            for &fraction in &cfg.fractions {
                grid.push((s, seed, strategy, fraction));
            }
        }
    }
    let rows = grid
        .par_iter()
        .map(|&(s, seed, strategy, keep_fraction)| {
            let outcome = run_cell(&scored[s], cfg, strategy, keep_fraction, seed);
            let (test_acc, dp_violation, error) = match outcome {
                Ok((a, v)) => (Some(a), Some(v), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            SweepRow {
                strategy: strategy.kind,
                order_flip: strategy.order_flip,
                keep_fraction,
                seed,
                test_acc,
                dp_violation,
                error,
            }
        })
        .collect();
    Ok(SweepReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::ModelParams;

    fn table(f: &[f64], l: &[f64]) -> InfluenceTable {
        InfluenceTable::from_scores(f, l).unwrap()
    }

    fn affine(w: f64, b: f64) -> ModelSnapshot {
        ModelSnapshot::new(ModelParams::affine(&[w], b).unwrap(), "")
    }

    fn line(xs: &[f64], ys: &[i8], zs: &[u32]) -> Dataset {
        Dataset::new(
            xs.to_vec(),
            1,
            ys.iter().map(|&y| Label::try_from(y).unwrap()).collect(),
            zs.to_vec(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn rank_examples() {
        let t = table(&[0.5, -0.1, 0.9], &[-0.5, 0.1, 0.9]);
        let fair = PruneStrategy::new(StrategyKind::ByFairness);
        let acc = PruneStrategy::new(StrategyKind::ByAccuracy);
        assert_eq!(rank_for_prune(fair, &t, 0).unwrap(), vec![1, 0, 2]);
        assert_eq!(rank_for_prune(acc, &t, 0).unwrap(), vec![2, 0, 1]);
        let flipped = PruneStrategy { order_flip: true, ..acc };
        assert_eq!(rank_for_prune(flipped, &t, 0).unwrap(), vec![1, 0, 2]);
        let tie = table(&[0.3, -0.3, 0.3], &[1.0, 1.0, -1.0]);
        assert_eq!(rank_for_prune(fair, &tie, 0).unwrap(), vec![0, 1, 2]);
        assert_eq!(rank_for_prune(acc, &tie, 0).unwrap(), vec![0, 1, 2]);
        assert!(rank_for_prune(fair, &InfluenceTable::default(), 0).is_err());
    }

    #[test]
    fn random_rank_is_seeded_permutation() {
        let t = table(&[0.0; 50], &[0.0; 50]);
        let r = PruneStrategy::new(StrategyKind::Random);
        let a = rank_for_prune(r, &t, 4).unwrap();
        assert_eq!(a, rank_for_prune(r, &t, 4).unwrap());
        assert_ne!(a, rank_for_prune(r, &t, 5).unwrap());
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn prune_counts() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let d = line(&xs, &[1; 10], &[0; 10]);
        let order: Vec<usize> = (0..10).collect();
        assert_eq!(prune(&d, &order, 1.0).unwrap(), d);
        let kept = prune(&d, &order, 0.7).unwrap();
        assert_eq!(kept.features(), &xs[3..]);
        let reversed: Vec<usize> = (0..10).rev().collect();
        assert_eq!(prune(&d, &reversed, 0.25).unwrap().features(), &[0.0, 1.0]);
        assert!(prune(&d, &order, 0.0).is_err());
        assert!(prune(&d, &order, 0.01).is_err());
        assert!(prune(&d, &[0, 0, 1, 2, 3, 4, 5, 6, 7, 8], 0.5).is_err());
        assert_eq!(removal_count(10, 0.7), 3);
        assert_eq!(removal_count(10, 0.75), 3);
        assert_eq!(removal_count(3, 0.5), 2);
    }

    #[test]
    fn violation_counts() {
        let s = affine(1.0, 0.0);
        let d = line(&[1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0], &[1; 8], &[0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(fairness_violation(&s, &d).unwrap(), 0.25);
        assert_eq!(fairness_violation(&affine(0.0, 1.0), &d).unwrap(), 0.0);
        let empty = Dataset::new(vec![1.0, 2.0], 1, vec![Label::Pos; 2], vec![0, 0], Some(2)).unwrap();
        assert!(matches!(fairness_violation(&s, &empty), Err(Error::EmptyCell(_))));
    }

    #[test]
    fn rates_and_accuracy_by_hand() {
        // group 0: (x, y) = (2,+) (-1,+) (1,-) (-3,-); group 1: (1,+) (2,+) (-1,-) (0.5,-)
        let d = line(
            &[2.0, -1.0, 1.0, -3.0, 1.0, 2.0, -1.0, 0.5],
            &[1, 1, -1, -1, 1, 1, -1, -1],
            &[0, 0, 0, 0, 1, 1, 1, 1],
        );
        let s = affine(1.0, 0.0);
        let r = group_rates(&s, &d).unwrap();
        assert_eq!(r[0].tpr, Some(0.5));
        assert_eq!(r[0].fpr, Some(0.5));
        assert_eq!(r[0].acceptance, Some(0.5));
        assert_eq!(r[1].tpr, Some(1.0));
        assert_eq!(r[1].fpr, Some(0.5));
        assert_eq!(r[1].acceptance, Some(0.75));
        assert_eq!(accuracy(&s, &d).unwrap(), 5.0 / 8.0);

        let all = group_rates(&affine(0.0, 0.0), &d).unwrap();
        assert!(all.iter().all(|g| g.tpr == Some(1.0) && g.fpr == Some(1.0) && g.acceptance == Some(1.0)));
        assert_eq!(accuracy(&affine(0.0, 0.0), &d).unwrap(), 0.5);

        let only_pos = line(&[1.0, 2.0], &[1, 1], &[0, 1]);
        assert_eq!(group_rates(&s, &only_pos).unwrap()[0].fpr, None);
    }

    #[test]
    fn perfect_fit_rates() {
        let d = line(&[1.0, 2.0, -1.0, -2.0], &[1, 1, -1, -1], &[0, 1, 0, 1]);
        let s = affine(1.0, 0.0);
        assert_eq!(accuracy(&s, &d).unwrap(), 1.0);
        for g in group_rates(&s, &d).unwrap() {
            assert_eq!((g.tpr, g.fpr), (Some(1.0), Some(0.0)));
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("by-fairness".parse::<StrategyKind>().unwrap(), StrategyKind::ByFairness);
        assert_eq!("RANDOM".parse::<StrategyKind>().unwrap(), StrategyKind::Random);
        let e = "best".parse::<StrategyKind>().unwrap_err().to_string();
        assert!(e.contains("by_accuracy"));
    }

    #[test]
    fn sweep_validation_names_key() {
        let cfg = SweepConfig { fractions: vec![1.5], ..Default::default() };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "fractions"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn summary_skips_failed_cells() {
        let row = |seed, acc: Option<f64>| SweepRow {
            strategy: StrategyKind::Random,
            order_flip: false,
            keep_fraction: 0.5,
            seed,
            test_acc: acc,
            dp_violation: acc,
            error: acc.is_none().then(|| "boom".to_string()),
        };
        let r = SweepReport::from_rows(vec![row(0, Some(0.5)), row(1, None), row(2, Some(0.7))]);
        let s = r.cell(StrategyKind::Random, 0.5).unwrap();
        assert_eq!(s.runs, 2);
        assert!((s.test_acc_mean.unwrap() - 0.6).abs() < 1e-12);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("random,0.5,1,,\n"));
    }
}
