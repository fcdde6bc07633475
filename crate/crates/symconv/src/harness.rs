//! Experiment harness: trains the digit classifier across conditions and
//! seeds, logs per-epoch and per-1000-update metrics, aggregates results
//! into a summary table, and compares conditions with the rank-sum test at
//! the 5% level.

use crate::data::{PreparedDataset, PreparedSplits};
use crate::error::{Error, Result};
use crate::network::{count_network_parameters, cross_entropy, Condition, Network, ParamCounts};
use crate::stats::wilcoxon_rank_sum;
use crate::symmetry::T2bMode;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Significance level for declaring two conditions different.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr: f64,
    pub epochs: usize,
    /// 1 = per-example updates; larger batches use mean-reduced gradients.
    pub batch_size: usize,
    pub split_fraction: f64,
    pub t2b_mode: T2bMode,
    /// Emit a running-training-metrics row every this many updates.
    pub log_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.001,
            epochs: 5,
            batch_size: 1,
            split_fraction: 0.9,
            t2b_mode: T2bMode::Literal,
            log_every: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Running accuracy over the epoch's training examples (pre-update), %.
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_ce: f64,
    pub val_ce: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    /// Number of examples consumed so far.
    pub update: u64,
    /// Metrics over the window since the previous row.
    pub train_acc: f64,
    pub train_ce: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    /// Accuracy in percent.
    pub acc: f64,
    pub ce: f64,
}

/// Everything recorded about one trained network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub condition: String,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub t2b_mode: String,
    pub param_counts: ParamCounts,
    pub history: Vec<EpochMetrics>,
    pub updates: Vec<UpdateMetrics>,
    pub test: TestMetrics,
    pub wall_s: f64,
}

/// Accuracy (%) and mean cross-entropy over a dataset.
pub fn evaluate(net: &Network, data: &PreparedDataset) -> Result<TestMetrics> {
    if data.is_empty() {
        return Err(Error::invalid_argument("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut ce = 0.0;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let probs = net.predict(img)?;
        ce += cross_entropy(&probs, label as usize);
        if argmax(&probs) == label as usize {
            correct += 1;
        }
    }
    Ok(TestMetrics {
        acc: 100.0 * correct as f64 / data.len() as f64,
        ce: ce / data.len() as f64,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Train one network for a condition and seed; returns the metrics and the
/// final network (for checkpointing).
pub fn train_run(
    condition: Condition,
    data: &PreparedSplits,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(RunResult, Network)> {
    let start = Instant::now();
    let mut net = Network::digit_classifier(condition, config.t2b_mode, seed)?;
    // shuffle stream independent of the init stream
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut grads = net.new_gradients();

    let train = &data.train;
    let mut history = Vec::with_capacity(config.epochs);
    let mut updates = Vec::new();
    let mut consumed = 0u64;
    let mut win_correct = 0usize;
    let mut win_ce = 0.0;
    let mut win_count = 0usize;

    let mut indices: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_correct = 0usize;
        let mut epoch_ce = 0.0;
        for batch in indices.chunks(config.batch_size.max(1)) {
            grads.zero();
            for &idx in batch {
                let cache = net.forward(&train.images[idx])?;
                let probs = cache.output();
                let label = train.labels[idx] as usize;
                let ce = cross_entropy(probs, label);
                epoch_ce += ce;
                win_ce += ce;
                if argmax(probs) == label {
                    epoch_correct += 1;
                    win_correct += 1;
                }
                win_count += 1;
                net.backward_into(&cache, label, &mut grads)?;
            }
            net.sgd_step(&grads, config.lr, 1.0 / batch.len() as f64);
            consumed += batch.len() as u64;
            if config.log_every > 0 && win_count >= config.log_every {
                updates.push(UpdateMetrics {
                    update: consumed,
                    train_acc: 100.0 * win_correct as f64 / win_count as f64,
                    train_ce: win_ce / win_count as f64,
                });
                win_correct = 0;
                win_ce = 0.0;
                win_count = 0;
            }
        }
        let val = evaluate(&net, &data.val)?;
        history.push(EpochMetrics {
            epoch,
            train_acc: 100.0 * epoch_correct as f64 / train.len() as f64,
            train_ce: epoch_ce / train.len() as f64,
            val_acc: val.acc,
            val_ce: val.ce,
        });
    }
    let test = evaluate(&net, &data.test)?;
    let result = RunResult {
        condition: condition.to_string(),
        seed,
        epochs: config.epochs,
        lr: config.lr,
        t2b_mode: config.t2b_mode.to_string(),
        param_counts: count_network_parameters(condition),
        history,
        updates,
        test,
        wall_s: start.elapsed().as_secs_f64(),
    };
    Ok((result, net))
}

/// Train one condition across seeds `base_seed .. base_seed + n_seeds`,
/// in parallel. Results come back in seed order.
pub fn run_condition(
    condition: Condition,
    data: &PreparedSplits,
    config: &TrainingConfig,
    base_seed: u64,
    n_seeds: usize,
) -> Result<Vec<RunResult>> {
    if n_seeds == 0 {
        return Err(Error::invalid_argument("need at least one seed"));
    }
    (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| train_run(condition, data, config, base_seed + i).map(|(r, _)| r))
        .collect()
}

/// Train a whole condition matrix in parallel over (condition, seed) pairs.
/// Returns results grouped per condition, in the given condition order.
pub fn run_matrix(
    conditions: &[Condition],
    data: &PreparedSplits,
    config: &TrainingConfig,
    base_seed: u64,
    n_seeds: usize,
) -> Result<Vec<(Condition, Vec<RunResult>)>> {
    Ok(run_matrix_full(conditions, data, config, base_seed, n_seeds)?
        .into_iter()
        .map(|(c, runs)| (c, runs.into_iter().map(|(r, _)| r).collect()))
        .collect())
}

/// Like [`run_matrix`] but also hands back each trained network.
pub fn run_matrix_full(
    conditions: &[Condition],
    data: &PreparedSplits,
    config: &TrainingConfig,
    base_seed: u64,
    n_seeds: usize,
) -> Result<Vec<(Condition, Vec<(RunResult, Network)>)>> {
    let mut jobs = Vec::new();
    for (ci, &cond) in conditions.iter().enumerate() {
        for s in 0..n_seeds as u64 {
            jobs.push((ci, cond, base_seed + s));
        }
    }
    let results: Vec<(usize, (RunResult, Network))> = jobs
        .into_par_iter()
        .map(|(ci, cond, seed)| train_run(cond, data, config, seed).map(|rn| (ci, rn)))
        .collect::<Result<_>>()?;
    let mut grouped: Vec<(Condition, Vec<(RunResult, Network)>)> =
        conditions.iter().map(|&c| (c, Vec::new())).collect();
    for (ci, rn) in results {
        grouped[ci].1.push(rn);
    }
    for (_, rs) in grouped.iter_mut() {
        rs.sort_by_key(|(r, _)| r.seed);
    }
    Ok(grouped)
}

/// Rank-sum comparison of two accuracy samples at the 5% level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label_a: String,
    pub label_b: String,
    pub samples_a: Vec<f64>,
    pub samples_b: Vec<f64>,
    pub rank_sum: f64,
    pub p_value: f64,
    /// True iff the test failed to reject the null at the 5% level.
    pub equivalent: bool,
    pub degenerate: bool,
}

pub fn compare_accuracies(
    label_a: &str,
    a: &[RunResult],
    label_b: &str,
    b: &[RunResult],
) -> Result<ComparisonReport> {
    let sa: Vec<f64> = a.iter().map(|r| r.test.acc).collect();
    let sb: Vec<f64> = b.iter().map(|r| r.test.acc).collect();
    let t = wilcoxon_rank_sum(&sa, &sb)?;
    Ok(ComparisonReport {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        samples_a: sa,
        samples_b: sb,
        rank_sum: t.statistic,
        p_value: t.p_value,
        equivalent: t.p_value >= SIGNIFICANCE_LEVEL,
        degenerate: t.degenerate,
    })
}

/// One row of the aggregate results table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableRow {
    pub condition: String,
    pub runs: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_ce: f64,
    pub params_features: usize,
    /// Set when the rank-sum test finds no significant difference from the
    /// baseline condition.
    pub star: bool,
    pub p_vs_baseline: Option<f64>,
}

pub const BASELINE_CONDITION: &str = "L-R-R";

/// Aggregate per-condition runs: mean/std accuracy, mean cross-entropy,
/// feature parameter counts, and an equivalence star against the L-R-R
/// baseline when both sides have at least three runs.
pub fn aggregate_table(grouped: &[(Condition, Vec<RunResult>)]) -> Vec<TableRow> {
    let baseline = grouped
        .iter()
        .find(|(c, rs)| c.to_string() == BASELINE_CONDITION && rs.len() >= 3)
        .map(|(_, rs)| rs.clone());
    grouped
        .iter()
        .filter(|(_, rs)| !rs.is_empty())
        .map(|(cond, rs)| {
            let accs: Vec<f64> = rs.iter().map(|r| r.test.acc).collect();
            let n = accs.len() as f64;
            let mean_acc = accs.iter().sum::<f64>() / n;
            let std_acc = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean_acc) * (a - mean_acc)).sum::<f64>() / (n - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            let mean_ce = rs.iter().map(|r| r.test.ce).sum::<f64>() / n;
            let name = cond.to_string();
            let mut star = false;
            let mut p = None;
            if name != BASELINE_CONDITION && rs.len() >= 3 {
                if let Some(base) = &baseline {
                    if let Ok(report) = compare_accuracies(BASELINE_CONDITION, base, &name, rs) {
                        p = Some(report.p_value);
                        star = report.equivalent;
                    }
                }
            }
            TableRow {
                condition: name,
                runs: rs.len(),
                mean_acc,
                std_acc,
                mean_ce,
                params_features: count_network_parameters(*cond).features,
                star,
                p_vs_baseline: p,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("condition,mean_acc,std_acc,mean_ce,params_features,star\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.6},{},{}\n",
            r.condition,
            r.mean_acc,
            r.std_acc,
            r.mean_ce,
            r.params_features,
            if r.star { "*" } else { "" }
        ));
    }
    out
}

pub fn curves_csv(results: &[RunResult]) -> String {
    let mut out = String::from("condition,seed,epoch,train_acc,val_acc,train_ce,val_ce\n");
    for r in results {
        for h in &r.history {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.6},{:.6}\n",
                r.condition, r.seed, h.epoch, h.train_acc, h.val_acc, h.train_ce, h.val_ce
            ));
        }
    }
    out
}

pub fn updates_csv(results: &[RunResult]) -> String {
    let mut out = String::from("condition,seed,update,train_acc,train_ce\n");
    for r in results {
        for u in &r.updates {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.6}\n",
                r.condition, r.seed, u.update, u.train_acc, u.train_ce
            ));
        }
    }
    out
}

pub fn write_run_json(result: &RunResult, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(result)?)?;
    Ok(())
}

/// Read run results from a JSON file (single run or array of runs) or from
/// a directory of `*.json` run files.
pub fn read_run_results(path: &Path) -> Result<Vec<RunResult>> {
    if path.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::Parse(format!(
                "{}: no .json run files in directory",
                path.display()
            )));
        }
        let mut out = Vec::new();
        for p in names {
            out.extend(read_run_results(&p)?);
        }
        return Ok(out);
    }
    let text = std::fs::read_to_string(path)?;
    if let Ok(many) = serde_json::from_str::<Vec<RunResult>>(&text) {
        return Ok(many);
    }
    let one: RunResult = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: not a run result: {e}", path.display())))?;
    Ok(vec![one])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, prepare_splits};
    use crate::network::Mode;

    fn small_splits() -> PreparedSplits {
        let train = generate_synthetic(24, 900);
        let test = generate_synthetic(6, 901);
        prepare_splits(&train, &test, 0.9, 902).unwrap()
    }

    fn quick_config() -> TrainingConfig {
        TrainingConfig { epochs: 1, lr: 0.01, log_every: 100, ..TrainingConfig::default() }
    }

    #[test]
    fn run_is_deterministic_apart_from_wall_clock() {
        let data = small_splits();
        let cond = Condition::parse("L-T2B-R").unwrap();
        let cfg = quick_config();
        let (mut a, _) = train_run(cond, &data, &cfg, 7).unwrap();
        let (mut b, _) = train_run(cond, &data, &cfg, 7).unwrap();
        a.wall_s = 0.0;
        b.wall_s = 0.0;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn fixed_mode_preserves_conv_weights() {
        let data = small_splits();
        let cond = Condition::parse("F-R-R").unwrap();
        let cfg = quick_config();
        let fresh = Network::digit_classifier(cond, cfg.t2b_mode, 3).unwrap();
        let (_, trained) = train_run(cond, &data, &cfg, 3).unwrap();
        for (a, b) in fresh.layers.iter().zip(&trained.layers) {
            if let (crate::network::Layer::Conv(x), crate::network::Layer::Conv(y)) = (a, b) {
                assert_eq!(x.kernels, y.kernels);
            }
        }
    }

    #[test]
    fn matrix_runs_and_aggregates_with_stars() {
        let data = small_splits();
        let cfg = quick_config();
        let conds = vec![
            Condition::parse("L-R-R").unwrap(),
            Condition::parse("L-T1-T1").unwrap(),
        ];
        let grouped = run_matrix(&conds, &data, &cfg, 100, 3).unwrap();
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0].1.len(), 3);
        let rows = aggregate_table(&grouped);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].condition, "L-R-R");
        assert!(!rows[0].star, "baseline never carries a star");
        assert_eq!(rows[0].params_features, 1375);
        assert_eq!(rows[1].params_features, 330);
        assert!(rows[1].p_vs_baseline.is_some());
        let csv = summary_csv(&rows);
        assert!(csv.starts_with("condition,mean_acc"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn identical_result_sets_star_the_non_baseline_row() {
        let mk = |cond: &str, accs: &[f64]| -> (Condition, Vec<RunResult>) {
            let c = Condition::parse(cond).unwrap();
            let rs = accs
                .iter()
                .enumerate()
                .map(|(i, &acc)| RunResult {
                    condition: cond.to_string(),
                    seed: i as u64,
                    epochs: 1,
                    lr: 0.001,
                    t2b_mode: "literal".into(),
                    param_counts: count_network_parameters(c),
                    history: vec![],
                    updates: vec![],
                    test: TestMetrics { acc, ce: 0.1 },
                    wall_s: 0.0,
                })
                .collect();
            (c, rs)
        };
        let grouped = vec![
            mk("L-R-R", &[97.0, 97.5, 98.0]),
            mk("L-T2A-R", &[97.0, 97.5, 98.0]),
        ];
        let rows = aggregate_table(&grouped);
        assert!(rows[1].star);
        assert_eq!(rows[1].p_vs_baseline, Some(1.0));

        // single condition: one row, no stars anywhere
        let solo = aggregate_table(&grouped[1..2].to_vec());
        assert_eq!(solo.len(), 1);
        assert!(!solo[0].star);
    }

    #[test]
    fn run_results_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_splits();
        let cond = Condition {
            mode: Mode::Learned,
            layer1: crate::symmetry::SymmetryClass::T1,
            layer2: crate::symmetry::SymmetryClass::R,
        };
        let cfg = quick_config();
        let (r, _) = train_run(cond, &data, &cfg, 11).unwrap();
        let p = dir.path().join("run-a.json");
        write_run_json(&r, &p).unwrap();
        let back = read_run_results(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].condition, "L-T1-R");
        // directory form
        let all = read_run_results(dir.path()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].test, r.test);
    }

    #[test]
    fn synthetic_smoke_run_reaches_90_percent_validation() {
        // smoke benchmark: one epoch of per-example SGD (900 updates) on the
        // synthetic set must clear 90% validation accuracy
        let train = generate_synthetic(100, 910);
        let test = generate_synthetic(20, 911);
        let data = prepare_splits(&train, &test, 0.9, 912).unwrap();
        let cfg = TrainingConfig { epochs: 1, ..TrainingConfig::default() };
        let (r, _) = train_run(Condition::parse("L-R-R").unwrap(), &data, &cfg, 42).unwrap();
        assert!(
            r.history[0].val_acc >= 90.0,
            "val accuracy {:.1}% after one epoch",
            r.history[0].val_acc
        );
    }

    #[test]
    fn comparison_report_flags_equivalence() {
        let mk = |accs: &[f64]| -> Vec<RunResult> {
            accs.iter()
                .map(|&acc| RunResult {
                    condition: "L-R-R".into(),
                    seed: 0,
                    epochs: 1,
                    lr: 0.001,
                    t2b_mode: "literal".into(),
                    param_counts: ParamCounts { features: 0, classifier: 0 },
                    history: vec![],
                    updates: vec![],
                    test: TestMetrics { acc, ce: 0.0 },
                    wall_s: 0.0,
                })
                .collect()
        };
        let a = mk(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = mk(&[6.0, 7.0, 8.0, 9.0, 10.0]);
        let rep = compare_accuracies("a", &a, "b", &b).unwrap();
        assert!(!rep.equivalent);
        assert!((rep.p_value - 2.0 / 252.0).abs() < 1e-12);
    }
}
