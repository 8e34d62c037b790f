//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! The tests hold a shared lock so the timing-sensitive ones do not compete
//! for cores.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use lama_core::autotyping::{norm_gini_for_task, oof_target_encode};
use lama_core::data::{build_dataset, Column, Dataset, DatasetOptions, NumericOrigin, RawTable};
use lama_core::ensemble::{apply_blend, blend_weights};
use lama_core::features::FeatureMatrix;
use lama_core::learners::gbm::{boost, fit_gbm_fold};
use lama_core::learners::{fit_gbm, fit_linear, Estimator, GbmFlavor, GbmParams, LearnerParams, LinearParams, TrainedModel};
use lama_core::orchestrator::{fit_preset, predict_automl, utilized_fit, AutoMLModel, PresetConfig, StackPolicy};
use lama_core::selection::{cutoff_select, default_block_size, forward_select, permutation_importance, GbmProcedure};
use lama_core::tuning::expert_params;
use lama_core::validation::{split_rows, CvKind, CvScheme, OofMatrix, SplitInputs};
use lama_core::{MetricSpec, Task, TaskKind, TimeBudget};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes past the test harness capture so the line always shows.
fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} ({name}): {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

// ---------------------------------------------------------------- 1

/// |concordant - discordant| over pairs with distinct targets, by brute force.
fn pairwise_gini(y: &[f64], x: &[f64]) -> f64 {
    let (mut c, mut d, mut untied) = (0i64, 0i64, 0i64);
    for i in 0..y.len() {
        for j in 0..i {
            let dy = y[i] - y[j];
            if dy == 0.0 {
                continue;
            }
            untied += 1;
            let s = dy * (x[i] - x[j]);
            if s > 0.0 {
                c += 1;
            } else if s < 0.0 {
                d += 1;
            }
        }
    }
    if untied == 0 {
        0.0
    } else {
        (c - d).abs() as f64 / untied as f64
    }
}

#[test]
fn criterion_1_gini_matches_pairwise_oracle() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for inst in 0..200 {
        let n = rng.random_range(2..=500);
        let x_levels = rng.random_range(2..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..x_levels) as f64 * 0.5).collect();
        let (task, mut y): (Task, Vec<f64>) = match inst % 3 {
            0 => (Task::binary(), (0..n).map(|_| rng.random_range(0..2) as f64).collect()),
            1 => {
                let k = rng.random_range(3..6);
                (Task::multiclass(k), (0..n).map(|_| rng.random_range(0..k) as f64).collect())
            }
            _ => (Task::regression(), (0..n).map(|_| (rng.random_range(0.0..10.0f64) * 4.0).round() / 4.0).collect()),
        };
        // at least two distinct targets
        y[0] = 0.0;
        y[n - 1] = 1.0;
        let fast = norm_gini_for_task(&task, &y, &x).unwrap();
        let oracle = if task.kind == TaskKind::Multiclass {
            (0..task.n_classes)
                .map(|k| {
                    let ind: Vec<f64> = y.iter().map(|&v| (v as usize == k) as u8 as f64).collect();
                    pairwise_gini(&ind, &x)
                })
                .fold(0.0, f64::max)
        } else {
            pairwise_gini(&y, &x)
        };
        worst = worst.max((fast - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 10.0;
    verdict(1, "gini oracle", pass, &format!("max |fast - pairwise| = {worst:.2e}, {secs:.2}s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_oof_encoding_never_sees_own_target() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0usize;
    let mut checked = 0usize;
    for t in 0..100 {
        let n = rng.random_range(20..300);
        let card = rng.random_range(1..25);
        let codes: Vec<i32> = (0..n)
            .map(|_| if rng.random_bool(0.05) { -1 } else { rng.random_range(0..card) })
            .collect();
        let task = match t % 3 {
            0 => Task::binary(),
            1 => Task::multiclass(3),
            _ => Task::regression(),
        };
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            match task.kind {
                TaskKind::Binary => rng.random_range(0..2) as f64,
                TaskKind::Multiclass => rng.random_range(0..3) as f64,
                TaskKind::Regression => rng.random_range(-5.0..5.0),
            }
        };
        let mut y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        if task.kind == TaskKind::Multiclass {
            y[0] = 0.0;
            y[1] = 1.0;
            y[2] = 2.0;
        }
        let scheme = if t % 5 == 4 {
            CvScheme::holdout(0.3, t as u64)
        } else {
            CvScheme::new(CvKind::Kfold, rng.random_range(2..8), t as u64)
        };
        let folds = split_rows(&scheme, n, SplitInputs::default()).unwrap();
        let alpha = rng.random_range(0.5..5.0);
        let base = oof_target_encode(&codes, &y, &task, &folds, alpha).unwrap();
        for _ in 0..5 {
            let i = rng.random_range(0..n);
            let mut y2 = y.clone();
            while y2[i] == y[i] {
                y2[i] = draw(&mut rng);
            }
            let pert = oof_target_encode(&codes, &y2, &task, &folds, alpha).unwrap();
            checked += 1;
            if base.iter().zip(&pert).any(|(a, b)| a[i].to_bits() != b[i].to_bits()) {
                violations += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = violations == 0 && secs < 5.0;
    verdict(2, "leakage", pass, &format!("{violations} of {checked} perturbations moved their own row, {secs:.2}s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn check_folds(kind: CvKind, rng: &mut ChaCha8Rng, draw: u64) -> Result<(), String> {
    let n = rng.random_range(30..300);
    let k = rng.random_range(2..8);
    let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0..3) as f64).collect();
    let n_groups = rng.random_range(k..(k + 40));
    let groups: Vec<u64> = (0..n).map(|_| rng.random_range(0..n_groups) as u64).collect();
    let times: Vec<f64> = (0..n).map(|_| rng.random_range(0..(n as u32 / 2 + 1)) as f64).collect();
    let scheme = match kind {
        CvKind::Holdout => CvScheme::holdout(rng.random_range(0.1..0.5), draw),
        _ => CvScheme::new(kind, k, draw),
    };
    let inputs = SplitInputs {
        labels: Some(&labels),
        groups: Some(&groups),
        times: Some(&times),
    };
    let f = split_rows(&scheme, n, inputs).map_err(|e| e.to_string())?;
    let all: BTreeSet<usize> = (0..n).collect();
    for fold in 0..f.k {
        let valid: BTreeSet<usize> = f.validation_rows(fold).into_iter().collect();
        let train: BTreeSet<usize> = f.train_rows(fold).into_iter().collect();
        if valid.is_empty() || train.is_empty() {
            return Err(format!("{kind:?}: fold {fold} has an empty side"));
        }
        if !valid.is_disjoint(&train) {
            return Err(format!("{kind:?}: fold {fold} trains on validation rows"));
        }
        if kind != CvKind::TimeSeries && kind != CvKind::Holdout {
            let union: BTreeSet<usize> = valid.union(&train).copied().collect();
            if union != all {
                return Err(format!("{kind:?}: fold {fold} does not partition the rows"));
            }
        }
        if kind == CvKind::TimeSeries {
            let latest_train = train.iter().map(|&r| times[r]).fold(f64::NEG_INFINITY, f64::max);
            let earliest_valid = valid.iter().map(|&r| times[r]).fold(f64::INFINITY, f64::min);
            if latest_train > earliest_valid {
                return Err(format!("time fold {fold} trains on the future"));
            }
        }
    }
    if matches!(kind, CvKind::Kfold | CvKind::StratifiedKfold | CvKind::GroupKfold) && f.fold_of_row.iter().any(|&g| g < 0) {
        return Err(format!("{kind:?}: a row is never validated"));
    }
    if kind == CvKind::StratifiedKfold && f.warnings.is_empty() {
        for class in 0..3 {
            let counts: Vec<usize> = (0..f.k)
                .map(|fold| (0..n).filter(|&r| f.fold_of_row[r] == fold as i32 && labels[r] == class as f64).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            if hi - lo > 1 {
                return Err(format!("class {class} spread {counts:?}"));
            }
        }
    }
    if kind == CvKind::GroupKfold {
        let mut seen: BTreeMap<u64, i32> = BTreeMap::new();
        for r in 0..n {
            if *seen.entry(groups[r]).or_insert(f.fold_of_row[r]) != f.fold_of_row[r] {
                return Err(format!("group {} spans folds", groups[r]));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_3_fold_invariants() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let kinds = [CvKind::Kfold, CvKind::StratifiedKfold, CvKind::GroupKfold, CvKind::Holdout, CvKind::TimeSeries];
    let mut failures = Vec::new();
    for draw in 0..1000u64 {
        let kind = kinds[(draw % 5) as usize];
        if let Err(e) = check_folds(kind, &mut rng, draw) {
            failures.push(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 10.0;
    let first = failures.first().cloned().unwrap_or_default();
    verdict(3, "fold invariants", pass, &format!("{} of 1000 draws failed {first}, {secs:.2}s", failures.len()));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

fn xor(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        y.push(((u > 0.0) != (v > 0.0)) as u8 as f64);
        a.push(u);
        b.push(v);
    }
    (FeatureMatrix::new(vec!["a".into(), "b".into()], vec![a, b]).unwrap(), y)
}

fn folds_for(n: usize, y: &[f64], seed: u64) -> lama_core::validation::FoldAssignment {
    let inputs = SplitInputs {
        labels: Some(y),
        ..SplitInputs::default()
    };
    split_rows(&CvScheme::new(CvKind::StratifiedKfold, 5, seed), n, inputs).unwrap()
}

#[test]
fn criterion_4_learner_sanity() {
    let _g = serial();
    let start = Instant::now();
    let (x, y) = xor(400, 4);
    let mut notes = Vec::new();
    let mut pass = true;
    for flavor in [GbmFlavor::LeafWise, GbmFlavor::SymmetricDepthWise] {
        let params = GbmParams {
            max_depth: 2,
            max_leaves: 4,
            min_data_in_leaf: 1,
            n_estimators_cap: 300,
            ..GbmParams::new(flavor)
        };
        let (est, _) = boost(&x, &y, None, &Task::binary(), &params, &TimeBudget::unlimited()).unwrap();
        let p = est.predict(&x);
        let acc = (0..y.len()).filter(|&r| (p[[r, 0]] > 0.5) == (y[r] > 0.5)).count() as f64 / y.len() as f64;
        pass &= acc == 1.0;
        notes.push(format!("{} xor acc {acc}", flavor.tag()));

        let full = GbmParams {
            n_estimators_cap: 200,
            ..GbmParams::new(flavor)
        };
        let (_, trace) = boost(&x, &y, None, &Task::binary(), &full, &TimeBudget::unlimited()).unwrap();
        let rises = trace.train_loss.windows(2).filter(|w| w[1] > w[0]).count();
        pass &= rises == 0 && trace.train_loss.len() == 201;
        notes.push(format!("{} loss rises {rises}", flavor.tag()));
    }
    // separable after a margin
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut cols = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut ys = Vec::new();
    while ys.len() < 500 {
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = v[0] + 0.5 * v[1] - v[2];
        if s.abs() < 0.3 {
            continue;
        }
        for (c, val) in cols.iter_mut().zip(&v) {
            c.push(*val);
        }
        ys.push((s > 0.0) as u8 as f64);
    }
    let lx = FeatureMatrix::new(vec!["a".into(), "b".into(), "c".into()], cols).unwrap();
    let lf = folds_for(500, &ys, 4);
    let lm = fit_linear(&lx, &ys, &Task::binary(), &lf, &LinearParams::default(), &TimeBudget::unlimited(), "linear").unwrap();
    pass &= lm.metric_oof >= 0.99;
    notes.push(format!("linear OOF AUC {:.4}", lm.metric_oof));
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    verdict(4, "learner sanity", pass, &format!("{}, {secs:.2}s", notes.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn simplex_oracle(models: &[&OofMatrix], y: &[f64], task: &Task) -> f64 {
    let views: Vec<_> = models.iter().map(|m| m.values.view()).collect();
    let mut best = f64::NEG_INFINITY;
    for i in 0..=100 {
        for j in 0..=(100 - i) {
            let w = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
            let p = apply_blend(&views, &w, task).unwrap();
            best = best.max(task.metric.score(y, p.view()));
        }
    }
    best
}

#[test]
fn criterion_5_blend_guarantee() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut below_single, mut below_oracle, mut worst_gap) = (0, 0, f64::NEG_INFINITY);
    for s in 0..100 {
        let n = 150;
        let task = match s % 3 {
            0 => Task::binary().with_metric(MetricSpec::NegLogloss).unwrap(),
            1 => Task::multiclass(3),
            _ => Task::regression(),
        };
        let y: Vec<f64> = (0..n)
            .map(|_| match task.kind {
                TaskKind::Binary => rng.random_range(0..2) as f64,
                TaskKind::Multiclass => rng.random_range(0..3) as f64,
                TaskKind::Regression => rng.random_range(-2.0..2.0),
            })
            .collect();
        let models: Vec<OofMatrix> = (0..3)
            .map(|m| {
                let noise = rng.random_range(0.3..2.0) * (1.0 + m as f64 * 0.2);
                let width = task.output_width();
                let mut values = ndarray::Array2::<f64>::zeros((n, width));
                for r in 0..n {
                    match task.kind {
                        TaskKind::Binary => {
                            let z = (2.0 * y[r] - 1.0) + noise * rng.sample::<f64, _>(StandardNormal);
                            values[[r, 0]] = 1.0 / (1.0 + (-z).exp());
                        }
                        TaskKind::Multiclass => {
                            let logits: Vec<f64> = (0..3)
                                .map(|c| 1.5 * (c as f64 == y[r]) as u8 as f64 + noise * rng.sample::<f64, _>(StandardNormal))
                                .collect();
                            let z: f64 = logits.iter().map(|l| l.exp()).sum();
                            for c in 0..3 {
                                values[[r, c]] = logits[c].exp() / z;
                            }
                        }
                        TaskKind::Regression => {
                            values[[r, 0]] = y[r] + noise * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
                OofMatrix {
                    values,
                    present: vec![true; n],
                }
            })
            .collect();
        let refs: Vec<&OofMatrix> = models.iter().collect();
        let w = blend_weights(&refs, &y, &task).unwrap();
        let best_single = models.iter().map(|m| task.metric.score(&y, m.values.view())).fold(f64::NEG_INFINITY, f64::max);
        let oracle = simplex_oracle(&refs, &y, &task);
        if w.score < best_single {
            below_single += 1;
        }
        if w.score < oracle - 1e-6 {
            below_oracle += 1;
        }
        worst_gap = worst_gap.max(oracle - w.score);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = below_single == 0 && below_oracle == 0 && secs < 60.0;
    verdict(
        5,
        "blend guarantee",
        pass,
        &format!("{below_single} below best single, {below_oracle} below simplex oracle (worst gap {worst_gap:.2e}), {secs:.2}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

/// 20 informative features with decaying weights, 30 pure noise.
fn selection_data(seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5000;
    let cols: Vec<Vec<f64>> = (0..50).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let weights: Vec<f64> = (0..20).map(|j| 1.2 * 0.85f64.powi(j)).collect();
    let y: Vec<f64> = (0..n)
        .map(|r| {
            let z: f64 = (0..20).map(|j| weights[j] * cols[j][r]).sum::<f64>() + 0.5 * cols[0][r] * cols[1][r];
            rng.random_bool(1.0 / (1.0 + (-z).exp())) as u8 as f64
        })
        .collect();
    let mut names: Vec<String> = (0..20).map(|j| format!("inf{j}")).collect();
    names.extend((0..30).map(|j| format!("junk{j}")));
    // interleave so column order says nothing
    let mut order: Vec<usize> = (0..50).collect();
    order.shuffle(&mut rng);
    let names = order.iter().map(|&i| names[i].clone()).collect();
    let cols = order.iter().map(|&i| cols[i].clone()).collect();
    (FeatureMatrix::new(names, cols).unwrap(), y)
}

#[test]
fn criterion_6_selection_trend() {
    let _g = serial();
    let start = Instant::now();
    let task = Task::binary();
    let (mut kept_cut, mut kept_fwd, mut auc_cut, mut auc_fwd) = (0.0, 0.0, 0.0, 0.0);
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let (x, y) = selection_data(600 + seed);
        let folds = folds_for(x.n_rows, &y, seed);
        let mut expert = expert_params(&task, x.n_rows, x.n_features(), GbmFlavor::LeafWise);
        expert.seed = seed;
        let budget = TimeBudget::unlimited();

        let (est, _, _) = fit_gbm_fold(&x, &y, &task, &folds, 0, &expert, &budget).unwrap();
        let model = TrainedModel::single("gbm_leaf", &task, x.names.clone(), Estimator::Gbm(est), LearnerParams::Gbm(expert.clone()), 0.0);
        let valid = folds.validation_rows(0);
        let train = folds.train_rows(0);
        let (xv, xt) = (x.select_rows(&valid), x.select_rows(&train));
        let yv: Vec<f64> = valid.iter().map(|&r| y[r]).collect();
        let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
        let imp = permutation_importance(&model, &xv, &yv, task.metric, seed).unwrap();
        let cut = cutoff_select(&imp);

        let learner = GbmProcedure {
            task,
            params: expert.clone(),
            budget,
        };
        let fwd = forward_select(&xt, &yt, &xv, &yv, &learner, default_block_size(x.n_features()), task.metric, seed).unwrap();
        let fwd_kept = fwd.kept().to_vec();

        let score = |cols: &[String]| {
            let sub = x.select_columns(cols).unwrap();
            fit_gbm(&sub, &y, &task, &folds, &expert, &budget, "gbm_leaf").unwrap().metric_oof
        };
        let (a_cut, a_fwd) = (score(&cut), score(&fwd_kept));
        rows.push(format!("seed {seed}: cutoff {} ({a_cut:.4}) forward {} ({a_fwd:.4})", cut.len(), fwd_kept.len()));
        kept_cut += cut.len() as f64 / 5.0;
        kept_fwd += fwd_kept.len() as f64 / 5.0;
        auc_cut += a_cut / 5.0;
        auc_fwd += a_fwd / 5.0;
    }
    let secs = start.elapsed().as_secs_f64();
    let fewer = 1.0 - kept_fwd / kept_cut;
    let drop = auc_cut - auc_fwd;
    let pass = fewer >= 0.30 && drop <= 0.02 && secs < 600.0;
    verdict(
        6,
        "selection trend",
        pass,
        &format!(
            "mean kept cutoff {kept_cut:.1} forward {kept_fwd:.1} ({:.0}% fewer), mean AUC {auc_cut:.4} vs {auc_fwd:.4} (drop {drop:.4}), {secs:.1}s [{}]",
            fewer * 100.0,
            rows.join("; ")
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

/// Binary tasks with different structure: linear, interaction, category
/// effects, thresholds and a mixture.
fn ablation_task(kind: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1500;
    let x: Vec<Vec<f64>> = (0..8).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let cat: Vec<i32> = (0..n).map(|_| rng.random_range(0..12)).collect();
    let cat_effect: Vec<f64> = (0..12).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y: Vec<f64> = (0..n)
        .map(|r| {
            let z = match kind {
                0 => x[0][r] - 0.7 * x[1][r] + 0.4 * x[2][r],
                1 => 1.5 * x[0][r] * x[1][r] + 0.5 * x[2][r],
                2 => 1.2 * cat_effect[cat[r] as usize] + 0.6 * x[0][r],
                3 => 2.0 * ((x[0][r] > 0.3) as u8 as f64) - 1.5 * ((x[1][r] < -0.5) as u8 as f64) + 0.3 * x[2][r] - 0.2,
                _ => x[0][r].sin() * 2.0 + 0.8 * x[1][r].abs() - 0.6 + 0.5 * cat_effect[cat[r] as usize],
            };
            rng.random_bool(1.0 / (1.0 + (-z).exp())) as u8 as f64
        })
        .collect();
    let mut columns: Vec<Column> = x
        .into_iter()
        .enumerate()
        .map(|(j, v)| Column::numeric(format!("x{j}"), v, NumericOrigin::Float { fractional: true }))
        .collect();
    columns.push(Column::category("shop", cat, (0..12).map(|c| format!("s{c}")).collect()));
    Dataset::from_columns(columns, y, Task::binary()).unwrap()
}

#[test]
fn criterion_7_ablation_trend() {
    let _g = serial();
    let start = Instant::now();
    let (mut expert_only, mut combined, mut utilized) = (0.0, 0.0, 0.0);
    let mut rows = Vec::new();
    for t in 0..5usize {
        let ds = ablation_task(t, 700 + t as u64);
        let base = PresetConfig {
            budget_seconds: 60.0,
            seed: t as u64,
            ..PresetConfig::default()
        };
        let no_tune = PresetConfig {
            tuning_enabled: false,
            ..base.clone()
        };
        let e = fit_preset(&ds, &no_tune).unwrap().oof_score;
        let c = fit_preset(&ds, &base).unwrap().oof_score;
        let u = utilized_fit(&ds, std::slice::from_ref(&base), &[vec![t as u64, 1000 + t as u64]], &TimeBudget::from_secs_f64(base.budget_seconds))
            .unwrap()
            .oof_score;
        rows.push(format!("task {t}: expert {e:.4} combined {c:.4} utilized {u:.4}"));
        expert_only += e / 5.0;
        combined += c / 5.0;
        utilized += u / 5.0;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = combined >= expert_only - 0.002 && utilized >= combined - 0.002 && secs < 1200.0;
    verdict(
        7,
        "ablation trend",
        pass,
        &format!(
            "mean OOF AUC expert-only {expert_only:.4}, combined {combined:.4}, utilized {utilized:.4}, {secs:.1}s [{}]",
            rows.join("; ")
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

fn big_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..15).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let grade: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
    let region: Vec<i32> = (0..n).map(|_| rng.random_range(0..30)).collect();
    let region_effect: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|r| {
            let z = x[0][r] - 0.8 * x[1][r] + 0.6 * x[2][r] * x[3][r] + 0.3 * (grade[r] - 2.0) + region_effect[region[r] as usize];
            rng.random_bool(1.0 / (1.0 + (-z).exp())) as u8 as f64
        })
        .collect();
    let mut columns: Vec<Column> = x
        .into_iter()
        .enumerate()
        .map(|(j, v)| Column::numeric(format!("x{j}"), v, NumericOrigin::Float { fractional: true }))
        .collect();
    columns.push(Column::numeric("grade", grade, NumericOrigin::Integer));
    columns.push(Column::category("region", region, (0..30).map(|c| format!("r{c}")).collect()));
    Dataset::from_columns(columns, y, Task::binary()).unwrap()
}

#[test]
fn criterion_8_budget_compliance() {
    let _g = serial();
    let ds = big_dataset(50_000, 808);
    let mut pass = true;
    let mut rows = Vec::new();
    let mut previous: Option<BTreeSet<String>> = None;
    for budget in [30.0, 120.0, 600.0] {
        let config = PresetConfig {
            budget_seconds: budget,
            ..PresetConfig::default()
        };
        let t = Instant::now();
        let model = fit_preset(&ds, &config).unwrap();
        let wall = t.elapsed();
        let run = &model.runs[0];
        let ran: BTreeSet<String> = run.diagnostics.ran_phases().into_iter().collect();
        let has_linear = ran.contains("linear");
        let in_time = wall <= Duration::from_secs_f64(1.5 * budget);
        let superset = previous.as_ref().is_none_or(|p| p.is_subset(&ran));
        pass &= has_linear && in_time && superset;
        rows.push(format!(
            "{budget:.0}s budget: {:.1}s wall, phases [{}], OOF AUC {:.4}{}",
            wall.as_secs_f64(),
            ran.iter().cloned().collect::<Vec<_>>().join(" "),
            model.oof_score,
            if superset { "" } else { " (lost a phase)" }
        ));
        previous = Some(ran);
    }
    verdict(8, "budget compliance", pass, &rows.join("; "));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn random_table(rng: &mut ChaCha8Rng, kind: TaskKind, n: usize) -> RawTable {
    let names = ["a", "b", "n", "colour", "when", "y"];
    let colours = ["red", "green", "blue", "teal", "plum"];
    let rows: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(0.0..1.0);
            let cnt: i64 = rng.random_range(0..6);
            let c = rng.random_range(0..5);
            let z = a + 2.0 * b - 0.3 * cnt as f64 + 0.5 * c as f64 + rng.random_range(-1.0..1.0);
            let y = match kind {
                TaskKind::Binary => (z > 0.5).to_string(),
                TaskKind::Multiclass => ["lo", "mid", "hi"][((z + 2.0).clamp(0.0, 5.99) / 2.0) as usize].to_string(),
                TaskKind::Regression => format!("{z:.3}"),
            };
            let a_cell = if rng.random_bool(0.05) { String::new() } else { format!("{a:.4}") };
            let day = rng.random_range(1..28);
            vec![a_cell, format!("{b:.4}"), cnt.to_string(), colours[c].to_string(), format!("2024-03-{day:02}"), y]
        })
        .collect();
    let refs: Vec<Vec<&str>> = rows.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
    RawTable::from_cells(&names, &refs).unwrap()
}

#[test]
fn criterion_9_round_trip() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut mismatches = 0usize;
    for i in 0..10u64 {
        let kind = [TaskKind::Binary, TaskKind::Multiclass, TaskKind::Regression][(i % 3) as usize];
        let n = rng.random_range(200..400);
        let raw = random_table(&mut rng, kind, n);
        let ds = build_dataset(&raw, "y", kind, &DatasetOptions::default()).unwrap();
        let config = PresetConfig {
            budget_seconds: 3.0,
            seed: i,
            max_trials: 4,
            stack_policy: if i % 4 == 0 { StackPolicy::Always } else { StackPolicy::Auto },
            ..PresetConfig::default()
        };
        let model = fit_preset(&ds, &config).unwrap();
        let path = dir.path().join(format!("m{i}.lama"));
        model.save(&path).unwrap();
        let loaded = AutoMLModel::load(&path).unwrap();
        let a = predict_automl(&model, &raw).unwrap();
        let b = predict_automl(&loaded, &raw).unwrap();
        if a.dim() != b.dim() || a.iter().zip(b.iter()).any(|(p, q)| p.to_bits() != q.to_bits()) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 60.0;
    verdict(9, "round trip", pass, &format!("{mismatches} of 10 artifacts differ after reload, {secs:.1}s"));
    assert!(pass);
}
