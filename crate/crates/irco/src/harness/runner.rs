//! Experiment execution: trials, model selection, gradient checks, curves.
//!
//! A trial owns everything random about itself (data draw, split, model
//! init) through a single seed, so trials can run on any number of threads
//! and the aggregate is byte-identical: results are merged by trial index,
//! never by completion order.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{IrcoError, Result};
use crate::harness::config::{ExperimentConfig, GridPoint, Method};
use crate::harness::report::{to_percent, Report, TrialResult};
use crate::ico::{self, TrainOutput};
use crate::metrics;
use crate::model::{self, ModelParams};
use crate::problems::{self, ProblemSpec};
use crate::rng;
use crate::surrogates::Surrogate;

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Runs all trials on as many threads as the host offers.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_experiment_threads(config, threads)
}

/// Runs all trials on at most `threads` workers. One thread and many
/// threads produce the same report apart from wall-clock time.
pub fn run_experiment_threads(config: &ExperimentConfig, threads: usize) -> Result<Report> {
    config.validate()?;
    let started = Instant::now();
    let grid = config.grid_points();
    let spec = config.problem.build()?;

    let mut slots: Vec<Option<Result<TrialResult>>> = (0..config.trials).map(|_| None).collect();
    let workers = threads.clamp(1, config.trials.max(1));
    if workers == 1 {
        for (trial, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_trial(config, &spec, &grid, trial));
        }
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, Result<TrialResult>)>();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                let spec = &spec;
                let grid = &grid;
                scope.spawn(move || loop {
                    let trial = next.fetch_add(1, Ordering::Relaxed);
                    if trial >= config.trials {
                        break;
                    }
                    let out = run_trial(config, spec, grid, trial);
                    if tx.send((trial, out)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (trial, out) in rx {
                slots[trial] = Some(out);
            }
        });
    }

    let mut trials = Vec::with_capacity(config.trials);
    for (trial, slot) in slots.into_iter().enumerate() {
        match slot.expect("every trial ran") {
            Ok(t) => trials.push(t),
            Err(e) => {
                return Err(IrcoError::Trial {
                    trial,
                    source: Box::new(e),
                })
            }
        }
    }
    Report::from_trials(
        spec.metric_name().to_string(),
        spec.metric_higher_is_better(),
        trials,
        started.elapsed().as_secs_f64(),
    )
}

/// One trial: draw/split the data, train every grid point, select by
/// validation metric, report the winner's test metric. Validation ties keep
/// the earliest grid point.
fn run_trial(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    grid: &[GridPoint],
    trial: usize,
) -> Result<TrialResult> {
    let trial_seed = config.trainer.seed + trial as u64;
    let [train, val, test] = config.dataset.load(trial_seed)?;

    let mut best: Option<(usize, f64, TrainOutput)> = None;
    for (gi, point) in grid.iter().enumerate() {
        let out = train_one(config, spec, point, &train, &val, trial_seed)?;
        let val_scores = model::forward(&out.params, &val.features)?;
        let val_metric =
            problems::eval_metric(spec, &val_scores, &val.labels, val.groups.as_deref())?;
        let take = match &best {
            None => true,
            Some((_, m, _)) => {
                if spec.metric_higher_is_better() {
                    val_metric > *m
                } else {
                    val_metric < *m
                }
            }
        };
        if take {
            best = Some((gi, val_metric, out));
        }
    }
    let (gi, val_metric, out) = best.expect("grid is never empty");

    let test_scores = model::forward(&out.params, &test.features)?;
    let test_metric =
        problems::eval_metric(spec, &test_scores, &test.labels, test.groups.as_deref())?;
    Ok(TrialResult {
        trial,
        seed: trial_seed,
        selected: grid[gi].clone(),
        val_metric,
        test_metric,
        test_metric_percent: to_percent(test_metric),
    })
}

fn train_one(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    point: &GridPoint,
    train: &Dataset,
    val: &Dataset,
    trial_seed: u64,
) -> Result<TrainOutput> {
    let tcfg = config.trainer_at(point, trial_seed)?;
    match config.method {
        Method::Ico => ico::train(spec, train, val, &config.arch, &tcfg),
        Method::Ce => crate::baselines::train_cross_entropy(spec, train, val, &config.arch, &tcfg),
        Method::Lagrangian => {
            let dual = point
                .dual_step
                .ok_or_else(|| IrcoError::Config("lagrangian grid point lost dual_step".into()))?;
            crate::baselines::train_lagrangian(spec, train, val, &config.arch, &tcfg, dual)
        }
        Method::Pairwise => {
            crate::baselines::train_pairwise(spec, train, val, &config.arch, &tcfg)
        }
    }
}

/// Trains the base configuration once (trial 0, no grid search) and reports
/// validation and test metrics alongside the artifacts.
pub struct SingleRun {
    pub output: TrainOutput,
    pub val_metric: f64,
    pub test_metric: f64,
}

pub fn run_single(config: &ExperimentConfig) -> Result<SingleRun> {
    config.validate()?;
    let spec = config.problem.build()?;
    let trial_seed = config.trainer.seed;
    let [train, val, test] = config.dataset.load(trial_seed)?;
    let point = GridPoint {
        learning_rate: config.trainer.learning_rate,
        temperature: config.trainer.surrogate.tau,
        reg_strength: config.trainer.reg_strength,
        dual_step: config.dual_step,
    };
    let output = train_one(config, &spec, &point, &train, &val, trial_seed)?;
    let val_scores = model::forward(&output.params, &val.features)?;
    let val_metric = problems::eval_metric(&spec, &val_scores, &val.labels, val.groups.as_deref())?;
    let test_scores = model::forward(&output.params, &test.features)?;
    let test_metric =
        problems::eval_metric(&spec, &test_scores, &test.labels, test.groups.as_deref())?;
    Ok(SingleRun {
        output,
        val_metric,
        test_metric,
    })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Solves the smoothed constraint for its threshold by bisection. Every
/// constraint function here (rates, coverage, counts) is strictly decreasing
/// in the threshold, so a wide bracket around the scores always works.
pub fn solve_threshold_bisection(
    spec: &ProblemSpec,
    ci: usize,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    surrogate: &Surrogate,
    lambdas_template: &[f64],
) -> Result<f64> {
    let t = spec.constraints[ci].governed_threshold;
    let mut lambdas = lambdas_template.to_vec();
    let mut residual = |lam: f64| -> Result<f64> {
        lambdas[t] = lam;
        let eval = problems::evaluate(spec, scores, labels, groups, &lambdas, surrogate)?;
        Ok(eval.constraints[ci].value)
    };
    let lo0 = scores.iter().cloned().fold(f64::INFINITY, f64::min) - 60.0;
    let hi0 = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 60.0;
    let (mut lo, mut hi) = (lo0, hi0);
    if residual(lo)? < 0.0 || residual(hi)? > 0.0 {
        return Err(IrcoError::InfeasibleTarget(format!(
            "constraint {ci} has no smoothed root inside [{lo0:.3}, {hi0:.3}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves every constraint's threshold by bisection. Constraints are
/// separable: each smoothed function involves only its own threshold.
pub fn solve_thresholds_bisection(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    surrogate: &Surrogate,
) -> Result<Vec<f64>> {
    let mut lambdas = vec![0.0; spec.m()];
    for (ci, c) in spec.constraints.iter().enumerate() {
        lambdas[c.governed_threshold] =
            solve_threshold_bisection(spec, ci, scores, labels, groups, surrogate, &lambdas)?;
    }
    Ok(lambdas)
}

/// Maximum relative error across two independent derivative checks: the
/// model backward pass against finite differences, and the full implicit
/// gradient against finite differences of the composite objective with
/// thresholds re-solved at every probe.
pub fn gradcheck(config: &ExperimentConfig) -> Result<f64> {
    config.validate()?;
    let spec = config.problem.build()?;
    let seed = config.trainer.seed;
    let [train, ..] = config.dataset.load(seed)?;
    // A modest slice keeps the probe loop fast; the check is about
    // derivatives, not statistics.
    let n = train.len().min(256);
    let batch = train.subset(&(0..n).collect::<Vec<_>>())?;
    let params = model::init(&config.arch, rng::child_seed(seed, 0))?;
    let surrogate = &config.trainer.surrogate;

    let weights: Vec<f64> = (0..n)
        .map(|i| rng::f64_at(rng::child_seed(seed, 99), i as u64) - 0.5)
        .collect();
    let model_err = model::grad_check(&params, &batch.features, &weights)?;

    let solve = |p: &ModelParams| -> Result<Vec<f64>> {
        let scores = model::forward(p, &batch.features)?;
        solve_thresholds_bisection(
            &spec,
            &scores,
            &batch.labels,
            batch.groups.as_deref(),
            surrogate,
        )
    };
    let composite = |p: &ModelParams| -> Result<f64> {
        let scores = model::forward(p, &batch.features)?;
        let lambdas = solve(p)?;
        Ok(problems::evaluate(
            &spec,
            &scores,
            &batch.labels,
            batch.groups.as_deref(),
            &lambdas,
            surrogate,
        )?
        .objective)
    };

    let thresholds = ico::ThresholdState {
        lambdas: solve(&params)?,
        slacks: None,
    };
    let ig = ico::implicit_gradient(&spec, &params, &batch, &thresholds, surrogate, 0.0, false)?;

    let scale: f64 = ig.g_theta.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
    let mut worst = model_err;
    let mut probe = params.clone();
    for j in 0..params.theta.len() {
        let h = 1e-4 * params.theta[j].abs().max(1.0);
        // Two central differences and one Richardson step cancel the
        // leading truncation term, keeping the check tight even where the
        // composite has curvature.
        let at = |x: f64, probe: &mut ModelParams| -> Result<f64> {
            probe.theta[j] = x;
            let v = composite(probe);
            probe.theta[j] = params.theta[j];
            v
        };
        let x = params.theta[j];
        let d_h = (at(x + h, &mut probe)? - at(x - h, &mut probe)?) / (2.0 * h);
        let d_h2 = (at(x + 0.5 * h, &mut probe)? - at(x - 0.5 * h, &mut probe)?) / h;
        let fd = (4.0 * d_h2 - d_h) / 3.0;
        let rel = (ig.g_theta[j] - fd).abs() / scale;
        worst = worst.max(rel);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

fn curve_csv(points: &[metrics::CurvePoint]) -> String {
    let mut out = String::from("threshold,x,y\n");
    for p in points {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p.threshold, p.x, p.y));
    }
    out
}

/// Writes `roc.csv` and `pr.csv` for a model's scores on a dataset.
pub fn emit_curves(params: &ModelParams, dataset: &Dataset, out_dir: &Path) -> Result<()> {
    let scores = model::forward(params, &dataset.features)?;
    let roc = metrics::roc_points(&scores, &dataset.labels)?;
    let pr = metrics::pr_points(&scores, &dataset.labels)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("roc.csv"), curve_csv(&roc))?;
    std::fs::write(out_dir.join("pr.csv"), curve_csv(&pr))?;
    Ok(())
}
