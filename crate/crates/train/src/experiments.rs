//! The three synthetic experiments: loss against matrix sparsity, sparse
//! updates of a learned linear language, and the prime-product language.

use std::fmt::Write as _;

use aot_core::f2linalg::{perturb_invertible, F2Matrix};
use aot_core::langgen::{Language, LinearLangSpec};
use aot_core::oracle::{prime_entropy_report, PrimeEntropyReport};
use aot_core::Direction;
use aot_nn::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result, TrainError};
use crate::parallel::map_jobs;
use crate::runlog::RunLog;
use crate::schedule::LrSchedule;
use crate::spec::{linear_matrix, mix, Dataset, ExperimentSpec, LanguageConfig, RunSeeds};
use crate::stats::{mean_std, spearman_permutation_test, SpearmanTest};
use crate::trainer::{entropy_floor_per_token, evaluate, init_model, train_run, Evaluation, RunOutput, RunSettings};

/// Allowed shortfall of a validation loss below the entropy floor, covering
/// the sampling error of a finite validation set.
pub const FLOOR_TOLERANCE: f64 = 0.02;

/// Final validation loss of one run together with the per-token floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub direction: Direction,
    pub final_loss: f64,
    pub floor: f64,
    /// Full training record; not serialized.
    #[serde(skip)]
    pub log: Option<RunLog>,
}

impl RunSummary {
    pub fn respects_floor(&self) -> bool {
        self.final_loss >= self.floor - FLOOR_TOLERANCE
    }
}

fn summarize(run: &RunOutput, floor: f64) -> RunSummary {
    RunSummary {
        seed: run.log.seed,
        direction: run.log.direction,
        final_loss: run.final_eval.loss,
        floor,
        log: Some(run.log.clone()),
    }
}

/// Trains the requested directions of one seed from a shared init and
/// checks that they consumed identical streams.
pub fn train_directions(
    data: &Dataset,
    model: &Model<f32>,
    settings: &RunSettings,
    directions: &[Direction],
    config_hash: &str,
) -> Result<Vec<RunOutput>> {
    let runs = directions
        .iter()
        .map(|&d| train_run(model.clone(), data, settings, d, config_hash))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = runs.first() {
        if runs.iter().any(|r| r.stream_checksum != first.stream_checksum) {
            return Err(TrainError::Consistency("directions consumed different batch streams".into()));
        }
    }
    Ok(runs)
}

fn linear_params(spec: &ExperimentSpec) -> Result<(usize, usize, u64)> {
    match spec.language {
        LanguageConfig::Linear { m, nnz_offset, matrix_seed, .. } => Ok((m, nnz_offset, matrix_seed)),
        _ => config_err("this experiment needs a linear language"),
    }
}

fn with_language(spec: &ExperimentSpec, language: LanguageConfig) -> ExperimentSpec {
    ExperimentSpec { language, ..spec.clone() }
}

fn set_linear(spec: &ExperimentSpec, offset: usize, matrix_seed: u64) -> ExperimentSpec {
    let mut language = spec.language.clone();
    if let LanguageConfig::Linear { nnz_offset, matrix_seed: ms, .. } = &mut language {
        *nnz_offset = offset;
        *ms = matrix_seed;
    }
    with_language(spec, language)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub nnz_offset: usize,
    pub nnz_inverse: usize,
    #[serde(flatten)]
    pub run: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub m: usize,
    pub points: Vec<ScanPoint>,
}

impl ScanResult {
    /// Mean final loss per offset, averaged over seeds and directions.
    pub fn mean_by_offset(&self) -> Vec<(usize, f64)> {
        let mut offsets: Vec<usize> = self.points.iter().map(|p| p.nnz_offset).collect();
        offsets.sort_unstable();
        offsets.dedup();
        offsets
            .into_iter()
            .map(|k| {
                let losses: Vec<f64> =
                    self.points.iter().filter(|p| p.nnz_offset == k).map(|p| p.run.final_loss).collect();
                (k, mean_std(&losses).0)
            })
            .collect()
    }

    /// Spearman correlation of mean final loss against the offset.
    pub fn trend(&self) -> SpearmanTest {
        let means = self.mean_by_offset();
        let ks: Vec<f64> = means.iter().map(|m| m.0 as f64).collect();
        let losses: Vec<f64> = means.iter().map(|m| m.1).collect();
        spearman_permutation_test(&ks, &losses, 0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,direction,seed,nnz_inverse,final_loss,floor\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6}",
                p.nnz_offset, p.run.direction, p.run.seed, p.nnz_inverse, p.run.final_loss, p.run.floor
            )
            .unwrap();
        }
        out
    }
}

/// Trains every direction of `spec` for each offset and seed. The matrix
/// is redrawn for every (offset, seed) pair from the spec's matrix seed.
pub fn sparsity_scan_experiment(spec: &ExperimentSpec, offsets: &[usize], jobs: usize) -> Result<ScanResult> {
    let (m, _, matrix_seed) = linear_params(spec)?;
    if offsets.is_empty() {
        return config_err("the offset grid is empty");
    }
    let tasks: Vec<(usize, u64)> = offsets.iter().flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s))).collect();
    let results = map_jobs(&tasks, jobs, |&(k, seed)| {
        let run_spec = set_linear(spec, k, mix(matrix_seed, seed));
        run_spec.validate()?;
        let data = run_spec.dataset()?;
        let nnz_inverse = match &data.language {
            Language::Linear(l) => l.matrix.invert()?.nnz(),
            _ => unreachable!("linear language"),
        };
        let floor = entropy_floor_per_token(&data);
        let model = init_model(&run_spec, &data, seed)?;
        let settings = RunSettings::from_spec(&run_spec, seed)?;
        let runs = train_directions(&data, &model, &settings, &run_spec.directions, &run_spec.config_hash())?;
        Ok(runs
            .iter()
            .map(|r| ScanPoint { nnz_offset: k, nnz_inverse, run: summarize(r, floor) })
            .collect::<Vec<_>>())
    })?;
    Ok(ScanResult { m, points: results.into_iter().flatten().collect() })
}

/// Fine-tuning protocol applied after a perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateConfig {
    pub flips: Vec<usize>,
    #[serde(default = "default_update_steps")]
    pub steps: usize,
    #[serde(default = "default_update_lr")]
    pub lr: f64,
    #[serde(default = "default_update_warmup")]
    pub warmup_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

fn default_update_steps() -> usize {
    400
}

fn default_update_lr() -> f64 {
    8e-6
}

fn default_update_warmup() -> usize {
    10
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self { flips: vec![2, 4, 6], steps: 400, lr: 8e-6, warmup_steps: 10, batch_size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub flips: usize,
    /// Rows of `M` and of `M^-1` altered by the perturbation.
    pub rows_changed: usize,
    pub rows_changed_inverse: usize,
    /// Loss of the prior model on the perturbed language before tuning.
    pub loss_before: f64,
    #[serde(flatten)]
    pub run: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateResult {
    /// Validation loss of the priors on the base language.
    pub prior: Vec<RunSummary>,
    pub rows: Vec<UpdateRow>,
}

impl UpdateResult {
    /// Mean and standard deviation of the final loss per direction and flip
    /// count.
    pub fn table(&self) -> Vec<(Direction, usize, f64, f64)> {
        let mut flips: Vec<usize> = self.rows.iter().map(|r| r.flips).collect();
        flips.sort_unstable();
        flips.dedup();
        let mut out = Vec::new();
        for d in Direction::BOTH {
            for &e in &flips {
                let losses: Vec<f64> =
                    self.rows.iter().filter(|r| r.flips == e && r.run.direction == d).map(|r| r.run.final_loss).collect();
                if !losses.is_empty() {
                    let (mean, std) = mean_std(&losses);
                    out.push((d, e, mean, std));
                }
            }
        }
        out
    }

    pub fn mean_loss(&self, direction: Direction, flips: usize) -> Option<f64> {
        self.table().into_iter().find(|r| r.0 == direction && r.1 == flips).map(|r| r.2)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("flips,direction,seed,rows_changed,rows_changed_inverse,loss_before,final_loss,floor\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6}",
                r.flips,
                r.run.direction,
                r.run.seed,
                r.rows_changed,
                r.rows_changed_inverse,
                r.loss_before,
                r.run.final_loss,
                r.run.floor
            )
            .unwrap();
        }
        out
    }

    /// The direction x flips grid as text, `mean ± std` per cell.
    pub fn grid(&self) -> String {
        let table = self.table();
        let mut flips: Vec<usize> = table.iter().map(|r| r.1).collect();
        flips.sort_unstable();
        flips.dedup();
        let mut out = String::from("   ");
        for e in &flips {
            write!(out, " | {e}-bit flips      ").unwrap();
        }
        out.push('\n');
        for d in Direction::BOTH {
            write!(out, "{d} ").unwrap();
            for &e in &flips {
                match table.iter().find(|r| r.0 == d && r.1 == e) {
                    Some(r) => write!(out, " | {:.3} ± {:.3}    ", r.2, r.3).unwrap(),
                    None => out.push_str(" |                  "),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Rows in which two matrices differ.
pub fn changed_rows(a: &F2Matrix, b: &F2Matrix) -> usize {
    a.to_rows().iter().zip(b.to_rows()).filter(|(x, y)| **x != *y).count()
}

/// Trains FW and BW priors on the spec's language with its first seed, then
/// for every seed and flip count perturbs the matrix, samples a fresh
/// dataset and fine-tunes both priors under `update`.
pub fn sparse_update_experiment(spec: &ExperimentSpec, update: &UpdateConfig, jobs: usize) -> Result<UpdateResult> {
    let (m, offset, matrix_seed) = linear_params(spec)?;
    if update.flips.is_empty() || update.steps == 0 {
        return config_err("the update needs at least one flip count and one step");
    }
    let base_matrix = linear_matrix(m, offset, matrix_seed)?;
    let base_data = spec.dataset()?;
    let Language::Linear(base_lang) = &base_data.language else { unreachable!("linear language") };
    let floor = entropy_floor_per_token(&base_data);
    let prior_seed = spec.seeds[0];
    let init = init_model(spec, &base_data, prior_seed)?;
    let prior_settings = RunSettings::from_spec(spec, prior_seed)?;
    let priors = train_directions(&base_data, &init, &prior_settings, &Direction::BOTH, &spec.config_hash())?;
    let prior_summary: Vec<RunSummary> = priors.iter().map(|r| summarize(r, floor)).collect();

    let tune_schedule = LrSchedule::single_cycle(update.lr, update.warmup_steps, update.steps)?;
    let tasks: Vec<(u64, usize)> = spec.seeds.iter().flat_map(|&s| update.flips.iter().map(move |&e| (s, e))).collect();
    let rows = map_jobs(&tasks, jobs, |&(seed, e)| {
        let seeds = RunSeeds::from_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seeds.perturbation, e as u64));
        let matrix = perturb_invertible(&base_matrix, e, &mut rng)?;
        let rows_changed = changed_rows(&base_matrix, &matrix);
        let rows_changed_inverse = changed_rows(&base_matrix.invert()?, &matrix.invert()?);
        let language = LinearLangSpec { matrix, ..base_lang.clone() };
        let t = &spec.train;
        let data = Dataset::sample(Language::Linear(language), t.train_sentences, t.val_sentences, mix(t.data_seed, seed))?;
        let settings = RunSettings {
            batch_size: update.batch_size.unwrap_or(t.batch_size),
            steps: update.steps,
            eval_every: t.eval_every.min(update.steps),
            schedule: tune_schedule,
            optimizer: t.optimizer,
            seeds,
        };
        let mut out = Vec::new();
        let mut checksum = None;
        for prior in &priors {
            let d = prior.log.direction;
            let before: Evaluation = evaluate(&prior.model, &data.val, d, data.bos, settings.batch_size)?;
            let run = train_run(prior.model.clone(), &data, &settings, d, &spec.config_hash())?;
            if *checksum.get_or_insert(run.stream_checksum) != run.stream_checksum {
                return Err(TrainError::Consistency("fine-tuning streams differ between directions".into()));
            }
            out.push(UpdateRow {
                flips: e,
                rows_changed,
                rows_changed_inverse,
                loss_before: before.loss,
                run: summarize(&run, floor),
            });
        }
        Ok(out)
    })?;
    Ok(UpdateResult { prior: prior_summary, rows: rows.into_iter().flatten().collect() })
}

/// Summed per-position losses over the fields of a prime sentence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldLosses {
    pub p: f64,
    pub q: f64,
    pub product: f64,
    /// The `×` and `↔` separator positions.
    pub separators: f64,
}

impl FieldLosses {
    pub fn total(&self) -> f64 {
        self.p + self.q + self.product
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimeRun {
    #[serde(flatten)]
    pub run: RunSummary,
    pub fields: FieldLosses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimeResult {
    pub report: PrimeEntropyReport,
    pub runs: Vec<PrimeRun>,
}

impl PrimeResult {
    /// Mean field losses over seeds for one direction.
    pub fn mean_fields(&self, direction: Direction) -> Option<FieldLosses> {
        let runs: Vec<&FieldLosses> = self.runs.iter().filter(|r| r.run.direction == direction).map(|r| &r.fields).collect();
        if runs.is_empty() {
            return None;
        }
        let n = runs.len() as f64;
        let avg = |f: fn(&FieldLosses) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(FieldLosses { p: avg(|f| f.p), q: avg(|f| f.q), product: avg(|f| f.product), separators: avg(|f| f.separators) })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction,seed,p,q,rev_pq,separators,total,final_loss\n");
        for r in &self.runs {
            let f = &r.fields;
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.run.direction,
                r.run.seed,
                f.p,
                f.q,
                f.product,
                f.separators,
                f.total(),
                r.run.final_loss
            )
            .unwrap();
        }
        out
    }
}

/// Splits natural-order per-position losses into the prime sentence fields.
pub fn field_losses(per_position: &[f64], ranges: &[std::ops::Range<usize>; 3]) -> FieldLosses {
    let sum = |r: &std::ops::Range<usize>| per_position[r.clone()].iter().sum::<f64>();
    let fields = [sum(&ranges[0]), sum(&ranges[1]), sum(&ranges[2])];
    let all: f64 = per_position.iter().sum();
    FieldLosses { p: fields[0], q: fields[1], product: fields[2], separators: all - fields.iter().sum::<f64>() }
}

/// Trains every direction and seed of `spec` on the prime language.
pub fn prime_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<PrimeResult> {
    let LanguageConfig::Primes { k } = spec.language else {
        return config_err("the prime experiment needs a primes language");
    };
    let report = prime_entropy_report(k)?;
    let data = spec.dataset()?;
    let Language::Primes(lang) = &data.language else { unreachable!("primes language") };
    let ranges = lang.field_ranges();
    let floor = entropy_floor_per_token(&data);
    let runs = map_jobs(&spec.seeds, jobs, |&seed| {
        let model = init_model(spec, &data, seed)?;
        let settings = RunSettings::from_spec(spec, seed)?;
        let runs = train_directions(&data, &model, &settings, &spec.directions, &spec.config_hash())?;
        Ok(runs
            .iter()
            .map(|r| PrimeRun { run: summarize(r, floor), fields: field_losses(&r.final_eval.per_position, &ranges) })
            .collect::<Vec<_>>())
    })?;
    Ok(PrimeResult { report, runs: runs.into_iter().flatten().collect() })
}
