//! Subcommand bodies. Each reads one config, writes its outputs under the
//! output directory and returns the text printed on success.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aot_core::bpe::bpe_train;
use aot_core::datapipe::{prepare_direction, reverse_chars, shuffle_split, split_with_stride, SplitConfig};
use aot_core::f2linalg::{scan_to_csv, sparsity_scan};
use aot_core::oracle::{chain_rule_check, exact_decomposition_capped, prime_entropy_report, sentence_decomposition};
use aot_core::shard::{vocab_path, write_vocab, TokenShard};
use aot_core::{Direction, F2Matrix, Language, LinearLangSpec, Sentence, TokenId};
use aot_nn::{checkpoint, Model};
use aot_train::experiments::{
    prime_experiment, sparse_update_experiment, sparsity_scan_experiment, train_directions, RunSummary, FLOOR_TOLERANCE,
};
use aot_train::parallel::map_jobs;
use aot_train::trainer::{entropy_floor_per_token, init_model};
use aot_train::{LanguageConfig, RunLog, RunSettings};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{
    load, out_dir, prepare_spec, read_input, reject_paper_scale, resolve, GenConfig, OracleConfig, Options,
    PipelineConfig, PrimesFile, ScanFile, TrainFile, UpdateFile,
};
use crate::error::{config, CliError, Result};
use crate::svg::{line_plot, Series};

/// Writes `contents` to `dir/name`, creating `dir` when needed.
fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    let fail = |source| CliError::Output { path: path.clone(), source };
    std::fs::create_dir_all(dir).map_err(fail)?;
    std::fs::write(&path, contents).map_err(fail)?;
    Ok(path)
}

fn dir_tag(d: Direction) -> String {
    d.to_string().to_lowercase()
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

/// Mean validation loss per step across `logs`.
fn mean_validation_curve<'a>(logs: impl Iterator<Item = &'a RunLog>) -> Vec<(f64, f64)> {
    let mut by_step: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for log in logs {
        for r in log.validation() {
            let e = by_step.entry(r.step).or_default();
            e.0 += r.loss;
            e.1 += 1;
        }
    }
    by_step.into_iter().map(|(s, (sum, n))| (s as f64, sum / n as f64)).collect()
}

fn curves_svg(title: &str, logs: &[&RunLog]) -> String {
    let series: Vec<Series> = Direction::BOTH
        .iter()
        .map(|&d| Series::new(d.to_string(), mean_validation_curve(logs.iter().copied().filter(|l| l.direction == d))))
        .filter(|s| !s.points.is_empty())
        .collect();
    line_plot(title, "step", "validation loss (nats/token)", &series)
}

fn write_logs(dir: &Path, prefix: &str, runs: &[&RunSummary]) -> Result<()> {
    for r in runs {
        if let Some(log) = &r.log {
            write(dir, &format!("{prefix}{}_seed{}.csv", dir_tag(r.direction), r.seed), log.to_csv())?;
        }
    }
    Ok(())
}

/// A final loss below the per-token entropy floor means the harness leaks
/// information into the model.
fn check_floor<'a>(runs: impl Iterator<Item = &'a RunSummary>) -> Result<()> {
    for r in runs {
        if !r.respects_floor() {
            return Err(CliError::Consistency(format!(
                "{} seed {} reached loss {:.6} below the entropy floor {:.6} (tolerance {FLOOR_TOLERANCE})",
                r.direction, r.seed, r.final_loss, r.floor
            )));
        }
    }
    Ok(())
}

pub fn gen(config_path: &Path, opts: &Options) -> Result<String> {
    reject_paper_scale(opts, "gen")?;
    let cfg: GenConfig = load(config_path)?;
    let out = out_dir(opts, config_path, cfg.out.as_ref());
    let seed = opts.seed_override.unwrap_or(cfg.seed);
    let language = match (&cfg.language, &cfg.matrix_file) {
        (LanguageConfig::Linear { m, noise, noise_scope, pad_count, .. }, Some(file)) => {
            let matrix: F2Matrix = read_input(&resolve(config_path, file))?.parse()?;
            if matrix.n() != *m {
                return config(format!("matrix file holds a {0}x{0} matrix but m = {m}", matrix.n()));
            }
            let mut spec = LinearLangSpec::new(matrix, *noise, *pad_count)?;
            spec.noise_scope = *noise_scope;
            Language::Linear(spec)
        }
        (_, Some(_)) => return config("matrix_file applies only to linear languages"),
        (language, None) => language.build()?,
    };
    let sentences: Vec<Vec<TokenId>> = match (&language, cfg.count) {
        (_, Some(0)) => return config("count must be at least 1"),
        (Language::Finite(f), None) => f.sentences().iter().map(|s| s.0.clone()).collect(),
        (_, None) => return config("count is required for sampled languages"),
        (l, Some(count)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| l.sample(&mut rng).0).collect()
        }
    };
    let vocab = language.vocab();
    let shard = TokenShard::new(vocab.len(), &sentences)?;
    let shard_path = write(&out, "sentences.shard", shard.to_bytes())?;
    write_vocab(&vocab_path(&shard_path), &vocab)?;
    if let Language::Linear(spec) = &language {
        write(&out, "matrix.txt", spec.matrix.to_string())?;
    }
    Ok(format!(
        "wrote {} sentences of length {} to {} (checksum {:016x})",
        shard.count(),
        shard.sentence_len,
        shard_path.display(),
        shard.checksum()
    ))
}

pub fn oracle(config_path: &Path, opts: &Options) -> Result<String> {
    reject_paper_scale(opts, "oracle")?;
    let cfg: OracleConfig = load(config_path)?;
    let out = out_dir(opts, config_path, cfg.out.as_ref());
    let lang = match cfg.language.build()? {
        Language::Primes(_) => {
            let LanguageConfig::Primes { k } = cfg.language else { unreachable!("primes config") };
            if cfg.sentence.is_some() {
                return config("sentence decompositions need an enumerable language");
            }
            let report = prime_entropy_report(k)?;
            write(&out, "prime_report.json", json(&report))?;
            return Ok(format!(
                "k={} primes={} ln_pi={:.4} H_p={:.4} H_q_given_p={:.4} H_pair={:.4}",
                report.k, report.prime_count, report.ln_pi, report.h_p, report.h_q_given_p, report.h_pair
            ));
        }
        Language::Linear(spec) => spec.finite_language()?,
        Language::Finite(f) => f,
    };
    let fw = exact_decomposition_capped(&lang, Direction::Forward, cfg.support_cap)?;
    let bw = exact_decomposition_capped(&lang, Direction::Backward, cfg.support_cap)?;
    let mut csv = fw.to_csv();
    csv.extend(bw.to_csv().lines().skip(1).map(|l| l.to_string() + "\n"));
    write(&out, "decomposition.csv", csv)?;
    let check = chain_rule_check(&lang)?;
    let summary = serde_json::json!({
        "support": lang.len(),
        "sentence_len": lang.sentence_len(),
        "fw_total": check.fw_total,
        "bw_total": check.bw_total,
        "chain_rule_difference": check.difference,
        "entropy": check.entropy,
        "fw_per_position": fw.by_natural_position(),
        "bw_per_position": bw.by_natural_position(),
    });
    write(&out, "summary.json", json(&summary))?;
    let mut text = format!(
        "support={} H_fw={:.9} H_bw={:.9} |H_fw - H_bw|={:.3e}",
        lang.len(),
        check.fw_total,
        check.bw_total,
        check.difference
    );
    if let Some(symbols) = &cfg.sentence {
        let s = Sentence(lang.vocab().encode_symbols(symbols)?);
        let mut csv = String::from("position,direction,nats\n");
        for d in Direction::BOTH {
            let nats = sentence_decomposition(&lang, &s, d)?;
            for (i, h) in nats.iter().enumerate() {
                writeln!(csv, "{i},{d},{h:.12}").unwrap();
            }
            let shown: Vec<String> = nats.iter().map(|h| format!("{h:.4}")).collect();
            write!(text, "\n{d} {symbols}: [{}]", shown.join(", ")).unwrap();
        }
        write(&out, "sentence.csv", csv)?;
    }
    Ok(text)
}

pub fn pipeline(config_path: &Path, opts: &Options) -> Result<String> {
    let cfg: PipelineConfig = load(config_path)?;
    let out = out_dir(opts, config_path, cfg.out.as_ref());
    let seed = opts.seed_override.unwrap_or(cfg.seed);
    let context_n = if opts.paper_scale { aot_nn::model::DEFAULT_CONTEXT } else { cfg.context_n };
    let raw = read_input(&resolve(config_path, &cfg.input))?;
    let text = if cfg.reverse_chars { reverse_chars(&raw) } else { raw };
    let bpe = bpe_train(&text, cfg.vocab_size)?;
    let ids = bpe.encode(&text)?;
    let split = match cfg.stride {
        Some(s) => SplitConfig::with_stride(context_n, s)?,
        None => SplitConfig::new(context_n)?,
    };
    let windows = split_with_stride(&ids, split);
    if windows.len() <= cfg.val_sentences {
        return config(format!(
            "{} windows of {} tokens cannot cover {} validation sentences",
            windows.len(),
            split.window(),
            cfg.val_sentences
        ));
    }
    let (train, val) = shuffle_split(&windows, seed, cfg.val_sentences)?;
    let prepare = |sentences: &[Vec<TokenId>]| -> Result<TokenShard> {
        let rows: Vec<Vec<TokenId>> =
            sentences.iter().map(|s| prepare_direction(s, cfg.direction, bpe.bos_id())).collect();
        Ok(TokenShard::new(bpe.vocab_size(), &rows)?)
    };
    let vocab = bpe.to_vocab();
    write(&out, "bpe.txt", bpe.to_text())?;
    let train_shard = prepare(&train.sentences)?;
    let path = write(&out, "train.shard", train_shard.to_bytes())?;
    write_vocab(&vocab_path(&path), &vocab)?;
    if !val.is_empty() {
        let path = write(&out, "val.shard", prepare(&val.sentences)?.to_bytes())?;
        write_vocab(&vocab_path(&path), &vocab)?;
    }
    Ok(format!(
        "{} tokens, vocab {}, {} train and {} val sentences of length {} ({}), train checksum {:016x}",
        ids.len(),
        bpe.vocab_size(),
        train.len(),
        val.len(),
        context_n,
        cfg.direction,
        train_shard.checksum()
    ))
}

pub fn train(config_path: &Path, opts: &Options) -> Result<String> {
    let cfg: TrainFile = load(config_path)?;
    let out = out_dir(opts, config_path, cfg.out.as_ref());
    let spec = prepare_spec(cfg.spec, opts)?;
    let data = spec.dataset()?;
    let floor = entropy_floor_per_token(&data);
    let init: Option<Model<f32>> = match &cfg.init_checkpoint {
        Some(path) => {
            let path = resolve(config_path, path);
            if !path.exists() {
                return Err(CliError::MissingInput(path));
            }
            let model = checkpoint::load(&path)?;
            let expected = spec.model.transformer(data.vocab_size(), data.sentence_len())?;
            if model.config() != &expected {
                return config("the checkpoint's model config differs from the spec's");
            }
            Some(model)
        }
        None => None,
    };
    let hash = spec.config_hash();
    let runs = map_jobs(&spec.seeds, opts.jobs, |&seed| {
        let model = match &init {
            Some(m) => m.clone(),
            None => init_model(&spec, &data, seed)?,
        };
        let settings = RunSettings::from_spec(&spec, seed)?;
        train_directions(&data, &model, &settings, &spec.directions, &hash)
    })?;
    let runs: Vec<_> = runs.into_iter().flatten().collect();
    let mut summary = String::from("seed,direction,final_loss,floor\n");
    let mut text = format!("config {hash}, entropy floor {floor:.6} nats/token\nseed  dir  final_loss");
    for r in &runs {
        let (d, seed) = (r.log.direction, r.log.seed);
        write(&out, &format!("runlog_{}_seed{seed}.csv", dir_tag(d)), r.log.to_csv())?;
        if cfg.save_checkpoints {
            let bytes = checkpoint::to_bytes(&r.model)?;
            write(&out, &format!("model_{}_seed{seed}.ckpt", dir_tag(d)), bytes)?;
        }
        writeln!(summary, "{seed},{d},{:.6},{floor:.6}", r.final_eval.loss).unwrap();
        write!(text, "\n{seed:<5} {d}   {:.6}", r.final_eval.loss).unwrap();
    }
    write(&out, "summary.csv", summary)?;
    let logs: Vec<&RunLog> = runs.iter().map(|r| &r.log).collect();
    write(&out, "curves.svg", curves_svg("FW vs BW validation loss", &logs))?;
    let summaries: Vec<RunSummary> = runs
        .iter()
        .map(|r| RunSummary {
            seed: r.log.seed,
            direction: r.log.direction,
            final_loss: r.final_eval.loss,
            floor,
            log: None,
        })
        .collect();
    check_floor(summaries.iter())?;
    Ok(text)
}

pub fn scan(config_path: &Path, opts: &Options) -> Result<String> {
    let cfg: ScanFile = load(config_path)?;
    let out = out_dir(opts, config_path, cfg.out.as_ref());
    if cfg.spec.is_none() && cfg.inverse.is_none() {
        return config("a scan config needs a spec, an inverse section, or both");
    }
    let mut text = String::new();
    if let Some(inv) = &cfg.inverse {
        let seed = opts.seed_override.unwrap_or(inv.seed);
        let rows = sparsity_scan(inv.n, &inv.k_values, inv.trials, seed)?;
        write(&out, "inverse_sparsity.csv", scan_to_csv(&rows))?;
        let points = rows.iter().map(|r| (r.k as f64, r.mean_nnz_inverse)).collect();
        let svg = line_plot("nnz of the inverse", "nnz of A", "mean nnz of A^-1", &[Series::new("A^-1", points)]);
        write(&out, "inverse_sparsity.svg", svg)?;
        writeln!(text, "k     mean_nnz_inverse  std").unwrap();
        for r in &rows {
            writeln!(text, "{:<5} {:<17.2} {:.2}", r.k, r.mean_nnz_inverse, r.std_nnz_inverse).unwrap();
        }
    }
    if let Some(spec) = cfg.spec {
        let spec = prepare_spec(spec, opts)?;
        if cfg.offsets.is_empty() {
            return config("offsets must list at least one nnz offset");
        }
        let result = sparsity_scan_experiment(&spec, &cfg.offsets, opts.jobs)?;
        write(&out, "scan.csv", result.to_csv())?;
        for p in &result.points {
            if let Some(log) = &p.run.log {
                let name = format!("runlog_k{}_{}_seed{}.csv", p.nnz_offset, dir_tag(p.run.direction), p.run.seed);
                write(&out, &name, log.to_csv())?;
            }
        }
        let series: Vec<Series> = spec
            .directions
            .iter()
            .map(|&d| {
                let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for p in result.points.iter().filter(|p| p.run.direction == d) {
                    by_k.entry(p.nnz_offset).or_default().push(p.run.final_loss);
                }
                let pts = by_k.into_iter().map(|(k, v)| (k as f64, v.iter().sum::<f64>() / v.len() as f64)).collect();
                Series::new(d.to_string(), pts)
            })
            .collect();
        write(&out, "scan.svg", line_plot("final loss vs sparsity", "nnz offset k", "final loss (nats/token)", &series))?;
        let logs: Vec<&RunLog> = result.points.iter().filter_map(|p| p.run.log.as_ref()).collect();
        write(&out, "curves.svg", curves_svg("FW vs BW validation loss, all offsets", &logs))?;
        writeln!(text, "k     mean_final_loss").unwrap();
        for (k, loss) in result.mean_by_offset() {
            writeln!(text, "{k:<5} {loss:.6}").unwrap();
        }
        let trend = result.trend();
        write!(text, "spearman rho={:.4} p={:.4}", trend.rho, trend.p_value).unwrap();
        check_floor(result.points.iter().map(|p| &p.run))?;
    }
    Ok(text.trim_end().to_string())
}

pub fn update(config_path: &Path, opts: &Options) -> Result<String> {
    let cfg: UpdateFile = load(config_path)?;
    let out = out_dir(opts, config_path, cfg.out.as_ref());
    let spec = prepare_spec(cfg.spec, opts)?;
    let result = sparse_update_experiment(&spec, &cfg.update, opts.jobs)?;
    write(&out, "update.csv", result.to_csv())?;
    let grid = result.grid();
    write(&out, "update_grid.txt", &grid)?;
    write_logs(&out, "prior_", &result.prior.iter().collect::<Vec<_>>())?;
    for r in &result.rows {
        if let Some(log) = &r.run.log {
            let name = format!("runlog_e{}_{}_seed{}.csv", r.flips, dir_tag(r.run.direction), r.run.seed);
            write(&out, &name, log.to_csv())?;
        }
    }
    let series: Vec<Series> = Direction::BOTH
        .iter()
        .map(|&d| {
            let pts = result.table().into_iter().filter(|r| r.0 == d).map(|r| (r.1 as f64, r.2)).collect();
            Series::new(d.to_string(), pts)
        })
        .collect();
    write(&out, "update.svg", line_plot("loss after fine-tuning", "bit flips e", "final loss (nats/token)", &series))?;
    let logs: Vec<&RunLog> = result.rows.iter().filter_map(|r| r.run.log.as_ref()).collect();
    write(&out, "curves.svg", curves_svg("FW vs BW fine-tuning validation loss", &logs))?;
    check_floor(result.prior.iter().chain(result.rows.iter().map(|r| &r.run)))?;
    let prior: Vec<String> = result.prior.iter().map(|p| format!("{} {:.6}", p.direction, p.final_loss)).collect();
    Ok(format!("prior: {}\n{}", prior.join(", "), grid.trim_end()))
}

pub fn primes(config_path: &Path, opts: &Options) -> Result<String> {
    let cfg: PrimesFile = load(config_path)?;
    let out = out_dir(opts, config_path, cfg.out.as_ref());
    let spec = prepare_spec(cfg.spec, opts)?;
    let result = prime_experiment(&spec, opts.jobs)?;
    write(&out, "primes.csv", result.to_csv())?;
    write(&out, "prime_report.json", json(&result.report))?;
    let runs: Vec<&RunSummary> = result.runs.iter().map(|r| &r.run).collect();
    write_logs(&out, "runlog_", &runs)?;
    let logs: Vec<&RunLog> = runs.iter().filter_map(|r| r.log.as_ref()).collect();
    write(&out, "curves.svg", curves_svg("FW vs BW validation loss", &logs))?;
    let r = &result.report;
    let mut text = format!(
        "oracle: H_p={:.4} H_q_given_p={:.4} H_pair={:.4}\ndir  p        q        rev(pq)  sep      total",
        r.h_p, r.h_q_given_p, r.h_pair
    );
    for d in &spec.directions {
        if let Some(f) = result.mean_fields(*d) {
            write!(
                text,
                "\n{d}   {:<8.4} {:<8.4} {:<8.4} {:<8.4} {:.4}",
                f.p,
                f.q,
                f.product,
                f.separators,
                f.total()
            )
            .unwrap();
        }
    }
    check_floor(runs.into_iter())?;
    Ok(text)
}
