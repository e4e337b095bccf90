//! Acceptance gate: one PASS/FAIL line per criterion. Experiment settings
//! come from the shipped configs so that the gate and the CLI agree.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aot_core::bpe::bpe_train;
use aot_core::datapipe::{
    make_batch, prepare_direction, recover_payload, reverse_chars, split_with_stride, SentenceSet, SplitConfig,
};
use aot_core::f2linalg::sparsity_scan;
use aot_core::langgen::mult_toy_language;
use aot_core::oracle::{chain_rule_check, exact_decomposition, prime_entropy_report, sentence_decomposition};
use aot_core::{Direction, FiniteLanguage, Sentence, Vocab};
use aot_lab::config::{load, prepare_spec, PrimesFile, ScanFile, TrainFile, UpdateFile};
use aot_lab::Options;
use aot_nn::gradcheck::OpCase;
use aot_train::experiments::{
    prime_experiment, sparse_update_experiment, sparsity_scan_experiment, RunSummary, FLOOR_TOLERANCE,
};
use aot_train::spec::RunSeeds;
use aot_train::trainer::{init_model, BatchStream};
use aot_train::{ExperimentSpec, LanguageConfig};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String), String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn desk_spec(spec: ExperimentSpec) -> Result<ExperimentSpec, String> {
    prepare_spec(spec, &Options::default()).map_err(err)
}

/// Random finite language with at most 500 sentences.
fn random_language(rng: &mut ChaCha8Rng) -> FiniteLanguage {
    let v = rng.gen_range(2..=4usize);
    let len = rng.gen_range(1..=5u32);
    let total = v.pow(len);
    let support = rng.gen_range(1..=total.min(500));
    let sentences = sample(rng, total, support)
        .into_iter()
        .map(|mut idx| {
            let mut s = Vec::with_capacity(len as usize);
            for _ in 0..len {
                s.push((idx % v) as u32);
                idx /= v;
            }
            Sentence(s)
        })
        .collect();
    let weights = (0..support).map(|_| rng.gen_range(0.01..1.0)).collect();
    let vocab = Vocab::new((0..v).map(|i| format!("t{i}"))).expect("distinct");
    FiniteLanguage::from_weights(vocab, sentences, weights).expect("valid language")
}

fn criterion_1() -> Check {
    let mut worst = chain_rule_check(&mult_toy_language()).map_err(err)?.difference;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let lang = random_language(&mut rng);
        worst = worst.max(chain_rule_check(&lang).map_err(err)?.difference);
    }
    Ok((worst < 1e-9, format!("max |H_fw - H_bw| = {worst:.2e} over mult-toy + 100 random languages")))
}

/// `-ln P(token | context)` by counting over the whole support.
fn brute_force_decomposition(lang: &FiniteLanguage, s: &Sentence, direction: Direction) -> Vec<f64> {
    let n = s.len();
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..n).collect(),
        Direction::Backward => (0..n).rev().collect(),
    };
    let mass = |positions: &[usize]| -> f64 {
        lang.sentences()
            .iter()
            .zip(lang.probs())
            .filter(|(t, _)| positions.iter().all(|&i| t.0[i] == s.0[i]))
            .map(|(_, p)| p)
            .sum()
    };
    let mut out = vec![0.0; n];
    for step in 0..n {
        let ctx = &order[..step];
        out[order[step]] = -(mass(&order[..=step]) / mass(ctx)).ln();
    }
    out
}

fn criterion_2() -> Check {
    let lang = mult_toy_language();
    let digits = [0, 2, 4, 5];
    let fw = exact_decomposition(&lang, Direction::Forward).map_err(err)?.by_natural_position();
    let fw_digits: Vec<f64> = digits.iter().map(|&i| fw[i]).collect();
    let ln9 = 9f64.ln();
    let fw_ok = fw_digits.iter().zip([ln9, ln9, 0.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-6);

    let s = Sentence(lang.vocab().encode_symbols("3×4=12").map_err(err)?);
    let bw = sentence_decomposition(&lang, &s, Direction::Backward).map_err(err)?;
    let brute = brute_force_decomposition(&lang, &s, Direction::Backward);
    let bw_digits: Vec<f64> = digits.iter().map(|&i| bw[i]).collect();
    let oracle_ok = digits.iter().all(|&i| (bw[i] - brute[i]).abs() < 1e-9);
    let rounded_ok = bw_digits.iter().zip([0.0, 1.39, 1.1, 1.91]).all(|(a, b)| (a - b).abs() < 0.01);
    let show = |v: &[f64]| v.iter().map(|&x| format!("{:.4}", if x.abs() < 5e-5 { 0.0 } else { x })).collect::<Vec<_>>().join(", ");
    Ok((
        fw_ok && oracle_ok && rounded_ok,
        format!("FW digits ({}), BW 3×4=12 digits ({})", show(&fw_digits), show(&bw_digits)),
    ))
}

fn criterion_3() -> Check {
    let r = prime_entropy_report(5).map_err(err)?;
    let ok = (r.ln_pi - 9.17).abs() < 0.01
        && (r.h_p - 8.98).abs() < 0.01
        && (r.h_q_given_p - 8.67).abs() < 0.01
        && (r.h_pair - 17.64).abs() < 0.01
        && (r.h_pair - (2.0 * r.ln_pi - 2f64.ln())).abs() < 0.02;
    Ok((
        ok,
        format!(
            "ln_pi={:.4} H_p={:.4} H_q|p={:.4} H_pair={:.4} (pi={})",
            r.ln_pi, r.h_p, r.h_q_given_p, r.h_pair, r.prime_count
        ),
    ))
}

fn criterion_4() -> Check {
    let file: ScanFile = load(&configs().join("scan_inverse.json")).map_err(err)?;
    let inv = file.inverse.ok_or("scan_inverse.json has no inverse section")?;
    let grid_ok = inv.n == 30 && inv.trials >= 200 && inv.k_values.iter().all(|k| (30..=250).contains(k));
    let rows = sparsity_scan(inv.n, &inv.k_values, inv.trials, inv.seed).map_err(err)?;
    let plateau_rows: Vec<_> = rows.iter().filter(|r| r.k >= 200).collect();
    if plateau_rows.is_empty() {
        return Err("the k grid does not reach the plateau region k >= 200".into());
    }
    let plateau = plateau_rows.iter().map(|r| r.mean_nnz_inverse).sum::<f64>() / plateau_rows.len() as f64;
    let trials = inv.trials as f64;
    // Strictly rising below the plateau; beyond it, no drop larger than two
    // standard errors of the difference.
    let monotone = rows.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        if b.mean_nnz_inverse < 0.95 * plateau {
            b.mean_nnz_inverse > a.mean_nnz_inverse
        } else {
            let se = (a.std_nnz_inverse.powi(2) + b.std_nnz_inverse.powi(2)).sqrt() / trials.sqrt();
            b.mean_nnz_inverse >= a.mean_nnz_inverse - 2.0 * se
        }
    });
    let ok = grid_ok && monotone && (405.0..=495.0).contains(&plateau);
    Ok((ok, format!("n=30, {} k values, {} trials, plateau mean {plateau:.1}, monotone={monotone}", rows.len(), inv.trials)))
}

fn criterion_5() -> Check {
    let mut worst32: f64 = 0.0;
    let mut worst64: f64 = 0.0;
    let mut failures = Vec::new();
    for op in OpCase::ALL {
        for seed in 0..5 {
            let r64 = op.check::<f64>(seed).map_err(err)?;
            let r32 = op.check::<f32>(seed).map_err(err)?;
            worst64 = worst64.max(r64.rel_error);
            worst32 = worst32.max(r32.rel_error);
            if !r64.passes::<f64>() || !r32.passes::<f32>() {
                failures.push(format!("{}@{seed}", op.name()));
            }
        }
    }
    Ok((
        failures.is_empty(),
        format!(
            "{} ops x 5 points, max rel error f32 {worst32:.1e}, f64 {worst64:.1e}{}",
            OpCase::ALL.len(),
            if failures.is_empty() { String::new() } else { format!(", failing {}", failures.join(" ")) }
        ),
    ))
}

/// Loss of a fresh model on the first training batch of `spec`.
fn fresh_loss(spec: &ExperimentSpec) -> Result<(f64, f64), String> {
    let data = spec.dataset().map_err(err)?;
    let seed = spec.seeds[0];
    let model = init_model(spec, &data, seed).map_err(err)?;
    let mut stream = BatchStream::new(data.train.len(), RunSeeds::from_seed(seed).order);
    let members = stream.next_members(spec.train.batch_size);
    let batch = make_batch(&data.train, &members, Direction::Forward, data.bos);
    let n = data.sentence_len();
    let (mut ids, mut targets) = (Vec::new(), Vec::new());
    for r in 0..batch.rows {
        let row = batch.row(r);
        ids.extend_from_slice(&row[..n]);
        targets.extend(row[1..].iter().map(|&t| t as usize));
    }
    let ids: Vec<usize> = ids.into_iter().map(|t| t as usize).collect();
    let eval = model.evaluate(&ids, &targets, batch.rows, n).map_err(err)?;
    Ok((f64::from(eval.mean), (data.vocab_size() as f64).ln()))
}

fn criterion_6(specs: &[ExperimentSpec], runs: &[RunSummary]) -> Check {
    let mut fresh_ok = true;
    let mut fresh = Vec::new();
    for spec in specs {
        let (loss, ln_v) = fresh_loss(spec)?;
        fresh_ok &= ((loss - ln_v) / ln_v).abs() < 0.05;
        fresh.push(format!("{loss:.4} vs ln V {ln_v:.4}"));
    }
    let below: Vec<_> = runs.iter().filter(|r| !r.respects_floor()).collect();
    let margin = runs.iter().map(|r| r.final_loss - r.floor).fold(f64::INFINITY, f64::min);
    Ok((
        fresh_ok && !runs.is_empty() && below.is_empty(),
        format!(
            "fresh loss {}; {} trained runs, {} below floor (tol {FLOOR_TOLERANCE}), min loss - floor {margin:.4}",
            fresh.join(", "),
            runs.len(),
            below.len()
        ),
    ))
}

fn criterion_7(runs: &mut Vec<RunSummary>) -> Check {
    let file: ScanFile = load(&configs().join("scan_sparsity.json")).map_err(err)?;
    let spec = desk_spec(file.spec.ok_or("scan_sparsity.json has no spec")?)?;
    let LanguageConfig::Linear { m, .. } = spec.language else { return Err("scan needs a linear language".into()) };
    let cfg = spec.model.transformer(4, 2 * m + 8).map_err(err)?;
    let mut offsets = file.offsets.clone();
    offsets.sort_unstable();
    let setup_ok = m == 12 && offsets == [0, 4, 10, 20, 40] && spec.seeds.len() >= 3 && cfg.d_embed <= 192 && cfg.n_layers <= 6;
    let result = sparsity_scan_experiment(&spec, &file.offsets, jobs()).map_err(err)?;
    runs.extend(result.points.iter().map(|p| p.run.clone()));
    let trend = result.trend();
    let means: Vec<String> = result.mean_by_offset().iter().map(|(k, l)| format!("{k}:{l:.4}")).collect();
    Ok((
        setup_ok && trend.rho > 0.0 && trend.p_value < 0.05,
        format!("mean final loss by k [{}], rho={:.2}, p={:.4}", means.join(" "), trend.rho, trend.p_value),
    ))
}

fn criterion_8(runs: &mut Vec<RunSummary>) -> Check {
    let file: UpdateFile = load(&configs().join("update.json")).map_err(err)?;
    let spec = desk_spec(file.spec)?;
    let u = &file.update;
    let setup_ok = matches!(spec.language, LanguageConfig::Linear { m: 20, nnz_offset: 6, .. })
        && u.flips.contains(&4)
        && u.flips.contains(&6)
        && spec.seeds.len() >= 5
        && u.steps == 400
        && (u.lr - 8e-6).abs() < 1e-12;
    let result = sparse_update_experiment(&spec, u, jobs()).map_err(err)?;
    runs.extend(result.prior.iter().cloned());
    runs.extend(result.rows.iter().map(|r| r.run.clone()));
    let mut ok = setup_ok;
    let mut cells = Vec::new();
    for e in [4, 6] {
        let fw = result.mean_loss(Direction::Forward, e).ok_or("missing FW cell")?;
        let bw = result.mean_loss(Direction::Backward, e).ok_or("missing BW cell")?;
        ok &= fw < bw;
        cells.push(format!("e={e}: FW {fw:.4} BW {bw:.4}"));
    }
    let prior: Vec<String> = result.prior.iter().map(|p| format!("{} {:.4}", p.direction, p.final_loss)).collect();
    Ok((ok, format!("{} seeds; {}; prior {}", spec.seeds.len(), cells.join(", "), prior.join(" "))))
}

fn criterion_9(runs: &mut Vec<RunSummary>) -> Check {
    let file: PrimesFile = load(&configs().join("primes.json")).map_err(err)?;
    let spec = desk_spec(file.spec)?;
    let setup_ok = spec.language == LanguageConfig::Primes { k: 2 };
    let result = prime_experiment(&spec, jobs()).map_err(err)?;
    runs.extend(result.runs.iter().map(|r| r.run.clone()));
    let fw = result.mean_fields(Direction::Forward).ok_or("no FW runs")?;
    let bw = result.mean_fields(Direction::Backward).ok_or("no BW runs")?;
    let r = &result.report;
    let within = |got: f64, want: f64| ((got - want) / want).abs() <= 0.15;
    let ok = setup_ok && fw.total() <= bw.total() && within(fw.p, r.h_p) && within(fw.q, r.h_q_given_p);
    Ok((
        ok,
        format!(
            "total FW {:.3} vs BW {:.3}; FW p {:.3} (H_p {:.3}), FW q {:.3} (H_q|p {:.3})",
            fw.total(),
            bw.total(),
            fw.p,
            r.h_p,
            fw.q,
            r.h_q_given_p
        ),
    ))
}

fn criterion_10() -> Check {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    // ABCDEF with n = 5 (four payload tokens) and stride 2.
    let split = split_with_stride(&[0, 1, 2, 3, 4, 5], SplitConfig::new(5).map_err(err)?);
    check("split", split == vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5]]);

    let bos = 9;
    let s = [1, 2, 3, 4];
    let fw = prepare_direction(&s, Direction::Forward, bos);
    let bw = prepare_direction(&s, Direction::Backward, bos);
    check("bos", fw == [9, 1, 2, 3, 4] && bw == [9, 4, 3, 2, 1]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sentences: Vec<Vec<u32>> = (0..20).map(|_| (0..6).map(|_| rng.gen_range(0..9)).collect()).collect();
    let set = SentenceSet { sentences, source_indices: (0..20).collect(), seed: 0 };
    let members: Vec<usize> = (0..20).rev().step_by(3).collect();
    let a = make_batch(&set, &members, Direction::Forward, bos);
    let b = make_batch(&set, &members, Direction::Backward, bos);
    let same = (0..a.rows).all(|r| {
        recover_payload(a.row(r), Direction::Forward) == recover_payload(b.row(r), Direction::Backward)
    });
    check("batch reversal", same && a.rows == members.len());

    let corpus = "the quick brown fox jumps over the lazy dog; the dog sleeps. ".repeat(10);
    let m1 = bpe_train(&corpus, 40).map_err(err)?;
    let m2 = bpe_train(&corpus, 40).map_err(err)?;
    let ids = m1.encode(&corpus).map_err(err)?;
    check("bpe", m1 == m2 && m1.to_text() == m2.to_text() && m1.decode(&ids).map_err(err)? == corpus);

    let texts = ["", "abc", "naïve café ∑ → ok", "line one\nline two"];
    check("reverse chars", texts.iter().all(|t| reverse_chars(&reverse_chars(t)) == *t) && reverse_chars("abc") == "cba");
    let ok = failed.is_empty();
    Ok((ok, if ok { "split, BOS, batch reversal, BPE, character reversal".into() } else { format!("failing: {}", failed.join(", ")) }))
}

fn criterion_11() -> Check {
    let paper = Options { paper_scale: true, ..Options::default() };
    let mut specs = Vec::new();
    let dir = configs();
    specs.push(load::<TrainFile>(&dir.join("train_linear.json")).map_err(err)?.spec);
    specs.push(load::<ScanFile>(&dir.join("scan_sparsity.json")).map_err(err)?.spec.ok_or("no spec")?);
    specs.push(load::<UpdateFile>(&dir.join("update.json")).map_err(err)?.spec);
    specs.push(load::<PrimesFile>(&dir.join("primes.json")).map_err(err)?.spec);
    let mut ok = true;
    for spec in specs.iter().cloned() {
        let s = prepare_spec(spec, &paper).map_err(err)?;
        let cfg = s.model.transformer(13, 64).map_err(err)?;
        ok &= cfg.d_embed == 768 && cfg.n_layers == 12 && s.train.batch_size == 200 && s.train.train_sentences == 600_000;
    }
    Ok((
        ok,
        format!("not reproducible at desk scale; {} configs load and validate at paper scale (GPT1, 600k sentences, batch 200)", specs.len()),
    ))
}

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(id: u32, limit: Option<Duration>, f: impl FnOnce() -> Check) -> Outcome {
    eprintln!("acceptance: running criterion {id}");
    let t = Instant::now();
    let result = f();
    let elapsed = t.elapsed();
    let (pass, mut detail) = match result {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = limit.map_or(true, |l| elapsed <= l);
    if !in_time {
        detail.push_str(&format!("; over the {:?} limit", limit.expect("set")));
    }
    Outcome { id, pass: pass && in_time, detail, elapsed }
}

fn main() -> ExitCode {
    let mut runs = Vec::new();
    let mut out = vec![
        timed(1, Some(Duration::from_secs(10)), criterion_1),
        timed(2, Some(Duration::from_secs(1)), criterion_2),
        timed(3, Some(Duration::from_secs(5)), criterion_3),
        timed(4, Some(minutes(2)), criterion_4),
        timed(5, Some(minutes(1)), criterion_5),
        timed(7, Some(minutes(60)), || criterion_7(&mut runs)),
        timed(8, Some(minutes(60)), || criterion_8(&mut runs)),
        timed(9, Some(minutes(45)), || criterion_9(&mut runs)),
        timed(10, Some(Duration::from_secs(10)), criterion_10),
        timed(11, None, criterion_11),
    ];
    let fresh_specs = || -> Result<Vec<ExperimentSpec>, String> {
        let scan: ScanFile = load(&configs().join("scan_sparsity.json")).map_err(err)?;
        let primes: PrimesFile = load(&configs().join("primes.json")).map_err(err)?;
        Ok(vec![desk_spec(scan.spec.ok_or("no spec")?)?, desk_spec(primes.spec)?])
    };
    out.push(timed(6, None, || criterion_6(&fresh_specs()?, &runs)));
    out.sort_by_key(|o| o.id);

    let mut all = true;
    for o in &out {
        all &= o.pass;
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2}: {tag} ({:.1}s) {}", o.id, o.elapsed.as_secs_f64(), o.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
