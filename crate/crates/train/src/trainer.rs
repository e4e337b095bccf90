//! The training loop and paired forward/backward runs.

use aot_core::datapipe::{make_batch, permutation, Fnv64, SentenceSet};
use aot_core::{Direction, TokenId};
use aot_nn::{loss_and_per_token, Graph, Model, NnError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TrainError};
use crate::optim::{AdamW, AdamWConfig};
use crate::runlog::{Record, RunLog, Split};
use crate::schedule::LrSchedule;
use crate::spec::{mix, Dataset, ExperimentSpec, RunSeeds};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub batch_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub schedule: LrSchedule,
    pub optimizer: AdamWConfig,
    pub seeds: RunSeeds,
}

impl RunSettings {
    pub fn from_spec(spec: &ExperimentSpec, seed: u64) -> Result<Self> {
        let t = &spec.train;
        Ok(Self {
            batch_size: t.batch_size,
            steps: t.steps,
            eval_every: t.eval_every,
            schedule: spec.schedule()?,
            optimizer: t.optimizer,
            seeds: RunSeeds::from_seed(seed),
        })
    }
}

/// Validation loss, with the mean loss at each natural sentence position.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub per_position: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: Model<f32>,
    pub log: RunLog,
    /// Hash of every batch payload and dropout seed consumed.
    pub stream_checksum: u64,
    pub final_eval: Evaluation,
}

/// Batch member indices for every step: consecutive slices of a stream of
/// seeded permutations, one per epoch.
pub struct BatchStream {
    len: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(len: usize, seed: u64) -> Self {
        Self { len, seed, epoch: 0, order: permutation(len, mix(seed, 0)), pos: 0 }
    }

    pub fn next_members(&mut self, batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.order = permutation(self.len, mix(self.seed, self.epoch));
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn to_usize(ids: &[TokenId]) -> Vec<usize> {
    ids.iter().map(|&t| t as usize).collect()
}

/// Inputs and next-token targets of a prepared batch of `[BOS] ++ payload`
/// rows.
fn inputs_and_targets(tokens: &[TokenId], rows: usize, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ids = Vec::with_capacity(rows * (n - 1));
    let mut targets = Vec::with_capacity(rows * (n - 1));
    for r in 0..rows {
        let row = &tokens[r * n..(r + 1) * n];
        ids.extend(to_usize(&row[..n - 1]));
        targets.extend(to_usize(&row[1..]));
    }
    (ids, targets)
}

fn numeric(step: usize) -> impl Fn(NnError) -> TrainError {
    move |e| match e {
        NnError::NumericFault { op } => TrainError::NumericFault { step, detail: format!("non-finite output of {op}") },
        other => TrainError::Nn(other),
    }
}

/// Mean validation loss of `model` over `set` read in `direction`.
pub fn evaluate(model: &Model<f32>, set: &SentenceSet, direction: Direction, bos: TokenId, batch_size: usize) -> Result<Evaluation> {
    let seq = set.sentence_len().ok_or_else(|| TrainError::Config("empty evaluation set".into()))?;
    let mut sum = vec![0.0f64; seq];
    let indices: Vec<usize> = (0..set.len()).collect();
    for members in indices.chunks(batch_size.max(1)) {
        let batch = make_batch(set, members, direction, bos);
        let (ids, targets) = inputs_and_targets(&batch.tokens, batch.rows, batch.n);
        let mut g = Graph::new();
        let f = model.forward(&mut g, &ids, batch.rows, seq).map_err(numeric(0))?;
        let l = loss_and_per_token(&mut g, f.logits, &targets, seq).map_err(numeric(0))?;
        for row in l.per_token.chunks(seq) {
            for (t, &v) in row.iter().enumerate() {
                sum[t] += v as f64;
            }
        }
    }
    let count = set.len() as f64;
    let reading: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let per_position = match direction {
        Direction::Forward => reading,
        Direction::Backward => reading.into_iter().rev().collect(),
    };
    let loss = per_position.iter().sum::<f64>() / seq as f64;
    Ok(Evaluation { loss, per_position })
}

/// Trains `model` in `direction` and logs training loss every step and
/// validation loss every `eval_every` steps and at the end.
pub fn train_run(
    mut model: Model<f32>,
    data: &Dataset,
    settings: &RunSettings,
    direction: Direction,
    config_hash: &str,
) -> Result<RunOutput> {
    let seq = data.sentence_len();
    if model.config().context < seq {
        return Err(TrainError::Config(format!("context {} is shorter than the sentences ({seq})", model.config().context)));
    }
    let mut opt = AdamW::new(settings.optimizer, model.params());
    let mut log = RunLog::new(direction, settings.seeds.init, config_hash);
    let mut stream = BatchStream::new(data.train.len(), settings.seeds.order);
    let mut checksum = Fnv64::default();
    let eval = |m: &Model<f32>| evaluate(m, &data.val, direction, data.bos, settings.batch_size);

    for step in 0..settings.steps {
        let lr = settings.schedule.lr_at(step);
        let members = stream.next_members(settings.batch_size);
        let batch = make_batch(&data.train, &members, direction, data.bos);
        let dropout_seed = mix(settings.seeds.dropout, step as u64);
        checksum.write_u64(batch.payload_checksum);
        checksum.write_u64(dropout_seed);

        let (ids, targets) = inputs_and_targets(&batch.tokens, batch.rows, batch.n);
        let mut g = Graph::training(ChaCha8Rng::seed_from_u64(dropout_seed));
        let f = model.forward(&mut g, &ids, batch.rows, seq).map_err(numeric(step))?;
        let l = loss_and_per_token(&mut g, f.logits, &targets, seq).map_err(numeric(step))?;
        g.backward(l.loss).map_err(numeric(step))?;
        let grads: Vec<Option<&[f32]>> = f.params.iter().map(|&v| g.grad(v)).collect();
        opt.step(model.params_mut(), &grads, lr).map_err(|e| match e {
            TrainError::NumericFault { detail, .. } => TrainError::NumericFault { step, detail },
            other => other,
        })?;
        log.push(Record { step, lr, split: Split::Train, loss: l.mean as f64, per_position: None })?;

        if (step + 1) % settings.eval_every == 0 && step + 1 < settings.steps {
            let e = eval(&model)?;
            log.push(Record { step: step + 1, lr, split: Split::Val, loss: e.loss, per_position: Some(e.per_position) })?;
        }
    }
    let final_eval = eval(&model)?;
    log.push(Record {
        step: settings.steps,
        lr: settings.schedule.lr_at(settings.steps),
        split: Split::Val,
        loss: final_eval.loss,
        per_position: Some(final_eval.per_position.clone()),
    })?;
    Ok(RunOutput { model, log, stream_checksum: checksum.0, final_eval })
}

#[derive(Debug, Clone)]
pub struct PairOutput {
    pub seed: u64,
    pub forward: RunOutput,
    pub backward: RunOutput,
}

/// Fails unless both runs consumed the same batch and dropout streams.
pub fn check_pair(pair: &PairOutput) -> Result<()> {
    if pair.forward.stream_checksum != pair.backward.stream_checksum {
        return Err(TrainError::Consistency(format!(
            "stream checksums differ: FW {:016x}, BW {:016x}",
            pair.forward.stream_checksum, pair.backward.stream_checksum
        )));
    }
    Ok(())
}

/// Trains identically initialized FW and BW models on the same stream.
pub fn train_pair_on(data: &Dataset, model: &Model<f32>, settings: &RunSettings, config_hash: &str) -> Result<PairOutput> {
    let forward = train_run(model.clone(), data, settings, Direction::Forward, config_hash)?;
    let backward = train_run(model.clone(), data, settings, Direction::Backward, config_hash)?;
    let pair = PairOutput { seed: settings.seeds.init, forward, backward };
    check_pair(&pair)?;
    Ok(pair)
}

/// Fresh model for `spec` under the run seed's init stream.
pub fn init_model(spec: &ExperimentSpec, data: &Dataset, seed: u64) -> Result<Model<f32>> {
    let cfg = spec.model.transformer(data.vocab_size(), data.sentence_len())?;
    Ok(Model::init(&cfg, RunSeeds::from_seed(seed).init)?)
}

/// Paired FW/BW training for one seed of `spec`.
pub fn train_pair(spec: &ExperimentSpec, data: &Dataset, seed: u64) -> Result<PairOutput> {
    let model = init_model(spec, data, seed)?;
    train_pair_on(data, &model, &RunSettings::from_spec(spec, seed)?, &spec.config_hash())
}

/// Per-token loss lower bound: sentence entropy spread over its positions.
pub fn entropy_floor_per_token(data: &Dataset) -> f64 {
    data.language.entropy_floor_nats() / data.sentence_len() as f64
}
