//! Exact entropy accounting by enumeration over a [`FiniteLanguage`].
//!
//! Forward quantities condition each token on its prefix, backward ones on
//! its suffix. Everything here is computed from the measure itself, so these
//! numbers are the floor any trained model is compared against.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::datapipe::Direction;
use crate::error::{invalid, Error, Result};
use crate::langgen::{FiniteLanguage, PrimeLangSpec, Sentence, TokenId};

/// Largest support the enumeration oracles accept by default.
pub const DEFAULT_SUPPORT_CAP: usize = 1_000_000;

/// Expected conditional entropy per position, in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyDecomposition {
    pub direction: Direction,
    /// `per_position[j]` is the entropy of the `j`-th token read in `direction`.
    pub per_position: Vec<f64>,
    pub total: f64,
}

impl EntropyDecomposition {
    /// Entries re-indexed by position in the natural (forward) sentence.
    pub fn by_natural_position(&self) -> Vec<f64> {
        let mut v = self.per_position.clone();
        if self.direction == Direction::Backward {
            v.reverse();
        }
        v
    }

    /// `position,direction,nats` with natural positions.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,direction,nats\n");
        for (i, h) in self.by_natural_position().iter().enumerate() {
            out.push_str(&format!("{i},{},{h:.12}\n", self.direction));
        }
        out
    }
}

fn check_support(lang: &FiniteLanguage, cap: usize) -> Result<()> {
    if lang.len() > cap {
        return Err(Error::ResourceLimit(format!(
            "language support {} exceeds the enumeration cap {cap}",
            lang.len()
        )));
    }
    Ok(())
}

/// The tokens observed before reading natural position `pos`.
fn context(tokens: &[TokenId], pos: usize, direction: Direction) -> &[TokenId] {
    match direction {
        Direction::Forward => &tokens[..pos],
        Direction::Backward => &tokens[pos + 1..],
    }
}

fn natural_position(n: usize, step: usize, direction: Direction) -> usize {
    match direction {
        Direction::Forward => step,
        Direction::Backward => n - 1 - step,
    }
}

pub fn exact_decomposition(lang: &FiniteLanguage, direction: Direction) -> Result<EntropyDecomposition> {
    exact_decomposition_capped(lang, direction, DEFAULT_SUPPORT_CAP)
}

pub fn exact_decomposition_capped(
    lang: &FiniteLanguage,
    direction: Direction,
    cap: usize,
) -> Result<EntropyDecomposition> {
    check_support(lang, cap)?;
    let per_position: Vec<f64> = conditional_tables(lang, direction)?
        .iter()
        .map(|table| {
            table
                .contexts
                .values()
                .map(|(mass, dist)| mass * entropy(dist))
                .sum::<f64>()
        })
        .collect();
    let total = per_position.iter().sum();
    Ok(EntropyDecomposition { direction, per_position, total })
}

fn entropy(dist: &[f64]) -> f64 {
    dist.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>().max(0.0)
}

/// Conditional next-token distributions at one reading step.
#[derive(Debug, Clone)]
pub struct ConditionalTable {
    pub direction: Direction,
    /// Reading step (0 is the first token read).
    pub step: usize,
    pub vocab_size: usize,
    /// Context (natural order) to its marginal mass and the distribution over
    /// the vocabulary.
    pub contexts: HashMap<Vec<TokenId>, (f64, Vec<f64>)>,
}

impl ConditionalTable {
    pub fn prob(&self, ctx: &[TokenId], token: TokenId) -> Option<f64> {
        self.contexts.get(ctx).map(|(_, d)| d[token as usize])
    }
}

/// The true conditionals of `lang`, one table per reading step.
pub fn conditional_tables(lang: &FiniteLanguage, direction: Direction) -> Result<Vec<ConditionalTable>> {
    let n = lang.sentence_len();
    let v = lang.vocab().len();
    let mut tables = Vec::with_capacity(n);
    for step in 0..n {
        let pos = natural_position(n, step, direction);
        let mut contexts: HashMap<Vec<TokenId>, (f64, Vec<f64>)> = HashMap::new();
        for (s, &p) in lang.sentences().iter().zip(lang.probs()) {
            let t = s.tokens();
            let entry = contexts
                .entry(context(t, pos, direction).to_vec())
                .or_insert_with(|| (0.0, vec![0.0; v]));
            entry.0 += p;
            entry.1[t[pos] as usize] += p;
        }
        for (mass, dist) in contexts.values_mut() {
            dist.iter_mut().for_each(|d| *d /= *mass);
        }
        tables.push(ConditionalTable { direction, step, vocab_size: v, contexts });
    }
    Ok(tables)
}

/// `-ln` of each true conditional probability along `direction`, indexed by
/// natural position.
pub fn sentence_decomposition(lang: &FiniteLanguage, s: &Sentence, direction: Direction) -> Result<Vec<f64>> {
    let n = lang.sentence_len();
    if s.len() != n || lang.prob_of(s).is_none() {
        return Err(Error::NotInSupport);
    }
    // mass[j]: probability that the first j tokens read agree with `s`.
    let mut mass = vec![0.0; n + 1];
    let target = s.tokens();
    for (t, &p) in lang.sentences().iter().zip(lang.probs()) {
        let t = t.tokens();
        let agree = (0..n)
            .take_while(|&step| {
                let pos = natural_position(n, step, direction);
                t[pos] == target[pos]
            })
            .count();
        for m in &mut mass[..=agree] {
            *m += p;
        }
    }
    let mut out = vec![0.0; n];
    for step in 0..n {
        let ratio = (mass[step + 1] / mass[step]).min(1.0);
        out[natural_position(n, step, direction)] = -ratio.ln();
    }
    Ok(out)
}

/// Totals of both decompositions alongside the Shannon entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainRuleCheck {
    pub fw_total: f64,
    pub bw_total: f64,
    pub difference: f64,
    pub entropy: f64,
}

pub fn chain_rule_check(lang: &FiniteLanguage) -> Result<ChainRuleCheck> {
    let fw = exact_decomposition(lang, Direction::Forward)?.total;
    let bw = exact_decomposition(lang, Direction::Backward)?.total;
    Ok(ChainRuleCheck {
        fw_total: fw,
        bw_total: bw,
        difference: (fw - bw).abs(),
        entropy: shannon_entropy(lang),
    })
}

pub fn shannon_entropy(lang: &FiniteLanguage) -> f64 {
    entropy(lang.probs())
}

/// Field-level entropies of the prime-product language.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimeEntropyReport {
    pub k: usize,
    pub prime_count: usize,
    pub ln_pi: f64,
    pub h_p: f64,
    pub h_q_given_p: f64,
    pub h_pair: f64,
}

/// Under the uniform measure on pairs `p < q`, the `i`-th smallest prime is
/// drawn as `p` with probability `(pi - 1 - i) / C`, and `q` is then uniform
/// over the `pi - 1 - i` larger primes.
pub fn prime_entropy_report(k: usize) -> Result<PrimeEntropyReport> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    let spec = PrimeLangSpec::new(k)?;
    Ok(prime_entropy_from_count(k, spec.primes().len()))
}

pub(crate) fn prime_entropy_from_count(k: usize, pi: usize) -> PrimeEntropyReport {
    let pairs = (pi * pi.saturating_sub(1) / 2) as f64;
    let mut h_p = 0.0;
    let mut h_q = 0.0;
    for i in 0..pi {
        let larger = (pi - 1 - i) as f64;
        if larger == 0.0 {
            continue;
        }
        let p = larger / pairs;
        h_p -= p * p.ln();
        h_q += p * larger.ln();
    }
    PrimeEntropyReport {
        k,
        prime_count: pi,
        ln_pi: (pi as f64).ln(),
        h_p,
        h_q_given_p: h_q,
        h_pair: h_p + h_q,
    }
}

/// Expected cross-entropy of a model against `lang`, split into KL and
/// entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlDecomposition {
    pub loss: f64,
    pub kl: f64,
    pub entropy: f64,
}

/// `model` holds one table per reading step, as produced by
/// [`conditional_tables`]. The model must cover every supported context.
pub fn kl_decomposition(
    model: &[ConditionalTable],
    lang: &FiniteLanguage,
    direction: Direction,
) -> Result<KlDecomposition> {
    let n = lang.sentence_len();
    if model.len() != n {
        return invalid(format!("expected {n} conditional tables, got {}", model.len()));
    }
    if model.iter().any(|t| t.direction != direction) {
        return invalid("model tables read in the wrong direction");
    }
    let mut loss = 0.0;
    let mut kl = 0.0;
    for (s, &p) in lang.sentences().iter().zip(lang.probs()) {
        let t = s.tokens();
        let mut log_q = 0.0;
        for (step, table) in model.iter().enumerate() {
            let pos = natural_position(n, step, direction);
            let q = table.prob(context(t, pos, direction), t[pos]).unwrap_or(0.0);
            if !(q > 0.0) {
                return Err(Error::InfiniteLoss { position: pos });
            }
            log_q += q.ln();
        }
        loss -= p * log_q;
        kl += p * (p.ln() - log_q);
    }
    Ok(KlDecomposition { loss, kl, entropy: shannon_entropy(lang) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langgen::{mult_toy_language, Vocab};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN9: f64 = 2.1972245773362196;

    fn find(lang: &FiniteLanguage, text: &str) -> Sentence {
        lang.sentences()
            .iter()
            .find(|s| lang.vocab().render(s.tokens()) == text)
            .cloned()
            .unwrap()
    }

    fn random_language(rng: &mut ChaCha8Rng, size: usize, len: usize, v: usize) -> FiniteLanguage {
        let vocab = Vocab::new((0..v).map(|i| format!("t{i}"))).unwrap();
        let mut set = std::collections::BTreeSet::new();
        while set.len() < size {
            set.insert(Sentence((0..len).map(|_| rng.gen_range(0..v as u32)).collect()));
        }
        let weights = (0..size).map(|_| rng.gen_range(0.01..1.0)).collect();
        FiniteLanguage::from_weights(vocab, set.into_iter().collect(), weights).unwrap()
    }

    #[test]
    fn mult_toy_forward_fields() {
        let d = exact_decomposition(&mult_toy_language(), Direction::Forward).unwrap();
        let expected = [LN9, 0.0, LN9, 0.0, 0.0, 0.0];
        for (a, b) in d.per_position.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", d.per_position);
        }
    }

    #[test]
    fn deterministic_and_uniform_languages() {
        let v = Vocab::new(["a", "b", "c"]).unwrap();
        let single = FiniteLanguage::uniform(v.clone(), vec![Sentence(vec![0, 2, 1])]).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            assert!(exact_decomposition(&single, dir).unwrap().per_position.iter().all(|&h| h == 0.0));
        }
        let all: Vec<Sentence> = (0..27).map(|i| Sentence(vec![i / 9, i / 3 % 3, i % 3])).collect();
        let uniform = FiniteLanguage::uniform(v, all).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            for h in exact_decomposition(&uniform, dir).unwrap().per_position {
                assert!((h - 3f64.ln()).abs() < 1e-12);
            }
        }
        let check = chain_rule_check(&single).unwrap();
        assert_eq!((check.fw_total, check.bw_total, check.difference), (0.0, 0.0, 0.0));
    }

    /// BW reading of 3×4=12: D is one of 81 outcomes with 12 of them ending
    /// in 2, C is 1 in 3 of those, B is 4 among the 4 factorizations of 12,
    /// and A is then forced.
    #[test]
    fn backward_sentence_values() {
        let lang = mult_toy_language();
        let s = find(&lang, "3×4=12");
        let bw = sentence_decomposition(&lang, &s, Direction::Backward).unwrap();
        let digits = [bw[0], bw[2], bw[4], bw[5]];
        let oracle = [0.0, 4f64.ln(), 3f64.ln(), (81.0f64 / 12.0).ln()];
        for (a, b) in digits.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-9, "{digits:?}");
        }
        assert!(bw[1].abs() < 1e-12 && bw[3].abs() < 1e-12);

        let fw = sentence_decomposition(&lang, &s, Direction::Forward).unwrap();
        assert!((fw[0] - LN9).abs() < 1e-12 && (fw[2] - LN9).abs() < 1e-12);
        assert!(fw[1].abs() < 1e-12 && fw[3].abs() < 1e-12 && fw[4].abs() < 1e-12 && fw[5].abs() < 1e-12);
    }

    #[test]
    fn sentence_outside_support() {
        let lang = mult_toy_language();
        let s = Sentence(vec![3, 10, 4, 11, 1, 3]);
        assert!(matches!(sentence_decomposition(&lang, &s, Direction::Forward), Err(Error::NotInSupport)));
    }

    #[test]
    fn chain_rule_on_mult_toy() {
        let c = chain_rule_check(&mult_toy_language()).unwrap();
        assert!((c.fw_total - 81f64.ln()).abs() < 1e-12);
        assert!((c.bw_total - 81f64.ln()).abs() < 1e-12);
        assert!(c.difference < 1e-12);
    }

    #[test]
    fn chain_rule_on_random_languages() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let lang = random_language(&mut rng, 20, 5, 3);
            let c = chain_rule_check(&lang).unwrap();
            assert!(c.difference < 1e-9);
            assert!((c.fw_total - c.entropy).abs() < 1e-9);
        }
    }

    #[test]
    fn sentence_values_average_to_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lang = random_language(&mut rng, 60, 4, 3);
        for dir in [Direction::Forward, Direction::Backward] {
            let exact = exact_decomposition(&lang, dir).unwrap().by_natural_position();
            let mut avg = vec![0.0; 4];
            for (s, &p) in lang.sentences().iter().zip(lang.probs()) {
                for (a, h) in avg.iter_mut().zip(sentence_decomposition(&lang, s, dir).unwrap()) {
                    *a += p * h;
                }
            }
            for (a, b) in avg.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prime_report_small_k() {
        let r = prime_entropy_report(1).unwrap();
        assert_eq!(r.prime_count, 4);
        assert!((r.h_pair - 6f64.ln()).abs() < 1e-12);
        // p ∈ {2,3,5} with weights 3,2,1 over 6 pairs.
        let h_p = -[3.0, 2.0, 1.0].iter().map(|w: &f64| w / 6.0 * (w / 6.0).ln()).sum::<f64>();
        assert!((r.h_p - h_p).abs() < 1e-12);
        assert!(prime_entropy_report(0).is_err());
    }

    #[test]
    fn prime_report_identity() {
        for k in 1..=4 {
            let r = prime_entropy_report(k).unwrap();
            let c = (r.prime_count * (r.prime_count - 1) / 2) as f64;
            assert!((r.h_p + r.h_q_given_p - c.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_of_truth_and_uniform() {
        let lang = mult_toy_language();
        for dir in [Direction::Forward, Direction::Backward] {
            let truth = conditional_tables(&lang, dir).unwrap();
            let d = kl_decomposition(&truth, &lang, dir).unwrap();
            assert!(d.kl.abs() < 1e-12);
            assert!((d.loss - 81f64.ln()).abs() < 1e-12);

            let mut uniform = truth.clone();
            for t in &mut uniform {
                for (_, dist) in t.contexts.values_mut() {
                    dist.iter_mut().for_each(|p| *p = 1.0 / 12.0);
                }
            }
            let d = kl_decomposition(&uniform, &lang, dir).unwrap();
            assert!((d.loss - 6.0 * 12f64.ln()).abs() < 1e-12);
            assert!((d.loss - d.kl - d.entropy).abs() < 1e-9);
        }
    }

    /// Move half of the mass off the correct last BW token (A) onto another
    /// digit: every sentence pays exactly ln 2 extra.
    #[test]
    fn kl_of_halved_final_step() {
        let lang = mult_toy_language();
        let mut model = conditional_tables(&lang, Direction::Backward).unwrap();
        let last = model.last_mut().unwrap();
        for (_, dist) in last.contexts.values_mut() {
            let correct = dist.iter().position(|&p| p == 1.0).unwrap();
            let other = if correct == 1 { 2 } else { 1 };
            dist[correct] = 0.5;
            dist[other] = 0.5;
        }
        let d = kl_decomposition(&model, &lang, Direction::Backward).unwrap();
        assert!((d.kl - 2f64.ln()).abs() < 1e-12);
        assert!((d.loss - d.kl - d.entropy).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_probability_is_an_error() {
        let lang = mult_toy_language();
        let mut model = conditional_tables(&lang, Direction::Forward).unwrap();
        for (_, dist) in model[0].contexts.values_mut() {
            dist[3] = 0.0;
        }
        assert!(matches!(
            kl_decomposition(&model, &lang, Direction::Forward),
            Err(Error::InfiniteLoss { position: 0 })
        ));
    }

    #[test]
    fn support_cap_refuses() {
        assert!(matches!(
            exact_decomposition_capped(&mult_toy_language(), Direction::Forward, 80),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn csv_uses_natural_positions() {
        let d = exact_decomposition(&mult_toy_language(), Direction::Backward).unwrap();
        let csv = d.to_csv();
        assert!(csv.starts_with("position,direction,nats\n0,BW,"));
        assert_eq!(csv.lines().count(), 7);
    }
}
