//! Character-level byte-pair encoding.
//!
//! Symbols are unicode scalars, so a model trained on character-reversed text
//! never splits a multi-byte character. Training merges the most frequent
//! adjacent pair, ties going to the lexicographically smallest pair.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::langgen::{TokenId, Vocab, BOS_TOKEN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    /// `<BOS>`, then the sorted alphabet, then one token per merge.
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    ids: HashMap<String, TokenId>,
}

impl BpeModel {
    fn from_parts(vocab: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let ids = Vocab::new(vocab.iter().cloned())?;
        let ids = vocab.iter().map(|t| (t.clone(), ids.id(t).expect("present"))).collect();
        Ok(Self { vocab, merges, ids })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn bos_id(&self) -> TokenId {
        0
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn to_vocab(&self) -> Vocab {
        Vocab::new(self.vocab.iter().cloned()).expect("distinct tokens")
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut symbols: Vec<TokenId> = text
            .chars()
            .map(|c| {
                self.ids
                    .get(c.encode_utf8(&mut [0; 4]) as &str)
                    .copied()
                    .ok_or(Error::UnknownSymbol(c))
            })
            .collect::<Result<_>>()?;
        for (left, right) in &self.merges {
            let (l, r) = (self.ids[left], self.ids[right]);
            let merged = self.ids[&format!("{left}{right}")];
            apply_merge(&mut symbols, l, r, merged);
        }
        Ok(symbols)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                self.vocab
                    .get(i as usize)
                    .map(String::as_str)
                    .ok_or_else(|| Error::InvalidArgument(format!("token id {i} out of range")))
            })
            .collect()
    }

    /// Text format: vocabulary size, the escaped tokens one per line, then
    /// one `left right` line per merge.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.vocab.len());
        for t in &self.vocab {
            writeln!(out, "{}", escape(t)).unwrap();
        }
        for (l, r) in &self.merges {
            writeln!(out, "{} {}", escape(l), escape(r)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let size: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::Format("missing vocabulary size".into()))?;
        let vocab = (0..size)
            .map(|_| lines.next().ok_or_else(|| Error::Format("truncated vocabulary".into())).and_then(unescape))
            .collect::<Result<Vec<_>>>()?;
        let merges = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (a, b) = l.split_once(' ').ok_or_else(|| Error::Format(format!("bad merge line {l:?}")))?;
                Ok((unescape(a)?, unescape(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self::from_parts(vocab, merges)?;
        for (l, r) in &model.merges {
            for t in [l.clone(), r.clone(), format!("{l}{r}")] {
                if !model.ids.contains_key(&t) {
                    return Err(Error::Format(format!("merge references unknown token {t:?}")));
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn apply_merge(symbols: &mut Vec<TokenId>, l: TokenId, r: TokenId, merged: TokenId) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
            out.push(merged);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    *symbols = out;
}

/// Greedy BPE training until `vocab_size` tokens exist or no pair occurs
/// twice.
pub fn bpe_train(corpus: &str, vocab_size: usize) -> Result<BpeModel> {
    if corpus.is_empty() {
        return invalid("cannot train a tokenizer on an empty corpus");
    }
    let alphabet: BTreeSet<char> = corpus.chars().collect();
    if vocab_size < alphabet.len() + 1 {
        return invalid(format!(
            "vocabulary size {vocab_size} is below the {} distinct characters plus BOS",
            alphabet.len()
        ));
    }
    let mut vocab: Vec<String> = std::iter::once(BOS_TOKEN.to_string())
        .chain(alphabet.iter().map(|c| c.to_string()))
        .collect();
    let mut ids: HashMap<String, TokenId> =
        vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
    let mut symbols: Vec<TokenId> = corpus.chars().map(|c| ids[&c.to_string()]).collect();
    let mut merges = Vec::new();

    while vocab.len() < vocab_size {
        let mut counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
        for w in symbols.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += 1;
        }
        let best = counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .filter(|((a, b), _)| !ids.contains_key(&format!("{}{}", vocab[*a as usize], vocab[*b as usize])))
            .max_by(|(pa, ca), (pb, cb)| {
                let key = |p: &(TokenId, TokenId)| (vocab[p.0 as usize].clone(), vocab[p.1 as usize].clone());
                ca.cmp(cb).then_with(|| key(pb).cmp(&key(pa)))
            })
            .map(|(&p, _)| p);
        let Some((a, b)) = best else { break };
        let (left, right) = (vocab[a as usize].clone(), vocab[b as usize].clone());
        let token = format!("{left}{right}");
        let id = vocab.len() as TokenId;
        ids.insert(token.clone(), id);
        vocab.push(token);
        apply_merge(&mut symbols, a, b, id);
        merges.push((left, right));
    }
    BpeModel::from_parts(vocab, merges)
}

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            ' ' => out.push_str("\\s"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('n') => '\n',
            Some('r') => '\r',
            Some('t') => '\t',
            Some('s') => ' ',
            other => return Err(Error::Format(format!("bad escape \\{other:?}"))),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CORPUS: &str = "the cat sat on the mat. the cat ate the rat. ünïcödé ünïcödé!\n";

    #[test]
    fn first_merge_on_aaaa() {
        let m = bpe_train("aaaa", 3).unwrap();
        assert_eq!(m.merges(), &[("a".to_string(), "a".to_string())]);
        assert_eq!(m.decode(&m.encode("aaaa").unwrap()).unwrap(), "aaaa");
        assert_eq!(m.encode("aaaa").unwrap(), vec![2, 2]);
        assert_eq!(m.encode("aaa").unwrap(), vec![2, 1]);
    }

    #[test]
    fn character_tokenizer_when_no_room() {
        let distinct = CORPUS.chars().collect::<BTreeSet<_>>().len();
        let m = bpe_train(CORPUS, distinct + 1).unwrap();
        assert!(m.merges().is_empty());
        let ids = m.encode("the").unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(m.decode(&ids).unwrap(), "the");
        assert!(bpe_train(CORPUS, distinct).is_err());
        assert!(bpe_train("", 10).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        // ab and cd both occur twice; ab wins.
        let m = bpe_train("abcdabcd", 6).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn round_trip_and_determinism() {
        let a = bpe_train(CORPUS, 40).unwrap();
        let b = bpe_train(CORPUS, 40).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.decode(&a.encode(CORPUS).unwrap()).unwrap(), CORPUS);
        assert!(a.vocab_size() <= 40);
        assert!(matches!(a.encode("xyz"), Err(Error::UnknownSymbol('x'))));
        assert!(a.decode(&[9999]).is_err());
    }

    #[test]
    fn training_stops_without_repeats() {
        let m = bpe_train("abcdef", 100).unwrap();
        assert!(m.merges().is_empty());
        assert_eq!(m.vocab_size(), 7);
    }

    #[test]
    fn text_format_round_trip() {
        let m = bpe_train(CORPUS, 45).unwrap();
        let text = m.to_text();
        assert!(text.starts_with(&format!("{}\n<BOS>\n", m.vocab_size())));
        assert_eq!(BpeModel::from_text(&text).unwrap(), m);
        assert!(BpeModel::from_text("3\na\n").is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in "[a-d ]{0,60}") {
            let m = bpe_train("abcd abcd aabb ccdd dcba ", 20).unwrap();
            prop_assert_eq!(m.decode(&m.encode(&s).unwrap()).unwrap(), s);
        }
    }
}
