//! Choosing which generated tokens to explain.

use eagle_core::{OracleError, TokenTargets};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::TokenizeResponse;

/// Splits text into tokens with `[start, end)` character offsets.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Result<TokenizeResponse, OracleError>;
}

/// One token per whitespace-separated word, token id = token index. Pairs
/// with the placeholder captions `t0 t1 ...` of the synthetic oracles.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Result<TokenizeResponse, OracleError> {
        let mut offsets = Vec::new();
        let mut start = None;
        let mut count = 0;
        for (i, c) in text.chars().enumerate() {
            count = i + 1;
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    offsets.push([s, i]);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            offsets.push([s, count]);
        }
        Ok(TokenizeResponse {
            token_ids: (0..offsets.len() as u32).collect(),
            offsets,
        })
    }
}

/// Character spans `[start, end)` of every whole-word, case-insensitive
/// occurrence of `word` in `text`.
pub fn word_spans(text: &str, word: &str) -> Vec<[usize; 2]> {
    let chars: Vec<char> = text.chars().collect();
    let needle: Vec<char> = word.chars().collect();
    if needle.is_empty() || needle.len() > chars.len() {
        return Vec::new();
    }
    let same = |a: char, b: char| a.to_lowercase().eq(b.to_lowercase());
    let boundary = |i: Option<&char>| i.is_none_or(|c| !c.is_alphanumeric());
    (0..=chars.len() - needle.len())
        .filter(|&s| {
            chars[s..s + needle.len()]
                .iter()
                .zip(&needle)
                .all(|(&a, &b)| same(a, b))
                && boundary(s.checked_sub(1).and_then(|p| chars.get(p)))
                && boundary(chars.get(s + needle.len()))
        })
        .map(|s| [s, s + needle.len()])
        .collect()
}

/// Token positions whose offsets overlap any occurrence of any of `words`.
pub fn word_positions(text: &str, offsets: &[[usize; 2]], words: &[String]) -> Vec<usize> {
    let spans: Vec<[usize; 2]> = words.iter().flat_map(|w| word_spans(text, w)).collect();
    offsets
        .iter()
        .enumerate()
        .filter(|(_, [a, b])| spans.iter().any(|[s, e]| a < e && s < b))
        .map(|(i, _)| i)
        .collect()
}

/// How targets are picked from a generated sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TargetSpec {
    Positions(Vec<usize>),
    /// Every token overlapping one of these words in the generated text.
    Words(Vec<String>),
    All,
    /// Tokens whose probability drops by more than the sensitivity threshold
    /// when the whole image is masked.
    Sensitive,
}

/// Resolves every spec except [`TargetSpec::Sensitive`], which needs the
/// oracle and is handled by the pipeline on top of [`TargetSpec::All`].
pub fn resolve_targets(
    spec: &TargetSpec,
    prompt: &str,
    generated_ids: &[u32],
    text: &str,
    tokenizer: &dyn Tokenizer,
) -> Result<TokenTargets> {
    let positions: Vec<usize> = match spec {
        TargetSpec::Positions(p) => {
            let mut p = p.clone();
            p.sort_unstable();
            p.dedup();
            p
        }
        TargetSpec::Words(words) => {
            let tokens = tokenizer.tokenize(text)?;
            if tokens.offsets.len() != generated_ids.len() {
                return Err(Error::Invalid(format!(
                    "tokenizer produced {} tokens for a {}-token generation",
                    tokens.offsets.len(),
                    generated_ids.len()
                )));
            }
            word_positions(text, &tokens.offsets, words)
        }
        TargetSpec::All | TargetSpec::Sensitive => (0..generated_ids.len()).collect(),
    };
    if positions.is_empty() {
        return Err(Error::Usage("empty target set".into()));
    }
    Ok(TokenTargets::factual(
        prompt,
        generated_ids.to_vec(),
        positions,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Splits "cat" into "c" + "at" the way subword tokenizers do.
    struct SubwordStub;

    impl Tokenizer for SubwordStub {
        fn tokenize(&self, text: &str) -> Result<TokenizeResponse, OracleError> {
            assert_eq!(text, "a photo of cat here");
            Ok(TokenizeResponse {
                token_ids: vec![10, 11, 12, 13, 14, 15],
                offsets: vec![[0, 1], [2, 7], [8, 10], [11, 12], [12, 14], [15, 19]],
            })
        }
    }

    #[test]
    fn word_maps_to_all_covered_tokens() {
        let ids = [10, 11, 12, 13, 14, 15];
        let t = resolve_targets(
            &TargetSpec::Words(vec!["cat".into()]),
            "p",
            &ids,
            "a photo of cat here",
            &SubwordStub,
        )
        .unwrap();
        let positions: Vec<usize> = t.targets.iter().map(|t| t.position).collect();
        assert_eq!(positions, vec![3, 4]);
        assert_eq!(t.targets[0].vocab_id, 13);
    }

    #[test]
    fn whole_words_only() {
        assert_eq!(
            word_spans("cat category Cat, cat", "cat"),
            vec![[0, 3], [13, 16], [18, 21]]
        );
        assert!(word_spans("", "cat").is_empty());
    }

    #[test]
    fn empty_target_set_is_usage_error() {
        let ids = [10, 11, 12, 13, 14, 15];
        let err = resolve_targets(
            &TargetSpec::Words(vec!["dog".into()]),
            "p",
            &ids,
            "a photo of cat here",
            &SubwordStub,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert!(matches!(
            resolve_targets(&TargetSpec::Positions(vec![]), "p", &ids, "", &SubwordStub),
            Err(Error::Usage(_))
        ));
        assert!(
            resolve_targets(&TargetSpec::Positions(vec![9]), "p", &ids, "", &SubwordStub).is_err()
        );
    }

    #[test]
    fn whitespace_offsets() {
        let t = WhitespaceTokenizer.tokenize(" t0  t1 t2").unwrap();
        assert_eq!(t.offsets, vec![[1, 3], [5, 7], [8, 10]]);
        assert_eq!(t.token_ids, vec![0, 1, 2]);
        let positions = resolve_targets(
            &TargetSpec::Positions(vec![2, 0, 2]),
            "p",
            &[5, 6, 7],
            "",
            &WhitespaceTokenizer,
        )
        .unwrap()
        .targets
        .iter()
        .map(|t| t.position)
        .collect::<Vec<_>>();
        assert_eq!(positions, vec![0, 2]);
    }
}
