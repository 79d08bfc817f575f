//! Flat-file synonym lexicon: one `word<TAB>syn1,syn2,...` record per line.

use std::collections::HashMap;
use std::path::Path;

use super::tokenize::{TokenKind, TokenizedPrompt};
use super::MutationError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses lexicon text. Blank lines and lines starting with `#` are
    /// skipped. Synonyms that are not a single word token are dropped so
    /// that replacements never change a prompt's word count.
    pub fn parse(text: &str) -> Result<Self, MutationError> {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or_else(|| MutationError::Lexicon {
                line: lineno + 1,
                message: "expected word<TAB>synonyms".into(),
            })?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(MutationError::Lexicon {
                    line: lineno + 1,
                    message: "empty headword".into(),
                });
            }
            let list = entries.entry(word).or_default();
            for syn in syns.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let toks = TokenizedPrompt::tokenize(syn);
                if toks.tokens.len() == 1 && toks.tokens[0].kind == TokenKind::Word {
                    if !list.iter().any(|s| s == syn) {
                        list.push(syn.to_string());
                    }
                } else {
                    log::debug!("lexicon line {}: dropping multi-token synonym {syn:?}", lineno + 1);
                }
            }
        }
        entries.retain(|_, v| !v.is_empty());
        Ok(Lexicon { entries })
    }

    pub fn load(path: &Path) -> Result<Self, MutationError> {
        let text = std::fs::read_to_string(path).map_err(|e| MutationError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [&'a str])>) -> Self {
        let entries = pairs
            .into_iter()
            .map(|(w, syns)| (w.to_lowercase(), syns.iter().map(|s| s.to_string()).collect()))
            .filter(|(_, v): &(String, Vec<String>)| !v.is_empty())
            .collect();
        Lexicon { entries }
    }

    /// Case-insensitive lookup.
    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records() {
        let lex = Lexicon::parse("# comment\ngood\tfine,great, nice\n\nBad\tpoor,not good\n").unwrap();
        assert_eq!(lex.synonyms("GOOD").unwrap(), ["fine", "great", "nice"]);
        // multi-word synonym dropped
        assert_eq!(lex.synonyms("bad").unwrap(), ["poor"]);
        assert!(lex.synonyms("ugly").is_none());
    }

    #[test]
    fn reports_malformed_line() {
        let err = Lexicon::parse("good\tfine\nbroken line\n").unwrap_err();
        assert_eq!(
            err,
            MutationError::Lexicon {
                line: 2,
                message: "expected word<TAB>synonyms".into()
            }
        );
    }
}
