//! The prompt mutation operators.
//!
//! Text operators work on word tokens and leave every other character in
//! place. Code operators insert new statements below a line of a method
//! body (or duplicate an assignment) without touching existing lines.
//! Operators whose precondition fails return the prompt unchanged.

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;

use super::lexicon::Lexicon;
use super::tokenize::{scan_code, CodeScan, StatementKind, Token, TokenKind, TokenizedPrompt};

pub const PUNCTUATION_MARKS: [&str; 6] = [".", ",", ";", ":", "?", "!"];

/// Prefix of identifiers introduced by code operators.
pub const FRESH_PREFIX: &str = "mucs_";

pub fn synonym_replacement<R: Rng + ?Sized>(
    prompt: &str,
    n: usize,
    lexicon: &Lexicon,
    rng: &mut R,
) -> String {
    let mut tp = TokenizedPrompt::tokenize(prompt);
    let covered: Vec<usize> = tp
        .word_positions()
        .into_iter()
        .filter(|&i| lexicon.synonyms(&tp.tokens[i].text).is_some())
        .collect();
    if covered.is_empty() {
        log::debug!("synonym_replacement: no lexicon-covered word, identity");
        return prompt.to_string();
    }
    let mut chosen: Vec<usize> = covered.choose_multiple(rng, n.max(1)).copied().collect();
    chosen.sort_unstable();
    for i in chosen {
        let syns = lexicon.synonyms(&tp.tokens[i].text).expect("covered word");
        tp.tokens[i].text = syns.choose(rng).expect("non-empty synonym list").clone();
    }
    tp.detokenize()
}

/// Deletes each word independently with probability `t_delete`, always
/// keeping at least one word. The inline space next to a deleted word goes
/// with it; line breaks are never removed.
pub fn random_deletion<R: Rng + ?Sized>(prompt: &str, t_delete: f64, rng: &mut R) -> String {
    let tp = TokenizedPrompt::tokenize(prompt);
    let words = tp.word_positions();
    if words.is_empty() {
        return prompt.to_string();
    }
    let mut delete: Vec<bool> = words.iter().map(|_| rng.gen::<f64>() < t_delete).collect();
    if delete.iter().all(|&d| d) {
        let keep = rng.gen_range(0..words.len());
        delete[keep] = false;
    }
    if !delete.iter().any(|&d| d) {
        return prompt.to_string();
    }
    let mut drop = vec![false; tp.tokens.len()];
    for (&k, _) in words.iter().zip(&delete).filter(|(_, d)| **d) {
        drop[k] = true;
        if k > 0 && !drop[k - 1] && tp.tokens[k - 1].is_inline_space() {
            drop[k - 1] = true;
        } else if k + 1 < tp.tokens.len() && tp.tokens[k + 1].is_inline_space() {
            drop[k + 1] = true;
        }
    }
    tp.tokens
        .iter()
        .zip(&drop)
        .filter(|(_, d)| !**d)
        .map(|(t, _)| t.text.as_str())
        .collect()
}

/// Inserts `token` as a new word-level unit at boundary `slot`
/// (0..=word count): before word `slot`, or at the very end.
fn insert_at_boundary(tp: &mut TokenizedPrompt, slot: usize, token: Token) {
    let words = tp.word_positions();
    let space = Token::new(" ", TokenKind::Whitespace);
    if slot < words.len() {
        let at = words[slot];
        tp.tokens.splice(at..at, [token, space]);
    } else {
        tp.tokens.extend([space, token]);
    }
}

pub fn random_insertion<R: Rng + ?Sized>(
    prompt: &str,
    n: usize,
    lexicon: &Lexicon,
    rng: &mut R,
) -> String {
    let mut tp = TokenizedPrompt::tokenize(prompt);
    let covered: Vec<String> = tp
        .words()
        .into_iter()
        .filter(|w| lexicon.synonyms(w).is_some())
        .map(str::to_string)
        .collect();
    if covered.is_empty() {
        log::debug!("random_insertion: no lexicon-covered word, identity");
        return prompt.to_string();
    }
    for _ in 0..n.max(1) {
        let word = covered.choose(rng).expect("non-empty");
        let syn = lexicon
            .synonyms(word)
            .and_then(|s| s.choose(rng))
            .expect("covered word")
            .clone();
        let slot = rng.gen_range(0..=tp.word_count());
        insert_at_boundary(&mut tp, slot, Token::new(syn, TokenKind::Word));
    }
    tp.detokenize()
}

pub fn random_swap<R: Rng + ?Sized>(prompt: &str, rng: &mut R) -> String {
    let mut tp = TokenizedPrompt::tokenize(prompt);
    let words = tp.word_positions();
    if words.len() < 2 {
        log::debug!("random_swap: fewer than two words, identity");
        return prompt.to_string();
    }
    let picked: Vec<usize> = words.choose_multiple(rng, 2).copied().collect();
    let (a, b) = (picked[0], picked[1]);
    let tmp = std::mem::take(&mut tp.tokens[a].text);
    tp.tokens[a].text = std::mem::replace(&mut tp.tokens[b].text, tmp);
    tp.detokenize()
}

pub fn punctuation_insertion<R: Rng + ?Sized>(prompt: &str, n: usize, rng: &mut R) -> String {
    let mut tp = TokenizedPrompt::tokenize(prompt);
    if tp.word_count() == 0 {
        log::debug!("punctuation_insertion: no words, identity");
        return prompt.to_string();
    }
    for _ in 0..n.max(1) {
        let mark = *PUNCTUATION_MARKS.choose(rng).expect("non-empty");
        let slot = rng.gen_range(0..=tp.word_count());
        insert_at_boundary(&mut tp, slot, Token::new(mark, TokenKind::Punct));
    }
    tp.detokenize()
}

/// Lines below which a new statement may be inserted: inside a body at
/// least `min_depth` braces deep, after a complete statement or after a
/// line that opens a plain block.
pub fn insertion_points(scan: &CodeScan, min_depth: usize) -> Vec<usize> {
    let min_depth = min_depth as i64;
    scan.lines
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            if l.depth_after < min_depth {
                return false;
            }
            if l.ends_statement() {
                return l.depth_before >= min_depth;
            }
            if l.opens_block() {
                let code = l.code.trim_end().trim_end_matches('{').trim_end();
                let head = code.trim_start();
                let is_type_or_switch = ["class ", "interface ", "enum ", "switch"]
                    .iter()
                    .any(|kw| head.contains(kw));
                let is_initializer = code.ends_with('=') || code.ends_with(',') || code.is_empty();
                return !is_type_or_switch && !is_initializer;
            }
            false
        })
        .map(|(i, _)| i)
        .collect()
}

/// Assignment-shaped lines (plain assignments and initialized
/// declarations) inside a body.
pub fn assignment_lines(scan: &CodeScan, min_depth: usize) -> Vec<usize> {
    scan.lines
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            l.depth_before >= min_depth as i64
                && matches!(
                    l.kind,
                    StatementKind::Assignment | StatementKind::Declaration { initialized: true }
                )
        })
        .map(|(i, _)| i)
        .collect()
}

fn fresh_name<R: Rng + ?Sized>(code: &str, rng: &mut R) -> String {
    let mut counter: u32 = rng.gen_range(0..10_000);
    loop {
        let name = format!("{FRESH_PREFIX}{counter}");
        if !code.contains(&name) {
            return name;
        }
        counter += 1;
    }
}

fn random_text<R: Rng + ?Sized>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// Inserts `block` (one or more lines, relative indentation) below a
/// uniformly chosen insertion point.
fn insert_below<R: Rng + ?Sized>(
    code: &str,
    min_depth: usize,
    rng: &mut R,
    op: &str,
    block: impl FnOnce(&mut R) -> Vec<String>,
) -> String {
    let scan = scan_code(code);
    let Some(&at) = insertion_points(&scan, min_depth).choose(rng) else {
        log::debug!("{op}: no eligible line, identity");
        return code.to_string();
    };
    let anchor = &scan.lines[at];
    let unit = if anchor.indent().contains('\t') { "\t" } else { "    " };
    let indent = if anchor.opens_block() {
        format!("{}{unit}", anchor.indent())
    } else {
        anchor.indent().to_string()
    };
    let cr = if anchor.text.ends_with('\r') { "\r" } else { "" };
    let new_lines = block(rng)
        .into_iter()
        .map(|l| format!("{indent}{}{cr}", l.replace("\t", unit)));
    let mut lines: Vec<String> = scan.lines.iter().map(|l| l.text.clone()).collect();
    lines.splice(at + 1..at + 1, new_lines);
    lines.join("\n")
}

pub fn print_adding<R: Rng + ?Sized>(code: &str, min_depth: usize, rng: &mut R) -> String {
    insert_below(code, min_depth, rng, "print_adding", |rng| {
        vec![format!("System.out.println(\"{}\");", random_text(rng, 8))]
    })
}

pub fn local_variable_adding<R: Rng + ?Sized>(code: &str, min_depth: usize, rng: &mut R) -> String {
    insert_below(code, min_depth, rng, "local_variable_adding", |rng| {
        let name = fresh_name(code, rng);
        vec![format!("int {name} = {};", rng.gen_range(0..1000))]
    })
}

pub fn dead_if_adding<R: Rng + ?Sized>(code: &str, min_depth: usize, rng: &mut R) -> String {
    insert_below(code, min_depth, rng, "dead_if_adding", |rng| {
        let name = fresh_name(code, rng);
        vec![
            "if (false) {".to_string(),
            format!("\tint {name} = {};", rng.gen_range(0..1000)),
            "}".to_string(),
        ]
    })
}

pub fn duplication<R: Rng + ?Sized>(code: &str, min_depth: usize, rng: &mut R) -> String {
    let scan = scan_code(code);
    let Some(at) = assignment_lines(&scan, min_depth).into_iter().choose(rng) else {
        log::debug!("duplication: no assignment, identity");
        return code.to_string();
    };
    let mut lines: Vec<&str> = scan.lines.iter().map(|l| l.text.as_str()).collect();
    lines.insert(at + 1, lines[at]);
    lines.join("\n")
}
