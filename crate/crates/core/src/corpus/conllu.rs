//! CoNLL-U reading and writing.
//!
//! Only syntactic words are kept: multiword-token ranges (`3-4`) and empty
//! nodes (`5.1`) are skipped, as are comments.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::{Sentence, Split, Treebank};

/// Outcome of a lenient read: accepted sentences plus per-sentence errors.
#[derive(Debug)]
pub struct ConlluRead {
    pub treebank: Treebank,
    pub rejected: Vec<Error>,
}

/// Reads a treebank, failing on the first invalid sentence.
pub fn read_conllu(input: &[u8], language: &str, split: Split) -> Result<Treebank> {
    let read = read_conllu_lenient(input, language, split)?;
    match read.rejected.into_iter().next() {
        Some(err) => Err(err),
        None => Ok(read.treebank),
    }
}

/// Reads a treebank, collecting invalid sentences instead of failing.
/// Non-UTF-8 input is still a hard error.
pub fn read_conllu_lenient(input: &[u8], language: &str, split: Split) -> Result<ConlluRead> {
    let text = std::str::from_utf8(input).map_err(|_| Error::Utf8)?;
    let mut sentences = Vec::new();
    let mut rejected = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut index = 0;

    let mut flush = |block: &mut Vec<(usize, &str)>, index: &mut usize| {
        if block.is_empty() {
            return;
        }
        *index += 1;
        match parse_sentence(block, *index, language) {
            Ok(s) => sentences.push(s),
            Err(e) => rejected.push(e),
        }
        block.clear();
    };

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut block, &mut index);
        } else if !line.starts_with('#') {
            block.push((lineno + 1, line));
        }
    }
    flush(&mut block, &mut index);

    Ok(ConlluRead {
        treebank: Treebank {
            language: language.to_string(),
            split,
            sentences,
        },
        rejected,
    })
}

fn parse_sentence(lines: &[(usize, &str)], index: usize, language: &str) -> Result<Sentence> {
    let first_line = lines[0].0;
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    let mut labels = Vec::new();
    for &(lineno, line) in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::InvalidTree {
                sentence: index,
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| Error::InvalidTree {
            sentence: index,
            line: lineno,
            message: format!("bad token id `{}`", cols[0]),
        })?;
        if id != tokens.len() + 1 {
            return Err(Error::InvalidTree {
                sentence: index,
                line: lineno,
                message: format!("token id {} out of sequence", id),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::InvalidTree {
            sentence: index,
            line: lineno,
            message: format!("bad head `{}`", cols[6]),
        })?;
        tokens.push(cols[1].to_string());
        heads.push(head);
        labels.push(cols[7].to_string());
    }
    if tokens.is_empty() {
        return Err(Error::InvalidTree {
            sentence: index,
            line: first_line,
            message: "no syntactic words".into(),
        });
    }
    let sentence = Sentence {
        tokens,
        heads,
        labels,
        language: language.to_string(),
    };
    sentence.validate().map_err(|message| Error::InvalidTree {
        sentence: index,
        line: first_line,
        message,
    })?;
    Ok(sentence)
}

pub fn write_conllu(treebank: &Treebank) -> String {
    let mut out = String::new();
    for s in &treebank.sentences {
        write_sentence(&mut out, s);
    }
    out
}

fn write_sentence(out: &mut String, s: &Sentence) {
    for (i, tok) in s.tokens.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
            i + 1,
            tok,
            s.heads[i],
            s.labels[i]
        );
    }
    out.push('\n');
}
