//! Character-level tokenizer shared by every objective.
//!
//! | id      | token            |
//! |---------|------------------|
//! | 0       | `<|prompt|>`     |
//! | 1       | `<|initial|>`    |
//! | 2       | `<|critique|>`   |
//! | 3       | `<|answer|>`     |
//! | 4       | `<|eos|>`        |
//! | 5       | `\n`             |
//! | 6..=100 | ASCII `' '..='~'`|

use thiserror::Error;

pub const PROMPT: usize = 0;
pub const INITIAL: usize = 1;
pub const CRITIQUE: usize = 2;
pub const ANSWER: usize = 3;
pub const EOS: usize = 4;
const NEWLINE: usize = 5;
const FIRST_PRINTABLE: usize = 6;

pub const SPECIAL_TOKENS: [&str; 5] = ["<|prompt|>", "<|initial|>", "<|critique|>", "<|answer|>", "<|eos|>"];
pub const VOCAB_SIZE: usize = FIRST_PRINTABLE + 95;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("character {ch:?} at byte {offset} is not in the tokenizer alphabet")]
pub struct UnknownChar {
    pub ch: char,
    pub offset: usize,
}

pub fn is_special(id: usize) -> bool {
    id < NEWLINE
}

/// Encodes plain text; special-token spellings are treated as ordinary characters.
pub fn encode(text: &str) -> Result<Vec<usize>, UnknownChar> {
    text.char_indices()
        .map(|(offset, ch)| match ch {
            '\n' => Ok(NEWLINE),
            ' '..='~' => Ok(FIRST_PRINTABLE + (ch as usize - ' ' as usize)),
            _ => Err(UnknownChar { ch, offset }),
        })
        .collect()
}

/// Decodes to text, dropping special tokens and ids outside the vocabulary.
pub fn decode(ids: &[usize]) -> String {
    ids.iter()
        .filter_map(|&id| match id {
            NEWLINE => Some('\n'),
            id if (FIRST_PRINTABLE..VOCAB_SIZE).contains(&id) => Some((b' ' + (id - FIRST_PRINTABLE) as u8) as char),
            _ => None,
        })
        .collect()
}

/// Renders ids with special tokens spelled out, for debugging and logs.
pub fn render(ids: &[usize]) -> String {
    ids.iter()
        .map(|&id| if is_special(id) { SPECIAL_TOKENS[id].to_string() } else { decode(&[id]) })
        .collect()
}

/// Replaces characters outside the alphabet with `?`.
pub fn sanitize(text: &str) -> String {
    text.chars().map(|c| if c == '\n' || (' '..='~').contains(&c) { c } else { '?' }).collect()
}
