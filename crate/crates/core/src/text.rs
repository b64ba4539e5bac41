//! Tweet tokenisation.

use std::collections::HashSet;

use unicode_segmentation::UnicodeSegmentation;

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";

const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords.txt");

/// Lowercases and splits `text` on whitespace and punctuation. URLs become
/// `<url>`, @-mentions become `<user>`, and each emoji grapheme is kept as a
/// standalone token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        let mut rest = lower.as_str();
        if let Some(after) = rest.strip_prefix('@') {
            let handle_len: usize = after
                .chars()
                .take_while(|c| c.is_alphanumeric() || *c == '_')
                .map(char::len_utf8)
                .sum();
            if handle_len > 0 {
                out.push(USER_TOKEN.to_string());
                rest = &after[handle_len..];
            }
        }
        split_words(rest, &mut out);
    }
    out
}

fn split_words(chunk: &str, out: &mut Vec<String>) {
    let mut word = String::new();
    for g in chunk.graphemes(true) {
        if is_emoji(g) {
            flush(&mut word, out);
            out.push(g.to_string());
        } else if g.chars().any(char::is_alphanumeric) {
            word.push_str(g);
        } else {
            flush(&mut word, out);
        }
    }
    flush(&mut word, out);
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// True when the grapheme starts with a pictographic codepoint.
pub fn is_emoji(grapheme: &str) -> bool {
    grapheme.chars().next().is_some_and(|c| {
        matches!(
            u32::from(c),
            0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2300..=0x23FF | 0x2B00..=0x2BFF | 0x3030 | 0x303D
        )
    })
}

/// Hex codepoint key for an emoji token, ignoring variation selectors:
/// `"❤️"` becomes `"2764"`.
pub fn emoji_key(token: &str) -> String {
    token
        .chars()
        .filter(|&c| c != '\u{FE0F}' && c != '\u{FE0E}')
        .map(|c| format!("{:X}", u32::from(c)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The bundled English stop-word list.
pub fn default_stopwords() -> HashSet<String> {
    parse_word_list(DEFAULT_STOPWORDS)
}

/// One lowercase entry per non-empty, non-`#` line.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Tokens suitable for topic modelling: no stop words, sentinels, emoji or
/// pure numbers.
pub fn content_tokens(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| {
            t != URL_TOKEN
                && t != USER_TOKEN
                && !stopwords.contains(t)
                && !is_emoji(t)
                && !t.chars().all(|c| c.is_ascii_digit())
        })
        .collect()
}
