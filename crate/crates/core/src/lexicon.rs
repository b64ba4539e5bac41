//! Word lists and affect lexicons used by the behaviour features.
//!
//! A lexicon directory holds:
//!
//! * `vad.tsv`: `word<TAB>valence<TAB>arousal<TAB>dominance`
//! * `emoji.tsv`: `codepoints<TAB>pos|neu|neg`, codepoints as space-separated hex
//! * `antidepressants.txt`: one name per line
//! * `symptoms/`: the nine files in [`SYMPTOM_FILES`], one word or phrase per line
//!
//! Lines starting with `#` are comments. Multi-word phrases are stored
//! hyphen-joined (`weight loss` becomes `weight-loss`) and match adjacent
//! token bigrams.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{emoji_key, parse_word_list};

pub const VAD_FILE: &str = "vad.tsv";
pub const EMOJI_FILE: &str = "emoji.tsv";
pub const ANTIDEPRESSANT_FILE: &str = "antidepressants.txt";
pub const SYMPTOM_DIR: &str = "symptoms";
pub const SYMPTOM_FILES: [&str; 9] = [
    "01_depressed_mood.txt",
    "02_loss_of_interest.txt",
    "03_appetite_weight.txt",
    "04_sleep.txt",
    "05_psychomotor.txt",
    "06_fatigue.txt",
    "07_worthlessness_guilt.txt",
    "08_concentration.txt",
    "09_suicidal_ideation.txt",
];

pub const FIRST_PERSON_SINGULAR: [&str; 5] = ["i", "me", "my", "mine", "myself"];
pub const FIRST_PERSON_PLURAL: [&str; 5] = ["we", "us", "our", "ours", "ourselves"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    pub vad: HashMap<String, [f64; 3]>,
    pub emoji_polarity: HashMap<String, Polarity>,
    pub symptoms: Vec<HashSet<String>>,
    pub antidepressants: HashSet<String>,
    pub fp_singular: HashSet<String>,
    pub fp_plural: HashSet<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

/// Lowercases and hyphen-joins the words of a phrase.
pub fn normalize_phrase(phrase: &str) -> String {
    phrase
        .split(|c: char| c.is_whitespace() || c == '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

fn phrase_list(text: &str) -> HashSet<String> {
    parse_word_list(text).iter().map(|p| normalize_phrase(p)).collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_vad(text: &str) -> Result<HashMap<String, [f64; 3]>> {
    let mut out = HashMap::new();
    for (line, l) in content_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        let bad = || Error::Lexicon(format!("{VAD_FILE} line {line}: expected word<TAB>v<TAB>a<TAB>d"));
        if fields.len() != 4 {
            return Err(bad());
        }
        let mut vad = [0.0; 3];
        for (slot, raw) in vad.iter_mut().zip(&fields[1..]) {
            *slot = raw.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad)?;
        }
        out.insert(fields[0].trim().to_lowercase(), vad);
    }
    Ok(out)
}

pub fn parse_emoji(text: &str) -> Result<HashMap<String, Polarity>> {
    let mut out = HashMap::new();
    for (line, l) in content_lines(text) {
        let bad = |why: &str| Error::Lexicon(format!("{EMOJI_FILE} line {line}: {why}"));
        let (cps, pol) = l.split_once('\t').ok_or_else(|| bad("expected codepoints<TAB>polarity"))?;
        let polarity = match pol.trim() {
            "pos" => Polarity::Positive,
            "neu" => Polarity::Neutral,
            "neg" => Polarity::Negative,
            other => return Err(bad(&format!("unknown polarity {other:?}"))),
        };
        let mut chars = String::new();
        for cp in cps.split_whitespace() {
            let hex = cp.trim_start_matches("U+").trim_start_matches("u+");
            let c = u32::from_str_radix(hex, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| bad(&format!("bad codepoint {cp:?}")))?;
            chars.push(c);
        }
        out.insert(emoji_key(&chars), polarity);
    }
    Ok(out)
}

impl Lexicons {
    /// Loads every lexicon file from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let symptom_dir = dir.join(SYMPTOM_DIR);
        let missing: Vec<&str> = SYMPTOM_FILES
            .iter()
            .copied()
            .filter(|f| !symptom_dir.join(f).is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lexicon(format!(
                "{} is missing symptom lists; expected all of: {}",
                symptom_dir.display(),
                SYMPTOM_FILES.join(", ")
            )));
        }
        let mut symptoms = Vec::with_capacity(9);
        for f in SYMPTOM_FILES {
            let list = phrase_list(&read(&symptom_dir.join(f))?);
            if list.is_empty() {
                return Err(Error::Lexicon(format!("symptom list {f} is empty")));
            }
            symptoms.push(list);
        }
        Ok(Self {
            vad: parse_vad(&read(&dir.join(VAD_FILE))?)?,
            emoji_polarity: parse_emoji(&read(&dir.join(EMOJI_FILE))?)?,
            symptoms,
            antidepressants: phrase_list(&read(&dir.join(ANTIDEPRESSANT_FILE))?),
            ..Self::with_pronouns()
        })
    }

    /// Empty lexicons carrying only the fixed first-person pronoun lists and
    /// nine empty symptom lists.
    pub fn with_pronouns() -> Self {
        Self {
            symptoms: vec![HashSet::new(); 9],
            fp_singular: FIRST_PERSON_SINGULAR.iter().map(|s| s.to_string()).collect(),
            fp_plural: FIRST_PERSON_PLURAL.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }
}
