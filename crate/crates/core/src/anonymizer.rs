//! Rule-based de-identification of report text.
//!
//! Two passes, always in this order:
//!
//! 1. every decimal digit is deleted ([`strip_numeric`]);
//! 2. names, surnames and places found in gazetteers are replaced by a mask
//!    token, as are up to three words following a title such as `dr` or
//!    `dra` ([`mask_entities`]).
//!
//! Gazetteer hits that are frequent Spanish words or dermatology exceptions
//! (`cabello`, `seco`, `benigno`, ...) are left alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::ser::SerializeTuple;
use serde::{Deserialize, Serialize, Serializer};
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{Corpus, Report};
use crate::error::{Error, Result};
use crate::text::normalize_label;

static DIGIT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{Nd}").unwrap());

pub const DEFAULT_MASK_TOKEN: &str = "[Entity]";
pub const TITLE_RULE: &str = "title_pattern";
const TITLE_WINDOW: usize = 3;

/// A named set of case-folded surface forms, possibly multiword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gazetteer {
    pub name: String,
    pub source: String,
    entries: BTreeSet<String>,
    max_words: usize,
}

impl Gazetteer {
    pub fn new<I, S>(name: impl Into<String>, entries: I, source: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let entries: BTreeSet<String> = entries
            .into_iter()
            .map(|e| normalize_label(e.as_ref()))
            .collect();
        if entries.is_empty() {
            return Err(Error::validation(format!("gazetteer {name:?} has no entries")));
        }
        if entries.contains("") {
            return Err(Error::validation(format!("gazetteer {name:?} contains a blank entry")));
        }
        let max_words = entries.iter().map(|e| e.split(' ').count()).max().unwrap_or(1);
        Ok(Gazetteer {
            name,
            source: source.into(),
            entries,
            max_words,
        })
    }

    /// One entry per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(name: impl Into<String>, text: &str, source: impl Into<String>) -> Result<Self> {
        let lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(name, lines, source)
    }

    pub fn load(name: impl Into<String>, path: impl AsRef<Path>, source: impl Into<String>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(name, &text, source)
    }

    pub fn contains(&self, folded: &str) -> bool {
        self.entries.contains(folded)
    }

    pub fn entries(&self) -> &BTreeSet<String> {
        &self.entries
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskingRuleSet {
    pub name_gazetteers: Vec<Gazetteer>,
    /// Frequent words; gazetteer hits in this set are never masked.
    pub frequent_words: Gazetteer,
    /// Domain terms that are never masked by any rule.
    pub exceptions: BTreeSet<String>,
    pub title_patterns: Vec<String>,
    pub mask_token: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    mask_token: Option<String>,
    title_patterns: Option<Vec<String>>,
    frequent_words: PathBuf,
    exceptions: PathBuf,
    gazetteers: Vec<GazetteerEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GazetteerEntry {
    name: String,
    path: PathBuf,
    #[serde(default)]
    source: Option<String>,
}

impl MaskingRuleSet {
    pub fn new(
        name_gazetteers: Vec<Gazetteer>,
        frequent_words: Gazetteer,
        exceptions: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Result<Self> {
        let rules = MaskingRuleSet {
            name_gazetteers,
            frequent_words,
            exceptions: exceptions.into_iter().map(|e| normalize_label(e.as_ref())).collect(),
            title_patterns: ["dr", "dra", "doctor", "doctora"].map(String::from).to_vec(),
            mask_token: DEFAULT_MASK_TOKEN.to_owned(),
        };
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask_token.trim().is_empty() {
            return Err(Error::validation("mask_token must not be empty"));
        }
        if DIGIT.is_match(&self.mask_token) {
            return Err(Error::validation("mask_token must not contain digits"));
        }
        let folded = normalize_label(&self.mask_token);
        for word in folded.unicode_words() {
            if self.name_gazetteers.iter().any(|g| g.contains(word)) {
                return Err(Error::validation(format!(
                    "mask_token word {word:?} is itself a gazetteer entry"
                )));
            }
        }
        Ok(())
    }

    /// Parse a rules TOML document, resolving file references with `read`.
    pub fn from_toml_str(data: &str, read: impl Fn(&Path) -> Result<String>) -> Result<Self> {
        let file: RulesFile = toml::from_str(data)?;
        let mut name_gazetteers = Vec::with_capacity(file.gazetteers.len());
        for g in &file.gazetteers {
            let source = g.source.clone().unwrap_or_else(|| g.path.display().to_string());
            name_gazetteers.push(Gazetteer::parse(g.name.clone(), &read(&g.path)?, source)?);
        }
        let frequent_words = Gazetteer::parse(
            "frequent_words",
            &read(&file.frequent_words)?,
            file.frequent_words.display().to_string(),
        )?;
        let exceptions = Gazetteer::parse(
            "exceptions",
            &read(&file.exceptions)?,
            file.exceptions.display().to_string(),
        )?;
        let mut rules = MaskingRuleSet::new(name_gazetteers, frequent_words, exceptions.entries().iter())?;
        if let Some(token) = file.mask_token {
            rules.mask_token = token;
        }
        if let Some(patterns) = file.title_patterns {
            rules.title_patterns = patterns.iter().map(|p| normalize_label(p)).collect();
        }
        rules.validate()?;
        Ok(rules)
    }

    /// Load a rules TOML file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&data, |rel| {
            let full = base.join(rel);
            fs::read_to_string(&full).map_err(|e| Error::io(full, e))
        })
    }

    fn is_suppressed(&self, folded: &str) -> bool {
        self.frequent_words.contains(folded) || self.exceptions.contains(folded)
    }

    fn is_title(&self, folded: &str) -> bool {
        self.title_patterns.iter().any(|t| t == folded)
    }

    fn max_words(&self) -> usize {
        self.name_gazetteers.iter().map(Gazetteer::max_words).max().unwrap_or(1)
    }
}

/// Delete every decimal digit (Unicode `Nd`); all other characters are kept in
/// order.
pub fn strip_numeric(text: &str) -> String {
    DIGIT.replace_all(text, "").into_owned()
}

fn count_digits(text: &str) -> usize {
    DIGIT.find_iter(text).count()
}

/// A masked region, in character offsets of the text passed to
/// [`mask_entities`]. `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSpan {
    pub start: usize,
    pub end: usize,
    pub rule: String,
}

struct Word<'a> {
    start: usize,
    end: usize,
    folded: String,
    text: &'a str,
    premasked: bool,
}

fn has_sentence_break(gap: &str, abbreviation_allowed: bool) -> bool {
    let gap = if abbreviation_allowed {
        gap.strip_prefix('.').unwrap_or(gap)
    } else {
        gap
    };
    gap.chars().any(|c| matches!(c, '.' | '!' | '?' | ';' | '\n' | '\r'))
}

/// Mask entities in numeric-stripped text. Returns the masked text and the
/// spans replaced, in order of appearance.
pub fn mask_entities(text: &str, rules: &MaskingRuleSet) -> (String, Vec<MaskedSpan>) {
    let existing: Vec<(usize, usize)> = text
        .match_indices(rules.mask_token.as_str())
        .map(|(i, m)| (i, i + m.len()))
        .collect();
    let words: Vec<Word> = text
        .unicode_word_indices()
        .map(|(start, w)| {
            let end = start + w.len();
            Word {
                start,
                end,
                folded: w.to_lowercase(),
                text: w,
                premasked: existing.iter().any(|&(s, e)| start >= s && end <= e),
            }
        })
        .collect();

    let mut spans: Vec<(usize, usize, String)> = Vec::new();
    let max_words = rules.max_words();
    let mut i = 0;
    while i < words.len() {
        let word = &words[i];
        if word.premasked {
            i += 1;
            continue;
        }
        if rules.is_title(&word.folded) {
            let abbreviation = word.text.chars().count() <= 3;
            let mut j = i + 1;
            let mut taken = 0;
            while j < words.len() && taken < TITLE_WINDOW {
                let gap = &text[words[j - 1].end..words[j].start];
                if has_sentence_break(gap, j == i + 1 && abbreviation) {
                    break;
                }
                let next = &words[j];
                if rules.exceptions.contains(&next.folded) {
                    break;
                }
                if !next.premasked {
                    spans.push((next.start, next.end, TITLE_RULE.to_owned()));
                }
                taken += 1;
                j += 1;
            }
            i = j;
            continue;
        }

        let mut matched = None;
        let longest = max_words.min(words.len() - i);
        'lengths: for len in (1..=longest).rev() {
            let run = &words[i..i + len];
            if run.iter().any(|w| w.premasked || rules.exceptions.contains(&w.folded)) {
                continue;
            }
            if run.windows(2).any(|p| !text[p[0].end..p[1].start].chars().all(char::is_whitespace)) {
                continue;
            }
            let key = run.iter().map(|w| w.folded.as_str()).collect::<Vec<_>>().join(" ");
            if rules.is_suppressed(&key) {
                continue;
            }
            for gazetteer in &rules.name_gazetteers {
                if gazetteer.contains(&key) {
                    matched = Some((len, format!("gazetteer:{}", gazetteer.name)));
                    break 'lengths;
                }
            }
        }
        match matched {
            Some((len, rule)) => {
                spans.push((words[i].start, words[i + len - 1].end, rule));
                i += len;
            }
            None => i += 1,
        }
    }

    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (start, end, _) in &spans {
        out.push_str(&text[cursor..*start]);
        out.push_str(&rules.mask_token);
        cursor = *end;
    }
    out.push_str(&text[cursor..]);

    let char_offset = |byte: usize| text[..byte].chars().count();
    let spans = spans
        .into_iter()
        .map(|(start, end, rule)| MaskedSpan {
            start: char_offset(start),
            end: char_offset(end),
            rule,
        })
        .collect();
    (out, spans)
}

/// A masked span attributed to a report; serialized as `[id, start, end, rule]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditSpan {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub rule: String,
}

impl Serialize for AuditSpan {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(4)?;
        t.serialize_element(&self.id)?;
        t.serialize_element(&self.start)?;
        t.serialize_element(&self.end)?;
        t.serialize_element(&self.rule)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for AuditSpan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (id, start, end, rule) = <(String, usize, usize, String)>::deserialize(deserializer)?;
        Ok(AuditSpan { id, start, end, rule })
    }
}

/// Audit trail of an [`anonymize`] run. Span offsets are character offsets
/// into the numeric-stripped text of each report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskingReport {
    pub n_numeric_removed: usize,
    pub n_masked_by_rule: BTreeMap<String, usize>,
    pub masked_spans: Vec<AuditSpan>,
}

impl MaskingReport {
    pub fn total_masked(&self) -> usize {
        self.n_masked_by_rule.values().sum()
    }
}

/// Strip digits and mask entities in every report. Ids and labels are left
/// untouched. A report whose text would become blank is replaced by the mask
/// token.
pub fn anonymize(corpus: &Corpus, rules: &MaskingRuleSet) -> Result<(Corpus, MaskingReport)> {
    let processed: Vec<(Report, usize, Vec<MaskedSpan>)> = corpus
        .reports()
        .par_iter()
        .map(|report| {
            let removed = count_digits(&report.text);
            let stripped = strip_numeric(&report.text);
            let (masked, spans) = mask_entities(&stripped, rules);
            let mut out = report.clone();
            out.text = if masked.trim().is_empty() {
                rules.mask_token.clone()
            } else {
                masked
            };
            (out, removed, spans)
        })
        .collect();

    let mut audit = MaskingReport::default();
    let mut reports = Vec::with_capacity(processed.len());
    for (report, removed, spans) in processed {
        audit.n_numeric_removed += removed;
        for span in spans {
            *audit.n_masked_by_rule.entry(span.rule.clone()).or_insert(0) += 1;
            audit.masked_spans.push(AuditSpan {
                id: report.id.clone(),
                start: span.start,
                end: span.end,
                rule: span.rule,
            });
        }
        reports.push(report);
    }
    Ok((Corpus::new(reports)?, audit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub n_common: usize,
    pub n_disagree: usize,
    pub rate: f64,
}

/// Inter-reviewer agreement over the ids both reviewers judged.
pub fn agreement(a: &BTreeMap<String, Verdict>, b: &BTreeMap<String, Verdict>) -> Result<Agreement> {
    let mut n_common = 0;
    let mut n_disagree = 0;
    for (id, verdict) in a {
        if let Some(other) = b.get(id) {
            n_common += 1;
            if verdict != other {
                n_disagree += 1;
            }
        }
    }
    if n_common == 0 {
        return Err(Error::validation("reviewers share no judged ids"));
    }
    Ok(Agreement {
        n_common,
        n_disagree,
        rate: 1.0 - n_disagree as f64 / n_common as f64,
    })
}
