//! Synthetic reports seeded with gazetteer names, digits, exceptions and
//! title patterns, plus an invariant checker that does not reuse the
//! anonymizer's own tokenization.

use std::collections::BTreeSet;

use dermcascade::anonymizer::MaskingRuleSet;
use dermcascade::corpus::{Corpus, Report};
use dermcascade::text::normalize_label;
use rand::seq::IndexedRandom;
use rand::Rng;

const CLINICAL: &[&str] = &[
    "paciente", "lesión", "eritematosa", "placa", "en", "zona", "con", "prurito", "desde", "hace",
    "meses", "refiere", "biopsia", "control", "tratamiento", "tópico", "evolución", "favorable",
    "presenta", "aspecto", "nódulo", "descamación", "antecedentes", "se", "pauta", "revisión",
];

fn capitalize(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Gazetteer entries that the anonymizer must mask wherever they appear.
pub fn maskable_entries(rules: &MaskingRuleSet) -> BTreeSet<String> {
    rules
        .name_gazetteers
        .iter()
        .flat_map(|g| g.entries().iter().cloned())
        .filter(|e| !rules.frequent_words.contains(e) && !rules.exceptions.contains(e))
        .collect()
}

pub fn synthetic_reports(rules: &MaskingRuleSet, n: usize, rng: &mut impl Rng) -> Corpus {
    let maskable: Vec<String> = maskable_entries(rules).into_iter().collect();
    let exceptions: Vec<&String> = rules.exceptions.iter().collect();
    let titles = ["Dr.", "dr", "Dra.", "dra", "Doctora", "DR."];
    let reports = (0..n)
        .map(|i| {
            let mut parts: Vec<String> = Vec::new();
            for _ in 0..rng.random_range(6..18) {
                let part = match rng.random_range(0..7) {
                    0 => capitalize(maskable.choose(rng).unwrap()),
                    1 => format!("{}", rng.random_range(0..100_000)),
                    2 => format!("{}/{}/20{:02}", rng.random_range(1..29), rng.random_range(1..13), rng.random_range(0..30)),
                    3 => exceptions.choose(rng).unwrap().to_string(),
                    4 => {
                        let follower = if rng.random_bool(0.3) {
                            exceptions.choose(rng).unwrap().to_string()
                        } else {
                            capitalize(maskable.choose(rng).unwrap())
                        };
                        format!("{} {}", titles.choose(rng).unwrap(), follower)
                    }
                    5 => ".".to_owned(),
                    _ => CLINICAL.choose(rng).unwrap().to_string(),
                };
                parts.push(part);
            }
            Report::new(format!("anon-{i:05}"), parts.join(" "), "dermatitis")
        })
        .collect();
    Corpus::new(reports).unwrap()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(normalize_label)
        .collect()
}

fn count_phrase(words: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || phrase.len() > words.len() {
        return 0;
    }
    words.windows(phrase.len()).filter(|w| *w == phrase).count()
}

/// Invariant violations between `input` and its anonymized `output`.
pub fn violations(rules: &MaskingRuleSet, input: &Corpus, output: &Corpus) -> Vec<String> {
    let maskable: Vec<Vec<String>> = maskable_entries(rules).iter().map(|e| words(e)).collect();
    let exceptions: Vec<Vec<String>> = rules.exceptions.iter().map(|e| words(e)).collect();
    let mut out = Vec::new();
    for (before, after) in input.reports().iter().zip(output.reports()) {
        if after.text.chars().any(char::is_numeric) {
            out.push(format!("{}: digits survive in {:?}", after.id, after.text));
        }
        let after_words = words(&after.text);
        for entry in &maskable {
            if count_phrase(&after_words, entry) > 0 {
                out.push(format!("{}: {:?} left unmasked in {:?}", after.id, entry.join(" "), after.text));
            }
        }
        let stripped: String = before.text.chars().filter(|c| !c.is_numeric()).collect();
        let before_words = words(&stripped);
        for e in &exceptions {
            let (n_in, n_out) = (count_phrase(&before_words, e), count_phrase(&after_words, e));
            if n_out < n_in {
                out.push(format!("{}: exception {:?} seen {n_in}x in input, {n_out}x in output", after.id, e.join(" ")));
            }
        }
    }
    out
}
