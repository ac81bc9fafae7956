use unicode_normalization::char::is_combining_mark;

/// Reserved token that introduces appended relation segments. Clinical text
/// never produces it: augmentation replaces any occurrence in the report with
/// a space before appending.
pub const SEPARATOR: char = '\u{27D0}';

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c) || c == '_' || c == '='
}

/// Lowercased word tokens. A token is a maximal run of letters, digits,
/// combining marks, `_` or `=`; the reserved separator is a token of its own.
/// No other normalization is applied.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_word_char(c) {
            current.extend(c.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if c == SEPARATOR {
            tokens.push(SEPARATOR.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
