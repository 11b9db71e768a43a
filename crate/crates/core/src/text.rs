//! Question/cell tokenization shared by preprocessing and the SQL executor.

/// Joiner used when a multi-word entity is collapsed into one token.
pub const ENTITY_JOINER: char = '^';

fn is_split_punct(c: char) -> bool {
    matches!(
        c,
        ',' | '?' | '!' | ';' | ':' | '"' | '(' | ')' | '[' | ']' | '{' | '}'
    )
}

/// Lowercases and splits on whitespace, emitting punctuation as separate tokens.
///
/// A `.` between two digits stays inside the token (`1.5`); any other `.` is split off.
/// Apostrophes, hyphens and `^` are word characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let decimal_point = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if is_split_punct(c) || (c == '.' && !decimal_point) {
            flush(&mut current, &mut tokens);
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

/// Canonical single-token form of a phrase: `"New York"` → `"new^york"`.
pub fn entity_key(text: &str) -> String {
    let joiner = ENTITY_JOINER.to_string();
    tokenize(text).join(&joiner)
}

/// Canonical form of a column name: tokens joined by single spaces.
pub fn normalize_column(name: &str) -> String {
    tokenize(name).join(" ")
}

/// Parses a numeric cell or constant. Only plain decimal notation is accepted.
pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    let first = t.chars().next()?;
    if !(first.is_ascii_digit() || first == '-' || first == '+' || first == '.') {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(
            tokenize("What is New York 's score?"),
            vec!["what", "is", "new", "york", "'s", "score", "?"]
        );
    }

    #[test]
    fn keeps_decimals_and_joined_entities() {
        assert_eq!(tokenize("1.5 points. new^york"), vec!["1.5", "points", ".", "new^york"]);
    }

    #[test]
    fn entity_keys() {
        assert_eq!(entity_key("New  York"), "new^york");
        assert_eq!(entity_key("new^york"), "new^york");
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_number("13"), Some(13.0));
        assert_eq!(parse_number(" -2.5 "), Some(-2.5));
        assert_eq!(parse_number("inf"), None);
        assert_eq!(parse_number("nan"), None);
        assert_eq!(parse_number("goorambat"), None);
    }
}
