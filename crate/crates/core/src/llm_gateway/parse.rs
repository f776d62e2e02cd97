//! Extraction of `[rate, motivation]` lists from free-form model replies.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no [rating, motivation] list found in reply")]
    NoList,
    #[error("rating {0} outside 1..=5")]
    OutOfRange(i64),
}

/// Renders a verdict in the list format the prompt asks for. Backslashes and
/// double quotes in the motivation are escaped.
pub fn format_reply(rating: i64, motivation: &str) -> String {
    let escaped = motivation.replace('\\', "\\\\").replace('"', "\\\"");
    format!("[{rating}, \"{escaped}\"]")
}

/// Finds the first well-formed `[rate, motivation]` list in `raw`. Prose
/// around the list is ignored; the rate may be bare or quoted, the
/// motivation single-quoted, double-quoted or bare.
pub fn parse_response(raw: &str) -> Result<(i64, String), ParseError> {
    for (start, _) in raw.match_indices('[') {
        let rest = &raw[start + 1..];
        let Some(end) = rest.find(']') else {
            break;
        };
        if let Some((rating, motivation)) = parse_list(&rest[..end]) {
            if !(1..=5).contains(&rating) {
                return Err(ParseError::OutOfRange(rating));
            }
            return Ok((rating, motivation));
        }
    }
    Err(ParseError::NoList)
}

fn strip_quotes(s: &str) -> Option<&str> {
    let first = s.chars().next()?;
    if s.len() >= 2 && matches!(first, '"' | '\'') && s.ends_with(first) {
        Some(&s[1..s.len() - 1])
    } else {
        None
    }
}

fn parse_rating(s: &str) -> Option<i64> {
    let s = s.trim();
    let s = strip_quotes(s).unwrap_or(s).trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f = s.parse::<f64>().ok()?;
    (f.fract() == 0.0 && f.is_finite()).then_some(f as i64)
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(e @ ('\\' | '"' | '\'')) => out.push(e),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn parse_list(inner: &str) -> Option<(i64, String)> {
    let (rate, motivation) = inner.split_once(',')?;
    let rating = parse_rating(rate)?;
    let motivation = motivation.trim();
    let motivation = match strip_quotes(motivation) {
        Some(quoted) => unescape(quoted),
        None => motivation.to_string(),
    };
    if motivation.trim().is_empty() {
        return None;
    }
    Some((rating, motivation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_list() {
        assert_eq!(
            parse_response(r#"[4, "Robotics can automate repetitive tasks..."]"#),
            Ok((4, "Robotics can automate repetitive tasks...".into()))
        );
    }

    #[test]
    fn prose_and_mixed_quotes() {
        assert_eq!(
            parse_response(r#"Sure! Here is my answer: ["2", 'lacks the ability to engage']"#),
            Ok((2, "lacks the ability to engage".into()))
        );
    }

    #[test]
    fn no_list() {
        assert_eq!(parse_response("I cannot rate this."), Err(ParseError::NoList));
        assert_eq!(parse_response("[4]"), Err(ParseError::NoList));
        assert_eq!(parse_response("[4, ]"), Err(ParseError::NoList));
    }

    #[test]
    fn out_of_range() {
        assert_eq!(parse_response("[7, \"great\"]"), Err(ParseError::OutOfRange(7)));
        assert_eq!(parse_response("[0, 'none']"), Err(ParseError::OutOfRange(0)));
    }

    #[test]
    fn skips_non_list_brackets() {
        assert_eq!(
            parse_response("Scale [1-5]. Answer: [3.0, bare motivation text] trailing"),
            Ok((3, "bare motivation text".into()))
        );
    }

    #[test]
    fn apostrophes_inside_single_quotes() {
        assert_eq!(
            parse_response("['5', 'it's fully automatable, as robots can't tire']"),
            Ok((5, "it's fully automatable, as robots can't tire".into()))
        );
    }

    #[test]
    fn escaped_quotes() {
        assert_eq!(
            parse_response(r#"[1, "called \"impossible\" by experts"]"#),
            Ok((1, "called \"impossible\" by experts".into()))
        );
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(
            rating in 1i64..=5,
            motivation in "[^\\[\\]]*[a-zA-Z0-9][^\\[\\]]*"
        ) {
            let rendered = format_reply(rating, &motivation);
            prop_assert_eq!(parse_response(&rendered), Ok((rating, motivation)));
        }
    }
}
