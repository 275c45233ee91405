//! Mapping free-form model replies back onto the presented options.

use std::collections::BTreeSet;

use thiserror::Error;

use super::prompt::PromptOption;
use crate::ontology::AtcCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStage {
    Exact,
    Prefix,
    Token,
    Name,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("reply matches several options at the {stage:?} stage: {}", codes.iter().map(AtcCode::as_str).collect::<Vec<_>>().join(", "))]
pub struct AmbiguousMatch {
    pub stage: MatchStage,
    pub codes: Vec<AtcCode>,
}

/// Resolves a reply to one option code, trying progressively looser rules:
///
/// 1. the trimmed reply is exactly an option code (case-insensitive);
/// 2. the reply starts with an option code followed by `:`, whitespace or end,
///    and names no other option code;
/// 3. exactly one option code occurs as a standalone token;
/// 4. exactly one option label occurs in the reply (case-insensitive).
///
/// The first rule that hits decides. `Ok(None)` means nothing matched; a rule
/// that hits more than one distinct code yields [`AmbiguousMatch`].
pub fn normalize_reply(raw: &str, options: &[PromptOption]) -> Result<Option<AtcCode>, AmbiguousMatch> {
    let upper = raw.trim().to_uppercase();

    if let Some(opt) = options.iter().find(|o| o.code.as_str() == upper) {
        return Ok(Some(opt.code.clone()));
    }

    let tokens = code_tokens(&upper);

    // A leading code only counts when the rest of the reply names no other
    // option; "N01 or N02" falls through to the token rule and is ambiguous
    // there. The option's own rendered label is not scanned.
    let prefixed = options.iter().filter(|o| {
        let Some(rest) = upper.strip_prefix(o.code.as_str()) else {
            return false;
        };
        if !rest.chars().next().is_none_or(|c| c == ':' || c.is_whitespace()) {
            return false;
        }
        let tail = upper.strip_prefix(&o.rendered.to_uppercase()).unwrap_or(rest);
        let tail_tokens = code_tokens(tail);
        !options.iter().any(|other| other.code != o.code && tail_tokens.contains(other.code.as_str()))
    });
    if let Some(hit) = unique(prefixed, MatchStage::Prefix)? {
        return Ok(Some(hit));
    }

    let tokened = options.iter().filter(|o| tokens.contains(o.code.as_str()));
    if let Some(hit) = unique(tokened, MatchStage::Token)? {
        return Ok(Some(hit));
    }

    let lower = raw.to_lowercase();
    let named = options
        .iter()
        .filter(|o| o.label().is_some_and(|l| lower.contains(&l.to_lowercase())));
    unique(named, MatchStage::Name)
}

fn code_tokens(upper: &str) -> BTreeSet<&str> {
    upper
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

fn unique<'a>(
    hits: impl Iterator<Item = &'a PromptOption>,
    stage: MatchStage,
) -> Result<Option<AtcCode>, AmbiguousMatch> {
    let codes: BTreeSet<&AtcCode> = hits.map(|o| &o.code).collect();
    match codes.len() {
        0 => Ok(None),
        1 => Ok(codes.into_iter().next().cloned()),
        _ => Err(AmbiguousMatch {
            stage,
            codes: codes.into_iter().cloned().collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opts(list: &[(&str, &str)]) -> Vec<PromptOption> {
        list.iter()
            .map(|(c, name)| {
                let code = AtcCode::parse(c).unwrap();
                let rendered = if name.is_empty() { c.to_string() } else { format!("{c}: {name}") };
                PromptOption { code, rendered }
            })
            .collect()
    }

    fn code(s: &str) -> AtcCode {
        AtcCode::parse(s).unwrap()
    }

    fn nervous() -> Vec<PromptOption> {
        opts(&[("N01", "Anesthetics"), ("N02", "Analgesics"), ("N03", "Antiepileptics")])
    }

    /// Independent check for the token rule: which option codes occur as
    /// maximal alphanumeric runs of the reply.
    fn token_scan(reply: &str, options: &[PromptOption]) -> Vec<String> {
        let chars: Vec<char> = reply.to_uppercase().chars().collect();
        let mut hits = Vec::new();
        for o in options {
            let needle: Vec<char> = o.code.as_str().chars().collect();
            for start in 0..chars.len() {
                let end = start + needle.len();
                if end > chars.len() || chars[start..end] != needle[..] {
                    continue;
                }
                let left_ok = start == 0 || !chars[start - 1].is_ascii_alphanumeric();
                let right_ok = end == chars.len() || !chars[end].is_ascii_alphanumeric();
                if left_ok && right_ok {
                    hits.push(o.code.to_string());
                    break;
                }
            }
        }
        hits
    }

    #[test]
    fn exact_code() {
        assert_eq!(normalize_reply("  n02 \n", &nervous()).unwrap(), Some(code("N02")));
    }

    #[test]
    fn prefix_form() {
        let o = opts(&[("A10BA02", "metformin"), ("A10BA01", "phenformin")]);
        assert_eq!(normalize_reply("A10BA02: metformin", &o).unwrap(), Some(code("A10BA02")));
        assert_eq!(normalize_reply("A10BA01 (phenformin)", &o).unwrap(), Some(code("A10BA01")));
    }

    #[test]
    fn prefix_needs_a_delimiter() {
        // "N02X" is not "N02" followed by a delimiter, and contains no token either
        assert_eq!(normalize_reply("N02X", &nervous()).unwrap(), None);
    }

    #[test]
    fn token_anywhere() {
        let reply = "The best match is N02.";
        assert_eq!(token_scan(reply, &nervous()), ["N02"]);
        assert_eq!(normalize_reply(reply, &nervous()).unwrap(), Some(code("N02")));
    }

    #[test]
    fn no_option_present() {
        let o = opts(&[("N01", ""), ("N02", "")]);
        assert_eq!(normalize_reply("X99", &o).unwrap(), None);
        assert_eq!(normalize_reply("", &o).unwrap(), None);
    }

    #[test]
    fn two_tokens_are_ambiguous() {
        let o = opts(&[("N01", ""), ("N02", "")]);
        let err = normalize_reply("N01 or N02", &o).unwrap_err();
        assert_eq!(err.stage, MatchStage::Token);
        assert_eq!(err.codes, [code("N01"), code("N02")]);
    }

    #[test]
    fn name_fallback() {
        assert_eq!(normalize_reply("I'd say analgesics", &nervous()).unwrap(), Some(code("N02")));
        let err = normalize_reply("analgesics or anesthetics", &nervous()).unwrap_err();
        assert_eq!(err.stage, MatchStage::Name);
    }

    #[test]
    fn code_only_options_have_no_name_stage() {
        let o = opts(&[("N01", ""), ("N02", "")]);
        assert_eq!(normalize_reply("analgesics", &o).unwrap(), None);
    }

    #[test]
    fn earlier_stage_wins() {
        // the prefix rule fires before the name rule would see two labels
        assert_eq!(normalize_reply("N02: Analgesics, not Anesthetics", &nervous()).unwrap(), Some(code("N02")));
        // but a leading code followed by a second code is not a clean answer
        assert!(normalize_reply("N02: not N01", &nervous()).is_err());
    }

    #[test]
    fn verbatim_line_with_code_like_label() {
        let o = opts(&[("A", "Alimentary tract, vitamin D"), ("D", "Dermatologicals")]);
        assert_eq!(normalize_reply("A: Alimentary tract, vitamin D", &o).unwrap(), Some(code("A")));
        assert!(normalize_reply("A: or D", &o).is_err());
    }

    proptest! {
        #[test]
        fn matches_are_always_options(reply in ".{0,40}", pick in 0usize..3) {
            let o = nervous();
            if let Ok(Some(c)) = normalize_reply(&reply, &o) {
                prop_assert!(o.iter().any(|x| x.code == c));
            }
            // an option's own rendered line always resolves to that option
            prop_assert_eq!(normalize_reply(&o[pick].rendered, &o).unwrap(), Some(o[pick].code.clone()));
        }

        #[test]
        fn single_token_agrees_with_scan(noise in "[a-z ,.]{0,20}", pick in 0usize..3) {
            let o = opts(&[("N01", ""), ("N02", ""), ("N03", "")]);
            let reply = format!("{noise} {} {noise}", o[pick].code);
            let scan = token_scan(&reply, &o);
            prop_assert_eq!(scan.len(), 1);
            prop_assert_eq!(normalize_reply(&reply, &o).unwrap().map(|c| c.to_string()), Some(scan[0].clone()));
        }
    }
}
