//! String helpers: whitespace token counts, lexical terms and canonical forms.

/// Number of whitespace-separated tokens.
pub fn whitespace_token_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Keeps at most `max_tokens` whitespace tokens, joined by single spaces.
pub fn truncate_tokens(s: &str, max_tokens: usize) -> String {
    s.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased alphanumeric runs. No stemming, no stopwords.
pub fn lexical_terms(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Case-folded, whitespace-normalized form used for option distinctness.
pub fn canonical(s: &str) -> String {
    s.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Finds `needle` as a contiguous run of lexical terms in `haystack` terms.
/// Returns the index of the last term of the last occurrence.
pub fn last_term_match(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len())
        .rev()
        .find(|&i| haystack[i..i + needle.len()] == *needle)
        .map(|i| i + needle.len() - 1)
}

/// Sentences split on `.`, `!` or `?` followed by whitespace or end of text.
pub fn sentences(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = s.as_bytes();
    for (i, c) in s.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let next = i + c.len_utf8();
            if next >= bytes.len() || bytes[next].is_ascii_whitespace() {
                let sentence = s[start..next].trim();
                if !sentence.is_empty() {
                    out.push(sentence);
                }
                start = next;
            }
        }
    }
    let tail = s[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_terms_split_on_non_alphanumerics() {
        assert_eq!(
            lexical_terms("Israel's rocket-fire, 2190!"),
            vec!["israel", "s", "rocket", "fire", "2190"]
        );
    }

    #[test]
    fn canonical_folds_case_and_space() {
        assert_eq!(canonical("  Abar   Police "), "abar police");
    }

    #[test]
    fn term_match_respects_word_boundaries() {
        let hay = lexical_terms("(Kabar Police, Meet, Abar Police, 12);");
        let needle = lexical_terms("Abar Police");
        assert_eq!(last_term_match(&hay, &needle), Some(4));
        let hay = lexical_terms("Kabar Police");
        assert_eq!(last_term_match(&hay, &needle), None);
    }

    #[test]
    fn sentence_split() {
        let s = "One thing. Two things! Three? Four";
        assert_eq!(sentences(s), vec!["One thing.", "Two things!", "Three?", "Four"]);
        assert_eq!(sentences("v1.2 is out. Yes."), vec!["v1.2 is out.", "Yes."]);
    }
}
