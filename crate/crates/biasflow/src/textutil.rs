//! Word extraction shared by polarity parsing and the mock's answer lookup.

/// Lowercased maximal alphabetic runs, in order of appearance.
pub(crate) fn alpha_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// First alphabetic word, lowercased.
pub(crate) fn first_alpha_word(text: &str) -> Option<String> {
    alpha_words(text).into_iter().next()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_non_alphabetic() {
        assert_eq!(alpha_words("Yes, there is."), vec!["yes", "there", "is"]);
        assert_eq!(first_alpha_word("  No."), Some("no".into()));
        assert_eq!(first_alpha_word("42"), None);
    }
}
