/// Characters that always form a token of their own.
pub const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"'];

/// Lowercase, split on whitespace, and split off each punctuation mark in
/// [`PUNCTUATION`] as a separate token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Join tokens with single spaces; `tokenize(&detokenize(t)) == t` for any
/// token list produced by [`tokenize`].
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
