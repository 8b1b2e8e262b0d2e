use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Maximal runs of alphanumeric characters, lowercased.
    #[default]
    Words,
    /// Every alphanumeric character is its own token (CJK text).
    Characters,
}

/// Splits `text` on whitespace and punctuation. Separators are dropped.
pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    match mode {
        TokenizerMode::Characters => text
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .map(String::from)
            .collect(),
        TokenizerMode::Words => {
            let mut out = Vec::new();
            let mut current = String::new();
            for c in text.chars() {
                if c.is_alphanumeric() {
                    current.extend(c.to_lowercase());
                } else if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
            out
        }
    }
}
