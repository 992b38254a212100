//! Tokenizers: the index tokenizer (alphanumeric runs), the word tokenizer
//! used on the decoder side and for query/pseudo-query comparison, and the
//! rule-based sentence splitter.

/// Lowercase alphanumeric runs. Everything else separates tokens.
pub fn index_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_word_char(ch: char) -> bool {
    ch.is_alphanumeric() || ch == '_'
}

/// Word-level tokenizer: lowercases, splits on whitespace, and splits
/// punctuation into separate tokens except for `-`, `.`, `'` and `/`
/// between word characters (`64-year-old`, `3.5`, `e586k`).
pub fn word_tokens(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for i in 0..chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_word_char(ch) {
            cur.extend(ch.to_lowercase());
        } else {
            let joins = matches!(ch, '-' | '.' | '\'' | '/')
                && !cur.is_empty()
                && chars.get(i + 1).is_some_and(|c| is_word_char(*c));
            if joins {
                cur.push(ch);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn attaches_left(tok: &str) -> bool {
    matches!(
        tok,
        ")" | "]" | "}" | "," | "." | ";" | ":" | "!" | "?" | "%"
    )
}

fn attaches_right(tok: &str) -> bool {
    matches!(tok, "(" | "[" | "{")
}

/// Inverse of [`word_tokens`] up to whitespace normalisation.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for tok in tokens {
        if !glue_next && !attaches_left(tok) {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = attaches_right(tok);
    }
    out
}

/// A token that carries at least one alphanumeric character.
pub fn is_word_token(tok: &str) -> bool {
    tok.chars().any(char::is_alphanumeric)
}

/// Split on `.`, `?` or `!` followed by whitespace. The terminator stays
/// with its sentence; empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, ch)) in bytes.iter().enumerate() {
        if matches!(ch, '.' | '?' | '!') && bytes.get(k + 1).is_some_and(|(_, c)| c.is_whitespace())
        {
            let end = i + ch.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
    }
    let s = text[start..].trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owned(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn index_tokens_split_non_alphanumerics() {
        assert_eq!(
            index_tokens("BRAF (E586K), 64-year-old"),
            owned(&["braf", "e586k", "64", "year", "old"])
        );
        assert!(index_tokens("  --  ").is_empty());
    }

    #[test]
    fn word_tokens_keep_hyphenated_words() {
        assert_eq!(
            word_tokens("64-year-old female"),
            owned(&["64-year-old", "female"])
        );
        assert_eq!(
            word_tokens("BRAF (E586K)"),
            owned(&["braf", "(", "e586k", ")"])
        );
        assert_eq!(
            word_tokens("emesh_d018281 end."),
            owned(&["emesh_d018281", "end", "."])
        );
    }

    #[test]
    fn word_tokens_round_trip() {
        for text in [
            "braf (e586k)",
            "64-year-old female",
            "prostate neoplasms/genetics, aged",
            "a (b-c) d.",
        ] {
            assert_eq!(detokenize(&word_tokens(text)), text);
        }
    }

    #[test]
    fn sentences_split_on_terminal_punctuation() {
        let s = split_sentences("First one. Second? Third! v3.2 stays");
        assert_eq!(s, owned(&["First one.", "Second?", "Third!", "v3.2 stays"]));
        assert!(split_sentences("   ").is_empty());
    }
}
