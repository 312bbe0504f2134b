//! Small text utilities used by normalization, dedup keys, and reply cleanup.

/// Collapse runs of whitespace to single spaces and trim the ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-insensitive, whitespace-collapsed key used to compare example inputs.
pub fn normalize_input_key(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}

/// Strip trailing sentence punctuation (`.`, `!`, `?`, `…`) and any
/// whitespace that follows it.
pub fn strip_terminal_punctuation(s: &str) -> &str {
    s.trim_end().trim_end_matches(['.', '!', '?', '…']).trim_end()
}

/// Remove one layer of matching surrounding quotes.
pub fn strip_wrapping_quotes(s: &str) -> &str {
    let t = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')] {
        if t.len() >= 2 && t.starts_with(open) && t.ends_with(close) {
            let inner = &t[open.len_utf8()..t.len() - close.len_utf8()];
            // Only unwrap when the quotes are a wrapper, not internal pairs.
            if !inner.contains(open) && !inner.contains(close) {
                return inner.trim();
            }
        }
    }
    t
}

/// Strip a surrounding markdown code fence, if present.
pub fn strip_markdown_fences(s: &str) -> String {
    let t = s.trim();
    if !t.starts_with("```") {
        return t.to_string();
    }
    let body = match t.find('\n') {
        Some(pos) => &t[pos + 1..],
        None => return t.trim_matches('`').trim().to_string(),
    };
    let body = body.trim_end();
    let body = body.strip_suffix("```").unwrap_or(body);
    body.trim().to_string()
}
