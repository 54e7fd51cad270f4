//! Character-offset helpers. Every offset in this crate counts Unicode scalar
//! values, never bytes.

/// Number of characters (scalar values) in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Returns the substring covering characters `[start, end)`, or `None` when the
/// range is empty-inverted or runs past the end of `s`.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let begin = byte_offset(s, start)?;
    let finish = byte_offset(s, end)?;
    Some(&s[begin..finish])
}

/// Inclusive-end variant used by the JSON dump convention.
pub fn char_slice_inclusive(s: &str, start: usize, end: usize) -> Option<&str> {
    char_slice(s, start, end.checked_add(1)?)
}

fn byte_offset(s: &str, char_index: usize) -> Option<usize> {
    if char_index == 0 {
        return Some(0);
    }
    match s.char_indices().nth(char_index) {
        Some((b, _)) => Some(b),
        None if char_len(s) == char_index => Some(s.len()),
        None => None,
    }
}

/// Collapses every line break and tab to a single space so the text fits on
/// one PubTator line. `\r\n` becomes one space.
pub fn flatten_line_breaks(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push(' ');
            }
            '\n' | '\t' => out.push(' '),
            _ => out.push(c),
        }
    }
    out
}
