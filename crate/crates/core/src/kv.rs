//! Line-oriented `key = value` text with `#` comments.

use crate::{Error, Result};

/// Parses `key = value` lines in order. Blank lines and everything after a
/// `#` are ignored; a later duplicate key overrides an earlier one.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut offset = 0u64;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if !line.is_empty() {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(offset, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::format(offset, format!("line {}: empty key", lineno + 1)));
            }
            match out.iter_mut().find(|(key, _)| key == k) {
                Some(entry) => entry.1 = v.to_string(),
                None => out.push((k.to_string(), v.to_string())),
            }
        }
        offset += raw.len() as u64 + 1;
    }
    Ok(out)
}

pub fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::format(0, format!("missing key `{key}`")))
}

pub fn parse_value<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
    let raw = lookup(pairs, key)?;
    raw.parse()
        .map_err(|_| Error::format(0, format!("key `{key}`: cannot parse `{raw}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blanks_and_overrides() {
        let pairs = parse("# header\na = 1\n\nb=two # trailing\na = 3\n").unwrap();
        assert_eq!(pairs, vec![("a".into(), "3".into()), ("b".into(), "two".into())]);
        assert_eq!(parse_value::<u32>(&pairs, "a").unwrap(), 3);
        assert!(parse_value::<u32>(&pairs, "b").is_err());
        assert!(lookup(&pairs, "c").is_err());
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(parse("ok = 1\nnot a pair\n"), Err(Error::Format { offset: 7, .. })));
    }
}
