//! Minimal sectioned `key = value` text format used for system definitions
//! and experiment configs. Lines starting with `#` or `;` are comments.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut out = Self::default();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| format!("line {}: unterminated section header", lineno + 1))?;
                current = name.trim().to_string();
                out.sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
            out.sections
                .entry(current.clone())
                .or_default()
                .push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(out)
    }

    pub fn section(&self, name: &str) -> Option<&[(String, String)]> {
        self.sections.get(name).map(|v| v.as_slice())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, String> {
        self.get(section, key)
            .ok_or_else(|| format!("missing '{key}' in section [{section}]"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let f = KvFile::parse("# header\n[a]\nx = 1\ny = hello world\n\n[b]\nx = 2\n").unwrap();
        assert_eq!(f.get("a", "x"), Some("1"));
        assert_eq!(f.get("a", "y"), Some("hello world"));
        assert_eq!(f.get("b", "x"), Some("2"));
        assert_eq!(f.get("b", "z"), None);
        assert!(f.require("b", "z").is_err());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(KvFile::parse("[unterminated\n").is_err());
        assert!(KvFile::parse("[a]\nno equals sign\n").is_err());
    }
}
