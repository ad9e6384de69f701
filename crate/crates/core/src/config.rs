//! Minimal sectioned key/value text format shared by the vehicle, scenario,
//! and strategy configuration files.
//!
//! ```text
//! # comment
//! [section.name]
//! key = value
//! vector = 1.0 2.0 3.0
//! row = 0.1 0.2 0.3      # repeated keys are kept in order
//! ```

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: malformed config line: {text}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: entry before any [section]")]
    EntryOutsideSection { line: usize },
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("section [{section}]: missing key `{key}`")]
    MissingKey { section: String, key: String },
    #[error("line {line}: bad number `{token}`")]
    BadNumber { line: usize, token: String },
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone)]
pub struct ConfigDoc {
    sections: Vec<Section>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: Vec<Section> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Malformed {
                        line: line_no,
                        text: raw.to_string(),
                    })?
                    .trim();
                sections.push(Section {
                    name: name.to_string(),
                    line: line_no,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: line_no,
                text: raw.to_string(),
            })?;
            let section = sections
                .last_mut()
                .ok_or(ConfigError::EntryOutsideSection { line: line_no })?;
            section.entries.push(Entry {
                key: key.trim().to_string(),
                value: value.trim().to_string(),
                line: line_no,
            });
        }
        Ok(ConfigDoc { sections })
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section, ConfigError> {
        self.section(name)
            .ok_or_else(|| ConfigError::MissingSection(name.to_string()))
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn values<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Entry, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::MissingKey {
            section: self.name.clone(),
            key: key.to_string(),
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let e = self.require(key)?;
        e.parse_f64()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            Some(e) => e.parse_f64(),
            None => Ok(default),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            Some(e) => e.value.parse().map_err(|_| ConfigError::BadNumber {
                line: e.line,
                token: e.value.clone(),
            }),
            None => Ok(default),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            Some(e) => match e.value.as_str() {
                "true" | "1" | "on" | "yes" => Ok(true),
                "false" | "0" | "off" | "no" => Ok(false),
                _ => Err(ConfigError::BadNumber {
                    line: e.line,
                    token: e.value.clone(),
                }),
            },
            None => Ok(default),
        }
    }

    pub fn vec_f64(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.require(key)?.parse_vec_f64()
    }
}

impl Entry {
    pub fn parse_f64(&self) -> Result<f64, ConfigError> {
        self.value.parse().map_err(|_| ConfigError::BadNumber {
            line: self.line,
            token: self.value.clone(),
        })
    }

    pub fn parse_vec_f64(&self) -> Result<Vec<f64>, ConfigError> {
        self.value
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| ConfigError::BadNumber {
                    line: self.line,
                    token: tok.to_string(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_vectors() {
        let doc = ConfigDoc::parse(
            "# top comment\n[a]\nx = 1.5\nv = 1 2 3\n[b.c]\nrow = 1 2\nrow = 3 4\n",
        )
        .unwrap();
        assert_eq!(doc.section("a").unwrap().f64("x").unwrap(), 1.5);
        assert_eq!(doc.section("a").unwrap().vec_f64("v").unwrap(), vec![1.0, 2.0, 3.0]);
        let rows: Vec<_> = doc.section("b.c").unwrap().values("row").collect();
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn rejects_entry_outside_section() {
        assert!(matches!(
            ConfigDoc::parse("x = 1\n"),
            Err(ConfigError::EntryOutsideSection { line: 1 })
        ));
    }

    #[test]
    fn reports_bad_number_with_line() {
        let doc = ConfigDoc::parse("[a]\nx = abc\n").unwrap();
        match doc.section("a").unwrap().f64("x") {
            Err(ConfigError::BadNumber { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected BadNumber, got {other:?}"),
        }
    }
}
