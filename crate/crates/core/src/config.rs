//! Flat `key = value` configuration text with `[section]` headers.
//!
//! Lines starting with `#` or `;` are comments. Keys before the first header
//! belong to an unnamed section. A section name may repeat; each occurrence is
//! kept as its own block, in file order.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    /// 1-based line of the header (0 for the unnamed leading section).
    pub line: usize,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    /// Last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("section [{}] needs `{key}`", self.name)))
    }

    /// Parses the value of `key` when present.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("[{}] {key}: cannot read `{v}`", self.name)))
            })
            .transpose()
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Fails on keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(Error::Config(format!("unknown key `{k}` in section [{}]", self.name))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigDoc {
    pub sections: Vec<Section>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line,
                    message: "unclosed section header".into(),
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Parse {
                        line,
                        message: "empty section name".into(),
                    });
                }
                sections.push(Section {
                    name: name.to_ascii_lowercase(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = s.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, got `{s}`"),
            })?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty key".into(),
                });
            }
            if sections.is_empty() {
                sections.push(Section::default());
            }
            let section = sections.last_mut().unwrap();
            section.entries.push((key, value.trim().to_string()));
        }
        Ok(Self { sections })
    }

    pub fn sections_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.name == name)
    }

    /// The single section called `name`; errors when absent or repeated.
    pub fn unique<'a>(&'a self, name: &'a str) -> Result<&'a Section> {
        let mut it = self.sections_named(name);
        let first = it.next().ok_or_else(|| Error::Config(format!("missing section [{name}]")))?;
        if let Some(second) = it.next() {
            return Err(Error::Parse {
                line: second.line,
                message: format!("section [{name}] given twice"),
            });
        }
        Ok(first)
    }
}

impl fmt::Display for ConfigDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, section) in self.sections.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            if !section.name.is_empty() {
                writeln!(f, "[{}]", section.name)?;
            }
            for (k, v) in &section.entries {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}
