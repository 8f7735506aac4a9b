//! Rendering of command results as `key = value` text or CSV.

use std::fmt::Display;

use clap::ValueEnum;

pub const FORMAT_HEADER: &str = "phimi-format=1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Csv,
}

/// Ordered fields of one result record.
#[derive(Debug, Default)]
pub struct Record {
    fields: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_list(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let text: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.push(key, text.join(", "))
    }

    fn keys(&self) -> Vec<&str> {
        self.fields.iter().map(|(k, _)| k.as_str()).collect()
    }

    fn values(&self) -> Vec<&str> {
        self.fields.iter().map(|(_, v)| v.as_str()).collect()
    }
}

/// Header line, then the records as `key = value` blocks or as one CSV table.
/// CSV output requires every record to have the same keys.
pub fn render(records: &[Record], format: Format) -> String {
    let mut out = format!("{FORMAT_HEADER}\n");
    match format {
        Format::Human => {
            for (i, r) in records.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                for (k, v) in &r.fields {
                    out.push_str(&format!("{k} = {v}\n"));
                }
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if let Some(first) = records.first() {
                w.write_record(first.keys()).expect("in-memory write");
            }
            for r in records {
                w.write_record(r.values()).expect("in-memory write");
            }
            out.push_str(&String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields"));
        }
    }
    out
}
