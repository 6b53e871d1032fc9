//! Line-oriented output: `key: value` for people, `key = value` for scripts.

use std::fmt::Write as _;

use clap::ValueEnum;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Machine,
}

#[derive(Debug, Default)]
pub struct Report {
    fields: Vec<(String, String)>,
    tables: Vec<Table>,
}

#[derive(Debug)]
struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

pub fn num(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn flag(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

pub fn list(items: &[usize]) -> String {
    let parts: Vec<String> = items.iter().map(usize::to_string).collect();
    format!("[{}]", parts.join(", "))
}

pub fn matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" "))
        .collect();
    rows.join("; ")
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.fields.push((key.to_string(), value.into()));
        self
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> &mut Self {
        self.tables.push(Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows,
        });
        self
    }

    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Machine => {
                for (k, v) in &self.fields {
                    writeln!(out, "{k} = {v}").unwrap();
                }
                for t in &self.tables {
                    for (i, row) in t.rows.iter().enumerate() {
                        for (h, cell) in t.header.iter().zip(row) {
                            writeln!(out, "{}.{i}.{h} = {cell}", t.name).unwrap();
                        }
                    }
                }
            }
            Format::Human => {
                let width = self.fields.iter().map(|(k, _)| k.len() + 1).max().unwrap_or(0);
                for (k, v) in &self.fields {
                    writeln!(out, "{:<width$}  {v}", format!("{k}:")).unwrap();
                }
                for t in &self.tables {
                    writeln!(out, "\n{}", t.name).unwrap();
                    let widths: Vec<usize> = (0..t.header.len())
                        .map(|c| t.rows.iter().map(|r| r[c].len()).chain([t.header[c].len()]).max().unwrap())
                        .collect();
                    let line = |cells: &[String]| {
                        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
                    };
                    writeln!(out, "{}", line(&t.header)).unwrap();
                    for row in &t.rows {
                        writeln!(out, "{}", line(row)).unwrap();
                    }
                }
            }
        }
        out
    }
}
