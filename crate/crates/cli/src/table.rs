//! CSV output: `#` header lines, one column row, unquoted comma-separated
//! fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub struct Table {
    header: Vec<String>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: &str, config: &RunConfig, columns: &[&'static str]) -> Self {
        Self { header: header_lines(kind, config), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        debug_assert!(row.iter().all(|f| !f.contains([',', '\n', '"'])));
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            writeln!(s, "{h}").unwrap();
        }
        writeln!(s, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> crate::Result<()> {
        crate::write_file(path, self.render().as_bytes())
    }
}

/// The lines every output file starts with.
pub fn header_lines(kind: &str, config: &RunConfig) -> Vec<String> {
    vec![format!("# stereo-ncc {kind} schema={SCHEMA_VERSION} seed={}", config.seed), config.header_line()]
}

/// Header lines as PGM comments, which get their `# ` from the encoder.
pub fn pgm_comments(kind: &str, config: &RunConfig) -> Vec<String> {
    header_lines(kind, config).into_iter().map(|l| l.trim_start_matches("# ").to_string()).collect()
}

/// Everything after the `#` lines.
pub fn body(text: &str) -> String {
    text.lines().skip_while(|l| l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let cfg = RunConfig::default();
        let mut t = Table::new("metrics", &cfg, &["a", "b"]);
        t.push(vec![num(0.5), num(f64::NAN)]);
        let text = t.render();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# stereo-ncc metrics schema=1"));
        assert!(lines[1].starts_with("# config={"));
        assert_eq!(&lines[2..], ["a,b", "0.5,NaN"]);
        assert_eq!(body(&text), "a,b\n0.5,NaN\n");
        assert_eq!(RunConfig::from_header(&text).unwrap(), cfg);
    }
}
