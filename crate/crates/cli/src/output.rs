use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes tables and records into one output directory, each stamped with
/// the tool version, scenario, config hash and seed.
pub struct Output {
    dir: PathBuf,
    scenario: String,
    hash: String,
    seed: Option<u64>,
}

/// Shortest round-trip form; always uses '.' as decimal separator.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

impl Output {
    pub fn new(dir: &Path, scenario: &str, hash: &str, seed: Option<u64>) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), scenario: scenario.into(), hash: hash.into(), seed })
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec![
            format!("cfs {VERSION}"),
            format!("scenario: {}", self.scenario),
            format!("config-sha256: {}", self.hash),
        ];
        if let Some(s) = self.seed {
            h.push(format!("seed: {s}"));
        }
        h
    }

    /// CSV with `#` comment lines, then a column header and the rows.
    pub fn csv(&self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(self.dir.join(name))?);
        for line in self.header() {
            writeln!(f, "# {line}")?;
        }
        {
            let mut w = csv::WriterBuilder::new().from_writer(&mut f);
            w.write_record(columns)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        f.flush()?;
        println!("{} {name}: {} rows", self.scenario, rows.len());
        Ok(())
    }

    /// JSON document `{"meta": {...}, "data": value}`.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Meta<'a> {
            tool: String,
            scenario: &'a str,
            config_sha256: &'a str,
            seed: Option<u64>,
        }
        #[derive(Serialize)]
        struct Doc<'a, T> {
            meta: Meta<'a>,
            data: &'a T,
        }
        let doc = Doc {
            meta: Meta { tool: format!("cfs {VERSION}"), scenario: &self.scenario, config_sha256: &self.hash, seed: self.seed },
            data: value,
        };
        let mut f = BufWriter::new(File::create(self.dir.join(name))?);
        serde_json::to_writer_pretty(&mut f, &doc)?;
        writeln!(f)?;
        f.flush()?;
        println!("{} {name}: written", self.scenario);
        Ok(())
    }

    pub fn summary(&self, text: &str) {
        println!("{} summary: {text}", self.scenario);
    }
}
