use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::config::RunConfig;

/// Ordered `(metric, value)` pairs, shown as a table and saved as CSV.
#[derive(Debug, Default)]
pub struct Metrics(pub Vec<(String, String)>);

impl Metrics {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn print_table(&self) {
        let w = self.0.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max("metric".len());
        println!("{:<w$}  value", "metric");
        println!("{:-<w$}  {:-<5}", "", "");
        for (k, v) in &self.0 {
            println!("{k:<w$}  {v}");
        }
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut out = create(path)?;
        writeln!(out, "metric,value")?;
        for (k, v) in &self.0 {
            writeln!(out, "{k},{v}")?;
        }
        Ok(out.flush()?)
    }
}

pub fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn new(dir: PathBuf) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir(dir))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Resolved config, seed, command line and version. `config.toml` holds
    /// the resolved config alone so `--config` can rerun it.
    pub fn write_manifest(&self, command: &str, argv: &[String], cfg: &RunConfig) -> anyhow::Result<()> {
        let mut run = toml::Table::new();
        run.insert("command".into(), command.into());
        run.insert(
            "argv".into(),
            toml::Value::Array(argv.iter().map(|a| a.as_str().into()).collect()),
        );
        run.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
        run.insert("entlog_version".into(), env!("CARGO_PKG_VERSION").into());
        let mut doc = toml::Table::new();
        doc.insert("run".into(), toml::Value::Table(run));
        doc.insert("config".into(), toml::Value::try_from(cfg)?);
        std::fs::write(self.file("manifest.toml"), toml::to_string(&doc)?)?;
        std::fs::write(self.file("config.toml"), cfg.to_toml()?)?;
        Ok(())
    }
}
