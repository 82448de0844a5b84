//! Small file helpers. Token files hold one sentence per line, tokens separated
//! by single spaces.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use tagmt::Tokens;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn open_reader(path: &Path) -> CliResult<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).map_err(CliError::io(path))?))
}

pub fn read_tokens(path: &Path) -> CliResult<Vec<Tokens>> {
    open_reader(path)?
        .lines()
        .map(|l| {
            l.map(|l| l.split_whitespace().map(str::to_string).collect())
                .map_err(CliError::io(path))
        })
        .collect()
}

pub fn write_tokens<S: AsRef<[String]>>(path: &Path, sentences: &[S]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{}", s.as_ref().join(" ")).map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

/// Writes rows as tab-separated lines.
pub fn write_tsv<R, C>(path: &Path, rows: R) -> CliResult<()>
where
    R: IntoIterator<Item = C>,
    C: IntoIterator,
    C::Item: AsRef<str>,
{
    let mut text = String::new();
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|c| c.as_ref().to_string()).collect();
        text.push_str(&cells.join("\t"));
        text.push('\n');
    }
    write_text(path, &text)
}

/// Fixed-precision rendering used in every report, so reruns compare byte for byte.
pub fn fmt_metric(x: f64) -> String {
    format!("{x:.6}")
}

/// `absent` for an undefined value.
pub fn fmt_opt(x: Option<f64>, absent: &str) -> String {
    x.map(fmt_metric).unwrap_or_else(|| absent.to_string())
}
