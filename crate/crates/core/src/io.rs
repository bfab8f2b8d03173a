//! Small output helpers shared by the CSV writers.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::Result;

/// Float rendered with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // keep negative zero out of the files so equal runs stay byte-equal
        return format!("{:.16e}", 0.0);
    }
    format!("{x:.16e}")
}

/// Optional float; empty cell when absent.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}
