//! CSV writing: comma separated, one header row, LF endings, floats with 17
//! significant digits.

use std::fs::File;
use std::path::Path;

use crate::Failure;

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvFile {
    writer: csv::Writer<File>,
    path: String,
}

impl CsvFile {
    pub fn create(path: &Path, header: &[String]) -> Result<Self, Failure> {
        let writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| Failure::Config(format!("cannot create {}: {e}", path.display())))?;
        let mut file = Self {
            writer,
            path: path.display().to_string(),
        };
        file.row(header)?;
        Ok(file)
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> Result<(), Failure> {
        self.writer
            .write_record(fields)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", self.path)))
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        self.writer
            .flush()
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", self.path)))
    }
}
