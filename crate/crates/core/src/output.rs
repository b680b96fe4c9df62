//! Artifact files: samples CSV in and out, and atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sampler::PosteriorSamples;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed samples file: {0}")]
    Malformed(String),
}

/// Writes `contents` to a temporary file in the target directory and renames
/// it into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), OutputError> {
    let err = |source| OutputError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// One row per draw, columns named after the parameters plus `log_post`.
/// Values use the shortest representation that reads back exactly.
pub fn samples_to_csv(samples: &PosteriorSamples) -> String {
    let mut out = samples.column_names.join(",");
    out.push_str(",log_post\n");
    for (row, lp) in samples.draws.iter().zip(&samples.log_post) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{lp}\n"));
    }
    out
}

/// Parses a samples file. Acceptance rate and seed are not stored in the
/// CSV; they come back as `NaN` and 0.
pub fn samples_from_csv(text: &str) -> Result<PosteriorSamples, OutputError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| OutputError::Malformed(e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.last().map(String::as_str) != Some("log_post") || names.len() < 6 {
        return Err(OutputError::Malformed(
            "header must list the parameters followed by log_post".into(),
        ));
    }
    let dim = names.len() - 1;
    let mut draws = Vec::new();
    let mut log_post = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| OutputError::Malformed(e.to_string()))?;
        let values: Vec<f64> = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| OutputError::Malformed(format!("row {}: {e}", i + 1)))?;
        if values.iter().any(|v| v.is_nan()) {
            return Err(OutputError::Malformed(format!("row {}: NaN value", i + 1)));
        }
        log_post.push(values[dim]);
        draws.push(values[..dim].to_vec());
    }
    if draws.is_empty() {
        return Err(OutputError::Malformed("no draws".into()));
    }
    Ok(PosteriorSamples {
        column_names: names[..dim].to_vec(),
        draws,
        log_post,
        accept_rate: f64::NAN,
        seed: 0,
        failures: 0,
    })
}

pub fn read_samples(path: &Path) -> Result<PosteriorSamples, OutputError> {
    let text = std::fs::read_to_string(path).map_err(|source| OutputError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    samples_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ParameterVector;

    fn samples() -> PosteriorSamples {
        PosteriorSamples {
            column_names: ParameterVector::names(1),
            draws: vec![vec![2.33e-7, -1.0 / 3.0, 0.79695, 0.1 + 0.2, 0.0098, 1.4e-4]; 3],
            log_post: vec![-12.5, 1e300, 0.1],
            accept_rate: 0.3,
            seed: 4,
            failures: 0,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = samples();
        let csv = samples_to_csv(&s);
        assert!(csv.starts_with("alpha0,alpha1,betaA,beta,gamma,eta,log_post\n"));
        let back = samples_from_csv(&csv).unwrap();
        assert_eq!(back.draws, s.draws);
        assert_eq!(back.log_post, s.log_post);
        assert_eq!(back.column_names, s.column_names);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(samples_from_csv("").is_err());
        assert!(samples_from_csv("alpha0,alpha1,betaA,beta,gamma,eta,log_post\n").is_err());
        assert!(samples_from_csv("a,b\n1,2\n").is_err());
        assert!(samples_from_csv("alpha0,alpha1,betaA,beta,gamma,eta,log_post\n1,2,x,4,5,6,7\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("f.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
