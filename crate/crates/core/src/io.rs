//! File formats: datasets, models, thresholds, sample streams.
//!
//! JSON goes through serde_json, which writes floats in shortest round-trip
//! form, so a value read back is bit-identical to the one written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibration::{RankEntry, RankThresholds, ThresholdSource, VarianceEntry, VarianceThresholds};
use crate::covariance::{CovarianceModel, FeatureDataset, NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::measurement::{MeasurementConfig, PositionSampleSet, ProbeDescriptor};
use crate::C64;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Norm requirement on parsed vectors: datasets hold unit feature states;
/// test inputs may also be subnormalized (the stored mean branch is).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NormRule {
    Unit,
    AtMostUnit,
}

impl NormRule {
    fn check(self, norm_sq: f64) -> bool {
        match self {
            NormRule::Unit => (norm_sq - 1.0).abs() <= NORM_TOLERANCE,
            NormRule::AtMostUnit => norm_sq.is_finite() && norm_sq <= 1.0 + NORM_TOLERANCE,
        }
    }
}

fn parse_vectors_csv(text: &str, rule: NormRule) -> Result<Vec<DVector<C64>>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let complex = columns.len().is_multiple_of(2)
        && columns
            .chunks(2)
            .enumerate()
            .all(|(j, pair)| pair[0] == format!("re_{j}") && pair[1] == format!("im_{j}"));
    let d = if complex { columns.len() / 2 } else { columns.len() };
    let mut vectors = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let mut values = Vec::with_capacity(fields.len());
        for (c, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("column {}: cannot parse {f:?}", c + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("column {}: non-finite value", c + 1)));
            }
            values.push(v);
        }
        let v: DVector<C64> = if complex {
            DVector::from_iterator(d, values.chunks(2).map(|p| C64::new(p[0], p[1])))
        } else {
            DVector::from_iterator(d, values.iter().map(|&x| C64::new(x, 0.0)))
        };
        let norm_sq = v.norm_squared();
        if !rule.check(norm_sq) {
            return Err(parse_err(
                lineno,
                format!("feature vector is not normalized (norm^2 = {norm_sq})"),
            ));
        }
        vectors.push(v);
    }
    if vectors.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }
    Ok(vectors)
}

/// Parses a dataset CSV. The header names columns `re_0,im_0,re_1,im_1,...`;
/// a header of bare `x_0,x_1,...` (or any names without the `re_`/`im_`
/// pattern) is read as real-valued features.
pub fn parse_dataset_csv(text: &str) -> Result<FeatureDataset> {
    FeatureDataset::new(parse_vectors_csv(text, NormRule::Unit)?)
}

pub fn read_dataset_csv(path: &Path) -> Result<FeatureDataset> {
    parse_dataset_csv(&fs::read_to_string(path)?)
}

/// A feature entry in JSON: a real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonScalar {
    Real(f64),
    Complex([f64; 2]),
}

impl From<JsonScalar> for C64 {
    fn from(s: JsonScalar) -> Self {
        match s {
            JsonScalar::Real(x) => C64::new(x, 0.0),
            JsonScalar::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Debug, Deserialize)]
struct DatasetJson {
    vectors: Vec<Vec<JsonScalar>>,
}

/// Reads `{"vectors": [[...], ...]}` with real or `[re, im]` entries.
pub fn parse_dataset_json(text: &str) -> Result<FeatureDataset> {
    let raw: DatasetJson = serde_json::from_str(text)?;
    FeatureDataset::new(raw.vectors.into_iter().map(to_vector).collect())
}

pub fn read_dataset(path: &Path) -> Result<FeatureDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => parse_dataset_json(&fs::read_to_string(path)?),
        _ => read_dataset_csv(path),
    }
}

/// Reads test inputs in the dataset formats. Inputs may be subnormalized
/// (norm at most one), so the stored mean branch itself can be scored.
pub fn read_inputs(path: &Path) -> Result<Vec<DVector<C64>>> {
    let text = fs::read_to_string(path)?;
    let vectors = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let raw: DatasetJson = serde_json::from_str(&text)?;
            let vectors: Vec<_> = raw.vectors.into_iter().map(to_vector).collect();
            for (index, v) in vectors.iter().enumerate() {
                let norm_sq = v.norm_squared();
                if !NormRule::AtMostUnit.check(norm_sq) {
                    return Err(Error::NotNormalized { index, norm_sq });
                }
            }
            vectors
        }
        _ => parse_vectors_csv(&text, NormRule::AtMostUnit)?,
    };
    let dim = vectors.first().map_or(0, |v| v.len());
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    if vectors.is_empty() {
        return Err(Error::Invalid("no input vectors".into()));
    }
    Ok(vectors)
}

fn to_vector(v: Vec<JsonScalar>) -> DVector<C64> {
    DVector::from_iterator(v.len(), v.into_iter().map(C64::from))
}

fn from_vector(v: &DVector<C64>) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn rows_of(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<DMatrix<C64>> {
    let n = rows.len();
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: r.len(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

/// Serialized covariance model. Complex entries are `[re, im]`; matrices are
/// row-major, and `eigenvectors[j]` is the `j`-th eigenvector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub dim: usize,
    pub centered: bool,
    pub matrix: Vec<Vec<[f64; 2]>>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<[f64; 2]>>,
    pub total_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_vector: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn from_model(model: &CovarianceModel) -> Self {
        let u = model.eigenvectors();
        Self {
            dim: model.dim(),
            centered: model.is_centered(),
            matrix: rows_of(model.matrix()),
            eigenvalues: model.eigenvalues().to_vec(),
            eigenvectors: (0..u.ncols())
                .map(|j| u.column(j).iter().map(|z| [z.re, z.im]).collect())
                .collect(),
            total_variance: model.total_variance(),
            mean_vector: model.mean_vector().map(from_vector),
            alpha: model.mean_norm_sq(),
            manifest: None,
        }
    }

    pub fn to_model(&self) -> Result<CovarianceModel> {
        let matrix = matrix_from_rows(&self.matrix)?;
        let d = matrix.nrows();
        if self.eigenvectors.len() != d || self.eigenvectors.iter().any(|c| c.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.eigenvectors.len(),
            });
        }
        let vectors = DMatrix::from_fn(d, d, |i, j| {
            C64::new(self.eigenvectors[j][i][0], self.eigenvectors[j][i][1])
        });
        let mean = self
            .mean_vector
            .as_ref()
            .map(|m| DVector::from_iterator(m.len(), m.iter().map(|p| C64::new(p[0], p[1]))));
        CovarianceModel::from_parts(matrix, self.eigenvalues.clone(), vectors, mean)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_model(path: &Path, model: &CovarianceModel, manifest: Option<serde_json::Value>) -> Result<()> {
    let mut file = ModelFile::from_model(model);
    file.manifest = manifest;
    write_json(path, &file)
}

pub fn read_model(path: &Path) -> Result<CovarianceModel> {
    read_json::<ModelFile>(path)?.to_model()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Rank,
    Variance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdEntry {
    Rank { k: usize, beta: f64 },
    Variance { theta: f64, beta: f64 },
}

/// On-disk threshold ladder of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub kind: ThresholdKind,
    /// Dimension, recorded for rank ladders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub config: MeasurementConfig,
    pub entries: Vec<ThresholdEntry>,
    pub source: ThresholdSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

impl From<&RankThresholds> for ThresholdFile {
    fn from(t: &RankThresholds) -> Self {
        Self {
            kind: ThresholdKind::Rank,
            dim: Some(t.dim),
            config: t.config,
            entries: t
                .entries
                .iter()
                .map(|e| ThresholdEntry::Rank { k: e.k, beta: e.beta })
                .collect(),
            source: t.source.clone(),
            warnings: t.warnings.clone(),
            manifest: None,
        }
    }
}

impl From<&VarianceThresholds> for ThresholdFile {
    fn from(t: &VarianceThresholds) -> Self {
        Self {
            kind: ThresholdKind::Variance,
            dim: None,
            config: t.config,
            entries: t
                .entries
                .iter()
                .map(|e| ThresholdEntry::Variance {
                    theta: e.theta,
                    beta: e.beta,
                })
                .collect(),
            source: t.source.clone(),
            warnings: t.warnings.clone(),
            manifest: None,
        }
    }
}

impl ThresholdFile {
    pub fn to_rank(&self, dim: usize) -> Result<RankThresholds> {
        if self.kind != ThresholdKind::Rank {
            return Err(Error::Invalid("threshold file holds variance thresholds".into()));
        }
        if let Some(d) = self.dim {
            if d != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: d,
                });
            }
        }
        let entries = self
            .entries
            .iter()
            .map(|e| match *e {
                ThresholdEntry::Rank { k, beta } => Ok(RankEntry { k, beta }),
                _ => Err(Error::Invalid("variance entry in a rank threshold file".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RankThresholds {
            dim,
            entries,
            source: self.source.clone(),
            config: self.config,
            warnings: self.warnings.clone(),
        })
    }

    pub fn to_variance(&self) -> Result<VarianceThresholds> {
        if self.kind != ThresholdKind::Variance {
            return Err(Error::Invalid("threshold file holds rank thresholds".into()));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| match *e {
                ThresholdEntry::Variance { theta, beta } => Ok(VarianceEntry { theta, beta }),
                _ => Err(Error::Invalid("rank entry in a variance threshold file".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VarianceThresholds {
            entries,
            source: self.source.clone(),
            config: self.config,
            warnings: self.warnings.clone(),
        })
    }
}

/// JSON sidecar of a binary sample file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub seed: u64,
    pub count: usize,
    pub probe: ProbeDescriptor,
    pub config: MeasurementConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

/// `samples.bin` -> `samples.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes samples as little-endian f64 plus a JSON sidecar next to it.
pub fn write_samples(path: &Path, set: &PositionSampleSet, manifest: Option<serde_json::Value>) -> Result<()> {
    let mut bytes = Vec::with_capacity(set.samples.len() * 8);
    for q in &set.samples {
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, bytes)?;
    write_json(
        &sidecar_path(path),
        &SampleSidecar {
            seed: set.seed,
            count: set.samples.len(),
            probe: set.probe.clone(),
            config: set.config,
            manifest,
        },
    )
}

pub fn read_samples(path: &Path) -> Result<PositionSampleSet> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Invalid(format!(
            "sample file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let samples: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let side: SampleSidecar = read_json(&sidecar_path(path))?;
    if side.count != samples.len() {
        return Err(Error::Invalid(format!(
            "sidecar declares {} samples, file holds {}",
            side.count,
            samples.len()
        )));
    }
    Ok(PositionSampleSet {
        samples,
        seed: side.seed,
        probe: side.probe,
        config: side.config,
    })
}

fn comment_line(out: &mut impl Write, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "{c}")?;
    }
    Ok(())
}

/// One `q` per line under a `q` header, optionally preceded by a comment line.
pub fn write_samples_csv(path: &Path, samples: &[f64], comment: Option<&str>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    comment_line(&mut out, comment)?;
    writeln!(out, "q")?;
    for q in samples {
        writeln!(out, "{q}")?;
    }
    out.flush()?;
    Ok(())
}

/// CSV with a header row and one row per point.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>], comment: Option<&str>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    comment_line(&mut out, comment)?;
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_may_be_subnormalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("in.csv");
        fs::write(&path, "x_0,x_1\n0.3,0.4\n1,0\n").unwrap();
        let v = read_inputs(&path).unwrap();
        assert!((v[0].norm_squared() - 0.25).abs() < 1e-15);
        fs::write(&path, "x_0,x_1\n1,1\n").unwrap();
        assert!(matches!(read_inputs(&path), Err(Error::Parse { line: 2, .. })));
        assert!(parse_dataset_csv("x_0,x_1\n0.3,0.4\n").is_err());
    }
    use crate::calibration::calibrate_exact_ranks;
    use crate::measurement::{sample_positions, ProbeState};

    #[test]
    fn csv_complex_and_real() {
        let text = "re_0,im_0,re_1,im_1\n1,0,0,0\n0,0,0,1\n";
        let d = parse_dataset_csv(text).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.vectors()[1][1], C64::new(0.0, 1.0));
        let d = parse_dataset_csv("x_0,x_1,x_2\n0.6,0.8,0\n").unwrap();
        assert_eq!(d.dim(), 3);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match parse_dataset_csv("x_0,x_1\n1,0\n0,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_dataset_csv("x_0,x_1\n1,0,3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_dataset_csv("x_0,x_1\n1,1\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("normalized"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_json_mixed_entries() {
        let d = parse_dataset_json(r#"{"vectors": [[1, 0], [[0, 0], [0, 1]]]}"#).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.vectors()[1][1], C64::new(0.0, 1.0));
    }

    #[test]
    fn model_round_trip_is_exact() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8], vec![0.0, 0.8, -0.6]];
        let m = CovarianceModel::build_centered(&FeatureDataset::from_real(&rows).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_model(&p, &m, None).unwrap();
        let back = read_model(&p).unwrap();
        assert_eq!(back.eigenvalues(), m.eigenvalues());
        assert_eq!(back.mean_norm_sq(), m.mean_norm_sq());
        assert_eq!(back.fingerprint(), m.fingerprint());
    }

    #[test]
    fn threshold_round_trip() {
        let m = CovarianceModel::from_spectrum(&[2.0, 1.0, 0.5]).unwrap();
        let cfg = MeasurementConfig::new(0.1, 1.0, 0.0).unwrap();
        let t = calibrate_exact_ranks(&m, cfg, &[1, 2], 1e-13).unwrap();
        let file = ThresholdFile::from(&t);
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains(r#""source":{"type":"exact"}"#));
        let back: ThresholdFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_rank(3).unwrap(), t);
        assert!(back.to_variance().is_err());
    }

    #[test]
    fn sample_file_round_trip() {
        let m = CovarianceModel::from_spectrum(&[1.0, 0.5]).unwrap();
        let cfg = MeasurementConfig::new(0.1, 1.0, 0.0).unwrap();
        let set = sample_positions(&m, &cfg, &ProbeState::maximally_mixed(&m), 100, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_samples(&p, &set, None).unwrap();
        let back = read_samples(&p).unwrap();
        assert_eq!(back.samples, set.samples);
        assert_eq!(back.probe, set.probe);
        let side: serde_json::Value = read_json(&sidecar_path(&p)).unwrap();
        assert_eq!(side["count"], 100);
        assert_eq!(side["probe"]["kind"], "maximally_mixed");
    }
}
