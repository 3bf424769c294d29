//! Corpus bookkeeping: sample identity, manifests, and feature persistence.
//!
//! Samples are identified by the SHA-256 of their content so that feature
//! matrices and evaluation results can be joined across runs. Feature
//! matrices are persisted in the little-endian `FMX1` container described
//! on [`write_feature_matrix`].

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const FMX_MAGIC: &[u8; 4] = b"FMX1";
const FMX_VERSION: u32 = 1;
const ID_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("labels file {path}: {source}")]
    LabelsIo {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("labels file must start with a filename,label header, found {found:?}")]
    BadLabelsHeader { found: String },
    #[error("labels row {line}: expected columns filename,label")]
    MalformedRow { line: u64 },
    #[error("labels row {line}: empty label for {filename}")]
    EmptyLabel { line: u64, filename: String },
    #[error("labeled file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("reading {path}: {source}")]
    FileIo {
        path: PathBuf,
        source: io::Error,
    },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("manifest json: {0}")]
    ManifestJson(#[from] serde_json::Error),
    #[error("feature matrix: expected magic FMX1, found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("feature matrix: unsupported version {0}")]
    BadVersion(u32),
    #[error("feature matrix truncated at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("feature matrix holds a non-finite value (sample {sample}, column {column})")]
    NonFiniteValue { sample: usize, column: usize },
    #[error("feature name is not valid UTF-8")]
    BadFeatureName,
    #[error("sample id must be 64 lowercase hex chars, got {0:?}")]
    BadSampleId(String),
    #[error("feature matrix row {row} has length {got}, expected {expected}")]
    RowLengthMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
}

/// Content identity of a sample: SHA-256 of the file bytes, lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(String);

impl SampleId {
    pub fn from_content(bytes: &[u8]) -> SampleId {
        let digest = Sha256::digest(bytes);
        SampleId(hex_lower(&digest))
    }

    pub fn parse(s: &str) -> Result<SampleId, CorpusError> {
        if s.len() == ID_LEN && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
        {
            Ok(SampleId(s.to_string()))
        } else {
            Err(CorpusError::BadSampleId(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for SampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// One labeled file on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: SampleId,
    pub path: PathBuf,
    pub label: String,
    pub size: u64,
}

/// The ingested corpus: records ordered ascending by id, the set of class
/// labels, and the seed that downstream evaluation should use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<SampleRecord>,
    pub classes: BTreeSet<String>,
    pub seed: u64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, CorpusError> {
        let file = fs::File::open(path).map_err(|source| CorpusError::FileIo {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = fs::File::create(path).map_err(|source| CorpusError::FileIo {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn label_of(&self, id: &SampleId) -> Option<&str> {
        self.samples
            .binary_search_by(|r| r.id.cmp(id))
            .ok()
            .map(|i| self.samples[i].label.as_str())
    }
}

/// Walk a labels CSV (`filename,label`) and hash every referenced file.
///
/// Filenames are resolved relative to `root`. Records come back sorted
/// ascending by id (ties by path) so the manifest is reproducible no matter
/// how the CSV was ordered.
pub fn ingest_directory(root: &Path, labels: &Path, seed: u64) -> Result<Manifest, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(labels)
        .map_err(|source| CorpusError::LabelsIo {
            path: labels.to_path_buf(),
            source,
        })?;
    let headers = reader.headers().map_err(|source| CorpusError::LabelsIo {
        path: labels.to_path_buf(),
        source,
    })?;
    let header_fields: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if header_fields != ["filename", "label"] {
        return Err(CorpusError::BadLabelsHeader {
            found: header_fields.join(","),
        });
    }

    let mut samples = Vec::new();
    let mut classes = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|source| CorpusError::LabelsIo {
            path: labels.to_path_buf(),
            source,
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(CorpusError::MalformedRow { line });
        }
        let filename = record[0].trim();
        let label = record[1].trim();
        if filename.is_empty() {
            return Err(CorpusError::MalformedRow { line });
        }
        if label.is_empty() {
            return Err(CorpusError::EmptyLabel {
                line,
                filename: filename.to_string(),
            });
        }
        let path = root.join(filename);
        if !path.is_file() {
            return Err(CorpusError::MissingFile(path));
        }
        let bytes = fs::read(&path).map_err(|source| CorpusError::FileIo {
            path: path.clone(),
            source,
        })?;
        classes.insert(label.to_string());
        samples.push(SampleRecord {
            id: SampleId::from_content(&bytes),
            path,
            label: label.to_string(),
            size: bytes.len() as u64,
        });
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.path.cmp(&b.path)));
    Ok(Manifest {
        samples,
        classes,
        seed,
    })
}

/// One feature set across the corpus: a named `n_samples x dim` matrix of
/// 32-bit reals keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub feature_name: String,
    pub dim: usize,
    pub ids: Vec<SampleId>,
    pub rows: Vec<Vec<f32>>,
}

impl FeatureMatrix {
    pub fn new(feature_name: impl Into<String>, dim: usize) -> FeatureMatrix {
        FeatureMatrix {
            feature_name: feature_name.into(),
            dim,
            ids: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Append one sample's vector, narrowing to f32 storage.
    ///
    /// Values must stay finite after the narrowing; anything else would
    /// poison distance computations and the on-disk container.
    pub fn push(&mut self, id: SampleId, values: &[f64]) -> Result<(), CorpusError> {
        if values.len() != self.dim {
            return Err(CorpusError::RowLengthMismatch {
                row: self.rows.len(),
                got: values.len(),
                expected: self.dim,
            });
        }
        let row: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        if let Some(column) = row.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFiniteValue {
                sample: self.rows.len(),
                column,
            });
        }
        self.ids.push(id);
        self.rows.push(row);
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }
}

/// Write a matrix in the FMX1 container.
///
/// Layout (all integers little-endian): magic `FMX1`, u32 version, u32 name
/// length + UTF-8 name, u32 sample count, u32 dim, then per sample a 64-byte
/// ASCII id followed by `dim` f32 values. Identical matrices serialize to
/// identical bytes.
pub fn write_feature_matrix(matrix: &FeatureMatrix, out: &Path) -> Result<(), CorpusError> {
    let file = fs::File::create(out).map_err(|source| CorpusError::FileIo {
        path: out.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(FMX_MAGIC)?;
    w.write_all(&FMX_VERSION.to_le_bytes())?;
    let name = matrix.feature_name.as_bytes();
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&(matrix.n_samples() as u32).to_le_bytes())?;
    w.write_all(&(matrix.dim as u32).to_le_bytes())?;
    for (id, row) in matrix.ids.iter().zip(&matrix.rows) {
        w.write_all(id.as_str().as_bytes())?;
        for &v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8]) -> Result<(), CorpusError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(CorpusError::Truncated { offset: self.offset })
            }
            Err(e) => Err(CorpusError::Io(e)),
        }
    }

    fn read_u32(&mut self) -> Result<u32, CorpusError> {
        let mut buf = [0u8; 4];
        self.read_exact_at(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }
}

/// Read an FMX1 container back into a [`FeatureMatrix`].
pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::FileIo {
        path: path.to_path_buf(),
        source,
    })?;
    let file_len = file
        .metadata()
        .map_err(|source| CorpusError::FileIo {
            path: path.to_path_buf(),
            source,
        })?
        .len();
    let mut r = CountingReader {
        inner: BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic)?;
    if &magic != FMX_MAGIC {
        return Err(CorpusError::BadMagic { found: magic });
    }
    let version = r.read_u32()?;
    if version != FMX_VERSION {
        return Err(CorpusError::BadVersion(version));
    }
    // validate every header-claimed length against the physical file size
    // before allocating for it
    let name_len = r.read_u32()? as usize;
    if name_len as u64 > file_len.saturating_sub(r.offset) {
        return Err(CorpusError::Truncated { offset: file_len });
    }
    let mut name_buf = vec![0u8; name_len];
    r.read_exact_at(&mut name_buf)?;
    let feature_name = String::from_utf8(name_buf).map_err(|_| CorpusError::BadFeatureName)?;
    let n_samples = r.read_u32()? as usize;
    let dim = r.read_u32()? as usize;
    let record_len = 4u64
        .checked_mul(dim as u64)
        .and_then(|v| v.checked_add(ID_LEN as u64))
        .ok_or(CorpusError::Truncated { offset: file_len })?;
    let payload = record_len
        .checked_mul(n_samples as u64)
        .ok_or(CorpusError::Truncated { offset: file_len })?;
    if payload > file_len.saturating_sub(r.offset) {
        return Err(CorpusError::Truncated { offset: file_len });
    }

    let mut ids = Vec::with_capacity(n_samples);
    let mut rows = Vec::with_capacity(n_samples);
    let mut id_buf = [0u8; ID_LEN];
    let mut row_buf = vec![0u8; dim * 4];
    for sample in 0..n_samples {
        r.read_exact_at(&mut id_buf)?;
        let id_str = std::str::from_utf8(&id_buf)
            .map_err(|_| CorpusError::BadSampleId(format!("{id_buf:?}")))?;
        ids.push(SampleId::parse(id_str)?);
        r.read_exact_at(&mut row_buf)?;
        let mut row = Vec::with_capacity(dim);
        for (column, chunk) in row_buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(CorpusError::NonFiniteValue { sample, column });
            }
            row.push(v);
        }
        rows.push(row);
    }

    Ok(FeatureMatrix {
        feature_name,
        dim,
        ids,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use tempfile::tempdir;

    fn sample_matrix() -> FeatureMatrix {
        let mut m = FeatureMatrix::new("mfcc", 20);
        let a = SampleId::from_content(b"file a");
        let b = SampleId::from_content(b"file b");
        m.push(a, &(0..20).map(|i| i as f64 * 0.25).collect::<Vec<_>>())
            .unwrap();
        m.push(b, &(0..20).map(|i| -(i as f64)).collect::<Vec<_>>())
            .unwrap();
        m
    }

    #[test]
    fn sample_id_is_deterministic_sha256() {
        let a = SampleId::from_content(b"hello");
        let b = SampleId::from_content(b"hello");
        assert_eq!(a, b);
        assert_eq!(
            a.as_str(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }

    #[test]
    fn sample_id_rejects_malformed_strings() {
        assert!(SampleId::parse("abc").is_err());
        assert!(SampleId::parse(&"G".repeat(64)).is_err());
        assert!(SampleId::parse(&"A".repeat(64)).is_err());
        assert!(SampleId::parse(&"a".repeat(64)).is_ok());
    }

    #[test]
    fn fmx_round_trip_preserves_everything() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.fmx");
        let m = sample_matrix();
        write_feature_matrix(&m, &path).unwrap();
        let back = read_feature_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn fmx_file_size_matches_header_arithmetic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.fmx");
        let m = sample_matrix();
        write_feature_matrix(&m, &path).unwrap();
        let header = 4 + 4 + 4 + m.feature_name.len() as u64 + 4 + 4;
        let expected = header + 2 * (64 + 20 * 4);
        assert_eq!(fs::metadata(&path).unwrap().len(), expected);
    }

    #[test]
    fn fmx_writes_are_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.fmx");
        let p2 = dir.path().join("b.fmx");
        let m = sample_matrix();
        write_feature_matrix(&m, &p1).unwrap();
        write_feature_matrix(&m, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn fmx_bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.fmx");
        fs::write(&path, b"FMX2somethingelse").unwrap();
        assert!(matches!(
            read_feature_matrix(&path),
            Err(CorpusError::BadMagic { .. })
        ));
    }

    #[test]
    fn fmx_truncation_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.fmx");
        write_feature_matrix(&sample_matrix(), &path).unwrap();
        let full = fs::read(&path).unwrap();
        // cut mid-row: drop the last 10 bytes
        let cut = path.with_extension("cut");
        fs::write(&cut, &full[..full.len() - 10]).unwrap();
        match read_feature_matrix(&cut) {
            Err(CorpusError::Truncated { offset }) => assert!(offset > 0),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn fmx_rejects_non_finite_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.fmx");
        write_feature_matrix(&sample_matrix(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let header = 4 + 4 + 4 + 4 /* name */ + 4 + 4;
        let value_offset = header + 64; // first value of first row
        bytes[value_offset..value_offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_feature_matrix(&path),
            Err(CorpusError::NonFiniteValue { sample: 0, column: 0 })
        ));
    }

    #[test]
    fn fmx_rejects_header_claims_beyond_file_size() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.fmx");
        write_feature_matrix(&sample_matrix(), &path).unwrap();
        let original = fs::read(&path).unwrap();

        // inflate the claimed sample count far past the actual payload
        let mut bytes = original.clone();
        let count_offset = 4 + 4 + 4 + 4; // magic, version, name_len, name "mfcc"
        bytes[count_offset..count_offset + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_feature_matrix(&path),
            Err(CorpusError::Truncated { .. })
        ));

        // inflate the claimed name length the same way
        let mut bytes = original;
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_feature_matrix(&path),
            Err(CorpusError::Truncated { .. })
        ));
    }

    #[test]
    fn ingest_rejects_wrong_header() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("a.bin"), b"x").unwrap();
        let labels = dir.path().join("labels.csv");
        fs::write(&labels, "file,class\na.bin,A\n").unwrap();
        match ingest_directory(dir.path(), &labels, 0) {
            Err(CorpusError::BadLabelsHeader { found }) => assert_eq!(found, "file,class"),
            other => panic!("expected BadLabelsHeader, got {other:?}"),
        }
    }

    #[test]
    fn push_rejects_wrong_row_length() {
        let mut m = FeatureMatrix::new("x", 3);
        assert!(m.push(SampleId::from_content(b"a"), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn push_rejects_values_that_leave_f32_range() {
        let mut m = FeatureMatrix::new("x", 2);
        assert!(matches!(
            m.push(SampleId::from_content(b"a"), &[1.0, f64::NAN]),
            Err(CorpusError::NonFiniteValue { sample: 0, column: 1 })
        ));
        // finite in f64 but infinite once narrowed
        assert!(matches!(
            m.push(SampleId::from_content(b"b"), &[1e300, 0.0]),
            Err(CorpusError::NonFiniteValue { sample: 0, column: 0 })
        ));
        assert!(m.push(SampleId::from_content(b"c"), &[1.0, 2.0]).is_ok());
    }

    #[test]
    fn ingest_builds_sorted_manifest() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("one.bin"), b"first file").unwrap();
        fs::write(dir.path().join("two.bin"), b"second file").unwrap();
        fs::write(dir.path().join("three.bin"), b"third file").unwrap();
        let labels = dir.path().join("labels.csv");
        fs::write(
            &labels,
            "filename,label\none.bin,A\ntwo.bin,A\nthree.bin,B\n",
        )
        .unwrap();
        let manifest = ingest_directory(dir.path(), &labels, 7).unwrap();
        assert_eq!(manifest.samples.len(), 3);
        assert_eq!(
            manifest.classes,
            BTreeSet::from(["A".to_string(), "B".to_string()])
        );
        for pair in manifest.samples.windows(2) {
            assert!(pair[0].id <= pair[1].id);
        }
        assert_eq!(manifest.seed, 7);
    }

    #[test]
    fn ingest_is_deterministic_across_csv_orderings() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("x.bin"), b"xxxx").unwrap();
        fs::write(dir.path().join("y.bin"), b"yyyy").unwrap();
        let l1 = dir.path().join("l1.csv");
        let l2 = dir.path().join("l2.csv");
        fs::write(&l1, "filename,label\nx.bin,A\ny.bin,B\n").unwrap();
        fs::write(&l2, "filename,label\ny.bin,B\nx.bin,A\n").unwrap();
        let m1 = ingest_directory(dir.path(), &l1, 1).unwrap();
        let m2 = ingest_directory(dir.path(), &l2, 1).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn identical_content_shares_one_id() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("a.bin"), b"same bytes").unwrap();
        fs::write(dir.path().join("b.bin"), b"same bytes").unwrap();
        let labels = dir.path().join("labels.csv");
        fs::write(&labels, "filename,label\na.bin,A\nb.bin,A\n").unwrap();
        let manifest = ingest_directory(dir.path(), &labels, 0).unwrap();
        assert_eq!(manifest.samples.len(), 2);
        assert_eq!(manifest.samples[0].id, manifest.samples[1].id);
    }

    #[test]
    fn ingest_errors_name_the_problem() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("here.bin"), b"x").unwrap();
        let labels = dir.path().join("labels.csv");

        fs::write(&labels, "filename,label\nmissing.bin,A\n").unwrap();
        match ingest_directory(dir.path(), &labels, 0) {
            Err(CorpusError::MissingFile(p)) => {
                assert!(p.to_string_lossy().contains("missing.bin"))
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }

        fs::write(&labels, "filename,label\nhere.bin,\n").unwrap();
        assert!(matches!(
            ingest_directory(dir.path(), &labels, 0),
            Err(CorpusError::EmptyLabel { line: 2, .. })
        ));

        fs::write(&labels, "filename,label\nhere.bin\n").unwrap();
        assert!(matches!(
            ingest_directory(dir.path(), &labels, 0),
            Err(CorpusError::MalformedRow { line: 2 })
        ));
    }

    #[test]
    fn ingest_accepts_crlf_line_endings() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("w.bin"), b"windows file").unwrap();
        let labels = dir.path().join("labels.csv");
        fs::write(&labels, "filename,label\r\nw.bin,W\r\n").unwrap();
        let manifest = ingest_directory(dir.path(), &labels, 0).unwrap();
        assert_eq!(manifest.samples[0].label, "W");
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("f.bin"), b"payload").unwrap();
        let labels = dir.path().join("labels.csv");
        fs::write(&labels, "filename,label\nf.bin,Z\n").unwrap();
        let manifest = ingest_directory(dir.path(), &labels, 42).unwrap();
        let out = dir.path().join("manifest.json");
        manifest.save(&out).unwrap();
        let back = Manifest::load(&out).unwrap();
        assert_eq!(manifest, back);
        let text = fs::read_to_string(&out).unwrap();
        for key in ["\"samples\"", "\"classes\"", "\"seed\"", "\"id\"", "\"path\"", "\"label\"", "\"size\""] {
            assert!(text.contains(key), "missing key {key}");
        }
    }
}
