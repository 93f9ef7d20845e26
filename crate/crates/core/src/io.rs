//! File formats: triple files, dictionary TSV, the binary model file, fit
//! traces and precision-recall curves.
//!
//! Every writer goes through [`write_atomic`], which writes a temporary file
//! in the destination directory and renames it into place.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{RescalError, Result};
use crate::model::{FactorModel, Hyperparams, Init, Solver};
use crate::tensor::{Dictionary, Triple};
use crate::trace::FitTrace;

pub const MODEL_MAGIC: &[u8; 8] = b"RESCALMF";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Writes `path` through a temporary sibling file and an atomic rename.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RescalError::io(dir, e))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf).map_err(|e| RescalError::io(path, e))?;
        buf.flush().map_err(|e| RescalError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| RescalError::io(path, e.error))?;
    Ok(())
}

/// Parses `subject<TAB>relation<TAB>object` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_triples<R: Read>(reader: R, source: &str) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| RescalError::io(source, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let location = format!("{source}:{}", lineno + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(RescalError::Parse {
                location,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push(Triple::parse(fields[0], fields[1], fields[2], &location)?);
    }
    Ok(out)
}

pub fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    let file = fs::File::open(path).map_err(|e| RescalError::io(path, e))?;
    parse_triples(file, &path.display().to_string())
}

/// Two-column `index<TAB>label` export.
pub fn write_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    write_atomic(path, |w| {
        for (idx, label) in dict.labels().iter().enumerate() {
            writeln!(w, "{idx}\t{label}")?;
        }
        Ok(())
    })
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    let text = fs::read_to_string(path).map_err(|e| RescalError::io(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), lineno + 1);
        let (idx, label) = line.split_once('\t').ok_or_else(|| RescalError::Parse {
            location: location.clone(),
            message: "expected index<TAB>label".into(),
        })?;
        let idx: usize = idx.parse().map_err(|_| RescalError::Parse {
            location: location.clone(),
            message: format!("bad index {idx:?}"),
        })?;
        if idx != labels.len() {
            return Err(RescalError::Parse {
                location,
                message: format!("index {idx} out of sequence (expected {})", labels.len()),
            });
        }
        labels.push(label.to_string());
    }
    Dictionary::from_labels(labels)
}

/// Metadata block at the start of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub n_entities: usize,
    pub n_relations: usize,
    pub rank: usize,
    pub solver: Solver,
    pub hyperparams: Hyperparams,
    pub dataset_checksum: String,
}

fn solver_code(s: Solver) -> u8 {
    match s {
        Solver::Als => 0,
        Solver::Logit => 1,
    }
}

fn init_code(i: Init) -> u8 {
    match i {
        Init::Random => 0,
        Init::Nvecs => 1,
    }
}

/// Serializes the model file: header, `A` row-major, the slice count, then
/// each `R_k` row-major. All numbers are little-endian.
pub fn encode_model(model: &FactorModel, hp: &Hyperparams, checksum: &[u8; 32]) -> Vec<u8> {
    let (n, rank) = model.a().shape();
    let k = model.n_relations();
    let mut out = Vec::with_capacity(128 + 8 * (n * rank + k * rank * rank));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    for v in [n, k, rank] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(solver_code(hp.solver));
    out.push(init_code(hp.init));
    for v in [hp.lambda_a, hp.lambda_r, hp.tol] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [hp.max_iter as u64, hp.seed, hp.dense_cap as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(checksum);
    push_matrix(&mut out, model.a());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    for r in model.r() {
        push_matrix(&mut out, r);
    }
    out
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            RescalError::CorruptFile(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| RescalError::CorruptFile(format!("{what} does not fit in usize")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| RescalError::CorruptFile(format!("{what} dimensions overflow")))?;
        let raw = self.take(len, what)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

fn decode_header(r: &mut ByteReader<'_>) -> Result<ModelHeader> {
    if r.take(8, "magic")? != MODEL_MAGIC {
        return Err(RescalError::CorruptFile("not a model file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(RescalError::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let n = r.usize("N")?;
    let k = r.usize("K")?;
    let rank = r.usize("rank")?;
    let solver = match r.u8("solver")? {
        0 => Solver::Als,
        1 => Solver::Logit,
        other => return Err(RescalError::CorruptFile(format!("unknown solver code {other}"))),
    };
    let init = match r.u8("init")? {
        0 => Init::Random,
        1 => Init::Nvecs,
        other => return Err(RescalError::CorruptFile(format!("unknown init code {other}"))),
    };
    let lambda_a = r.f64("lambda_a")?;
    let lambda_r = r.f64("lambda_r")?;
    let tol = r.f64("tol")?;
    let max_iter = r.usize("max_iter")?;
    let seed = r.u64("seed")?;
    let dense_cap = r.usize("dense_cap")?;
    let checksum = hex::encode(r.take(32, "dataset checksum")?);
    Ok(ModelHeader {
        format_version: version,
        n_entities: n,
        n_relations: k,
        rank,
        solver,
        hyperparams: Hyperparams {
            rank,
            lambda_a,
            lambda_r,
            solver,
            max_iter,
            tol,
            seed,
            init,
            dense_cap,
        },
        dataset_checksum: checksum,
    })
}

/// Parses only the header block.
pub fn decode_model_header(bytes: &[u8]) -> Result<ModelHeader> {
    decode_header(&mut ByteReader { bytes, pos: 0 })
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelHeader, FactorModel)> {
    let mut r = ByteReader { bytes, pos: 0 };
    let header = decode_header(&mut r)?;
    let (n, k, rank) = (header.n_entities, header.n_relations, header.rank);
    if rank == 0 {
        return Err(RescalError::CorruptFile("rank 0 in header".into()));
    }
    let a = r.matrix(n, rank, "A")?;
    let stored = r.usize("slice count")?;
    if stored != k {
        return Err(RescalError::Dimension(format!(
            "header declares K={k} but the file stores {stored} relation matrices"
        )));
    }
    let mut rs = Vec::with_capacity(k);
    for idx in 0..k {
        rs.push(r.matrix(rank, rank, &format!("R_{idx}"))?);
    }
    if r.pos != bytes.len() {
        return Err(RescalError::CorruptFile(format!(
            "{} trailing bytes after the last relation matrix",
            bytes.len() - r.pos
        )));
    }
    let model = FactorModel::new(a, rs).map_err(|e| RescalError::CorruptFile(e.to_string()))?;
    Ok((header, model))
}

pub fn save_model(path: &Path, model: &FactorModel, hp: &Hyperparams, checksum: &[u8; 32]) -> Result<()> {
    let bytes = encode_model(model, hp, checksum);
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_model(path: &Path) -> Result<(ModelHeader, FactorModel)> {
    let bytes = fs::read(path).map_err(|e| RescalError::io(path, e))?;
    decode_model(&bytes)
}

/// `iter,objective,seconds`; row 0 is the starting point when known.
pub fn write_trace_csv(path: &Path, trace: &FitTrace) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "iter,objective,seconds")?;
        if let Some(f0) = trace.initial_objective {
            writeln!(w, "0,{f0:e},0")?;
        }
        for (idx, (f, s)) in trace.objective.iter().zip(&trace.seconds).enumerate() {
            writeln!(w, "{},{f:e},{s}", idx + 1)?;
        }
        Ok(())
    })
}

/// `recall,precision` rows.
pub fn write_curve_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "recall,precision")?;
        for (recall, precision) in curve {
            writeln!(w, "{recall},{precision}")?;
        }
        Ok(())
    })
}
