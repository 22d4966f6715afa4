//! Problem files: Matrix Market and CSV matrices, one-column CSV vectors,
//! and the problem directory layout (`phi.mtx`, `s.csv`, `problem.json`).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{LcaError, Result};
use crate::problem::{ConstraintMode, Problem};

pub const PHI_FILE: &str = "phi.mtx";
pub const SIGNAL_FILE: &str = "s.csv";
pub const META_FILE: &str = "problem.json";

/// Contents of `problem.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemMeta {
    pub mode: ConstraintMode,
    pub lambda1: f64,
    #[serde(default)]
    pub lambda2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_scales: Option<Vec<f64>>,
}

/// How to interpret raw matrix/signal files.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadConfig {
    pub mode: ConstraintMode,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Rescale columns to unit norm instead of rejecting them.
    pub normalize: bool,
}

/// A loaded problem plus the column norms applied when normalizing.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: Problem,
    pub column_scales: Option<Vec<f64>>,
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| LcaError::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_f64(tok: &str, ctx: &str) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| LcaError::Format(format!("{ctx}: cannot parse `{tok}` as a number")))
}

fn parse_usize(tok: &str, ctx: &str) -> Result<usize> {
    tok.trim()
        .parse::<usize>()
        .map_err(|_| LcaError::Format(format!("{ctx}: cannot parse `{tok}` as an index")))
}

/// Reads a real Matrix Market file in `array` or `coordinate` format
/// (`general` or `symmetric`).
pub fn read_matrix_market<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| LcaError::Format("empty Matrix Market file".into()))??;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(LcaError::Format(format!(
            "bad Matrix Market banner `{header}`"
        )));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(LcaError::Format(format!("unsupported storage `{other}`"))),
    };
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(LcaError::Format(format!(
            "unsupported field `{}`",
            tokens[3]
        )));
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(LcaError::Format(format!("unsupported symmetry `{other}`"))),
    };

    let mut body = Vec::new();
    for line in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        body.push(trimmed.to_string());
    }
    let mut body = body.into_iter();
    let size_line = body
        .next()
        .ok_or_else(|| LcaError::Format("missing Matrix Market size line".into()))?;
    let size: Vec<&str> = size_line.split_whitespace().collect();
    let rows = parse_usize(size.first().copied().unwrap_or(""), "size line")?;
    let cols = parse_usize(size.get(1).copied().unwrap_or(""), "size line")?;
    let mut m = Array2::<f64>::zeros((rows, cols));

    if coordinate {
        let nnz = parse_usize(size.get(2).copied().unwrap_or(""), "size line")?;
        let mut seen = 0;
        for line in body {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(LcaError::Format(format!("bad coordinate entry `{line}`")));
            }
            let i = parse_usize(parts[0], "row index")?;
            let j = parse_usize(parts[1], "column index")?;
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(LcaError::Format(format!("index ({i}, {j}) out of range")));
            }
            let v = parse_f64(parts[2], "value")?;
            m[[i - 1, j - 1]] = v;
            if symmetric {
                m[[j - 1, i - 1]] = v;
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(LcaError::Format(format!(
                "expected {nnz} entries, found {seen}"
            )));
        }
    } else {
        let values: Vec<f64> = body
            .flat_map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .map(|tok| parse_f64(&tok, "array value"))
            .collect::<Result<_>>()?;
        let expected = if symmetric {
            rows * (rows + 1) / 2
        } else {
            rows * cols
        };
        if values.len() != expected {
            return Err(LcaError::Format(format!(
                "expected {expected} array values, found {}",
                values.len()
            )));
        }
        let mut it = values.into_iter();
        for j in 0..cols {
            let start = if symmetric { j } else { 0 };
            for i in start..rows {
                let v = it.next().expect("length checked above");
                m[[i, j]] = v;
                if symmetric {
                    m[[j, i]] = v;
                }
            }
        }
    }
    Ok(m)
}

/// Writes a dense matrix as `array real general` (column major).
pub fn write_matrix_market<W: Write>(mut out: W, m: &Array2<f64>) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            writeln!(out, "{:e}", m[[i, j]])?;
        }
    }
    Ok(())
}

/// Reads a headerless numeric CSV into a dense matrix. All rows must have
/// the same length.
pub fn read_csv_matrix<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(LcaError::Format(format!(
                "row {} has {} fields, expected {}",
                rows + 1,
                rec.len(),
                cols.unwrap_or(0)
            )));
        }
        for field in rec.iter() {
            data.push(parse_f64(field, "csv value")?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| LcaError::Format("empty CSV matrix".into()))?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| LcaError::Format(e.to_string()))
}

/// Reads a one-column CSV vector (a single row is accepted as well).
pub fn read_csv_vector<R: Read>(reader: R) -> Result<Array1<f64>> {
    let m = read_csv_matrix(reader)?;
    match m.dim() {
        (_, 1) => Ok(m.column(0).to_owned()),
        (1, _) => Ok(m.row(0).to_owned()),
        (r, c) => Err(LcaError::Format(format!(
            "expected a single column, got a {r}x{c} table"
        ))),
    }
}

/// One value per line.
pub fn write_csv_vector<W: Write>(mut out: W, v: &[f64]) -> Result<()> {
    for x in v {
        writeln!(out, "{x:e}")?;
    }
    Ok(())
}

pub fn vector_to_csv_bytes(v: &[f64]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv_vector(&mut buf, v).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a matrix from `.mtx` (Matrix Market) or anything else as CSV.
pub fn read_matrix_file(path: &Path) -> Result<Array2<f64>> {
    let file =
        fs::File::open(path).map_err(|e| LcaError::Format(format!("{}: {e}", path.display())))?;
    if path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("mtx"))
    {
        read_matrix_market(file)
    } else {
        read_csv_matrix(file)
    }
}

pub fn read_vector_file(path: &Path) -> Result<Array1<f64>> {
    let file =
        fs::File::open(path).map_err(|e| LcaError::Format(format!("{}: {e}", path.display())))?;
    read_csv_vector(file)
}

/// Loads a problem from a matrix file and a signal file.
pub fn load_problem(
    matrix_path: &Path,
    signal_path: &Path,
    config: &LoadConfig,
) -> Result<LoadedProblem> {
    let phi = read_matrix_file(matrix_path)?;
    let signal = read_vector_file(signal_path)?;
    build(phi, signal, config)
}

fn build(phi: Array2<f64>, signal: Array1<f64>, config: &LoadConfig) -> Result<LoadedProblem> {
    if config.normalize {
        let (problem, scales) = Problem::with_normalized_columns(
            phi,
            signal,
            config.lambda1,
            config.lambda2,
            config.mode,
        )?;
        Ok(LoadedProblem {
            problem,
            column_scales: Some(scales),
        })
    } else {
        let problem = Problem::new(phi, signal, config.lambda1, config.lambda2, config.mode)?;
        Ok(LoadedProblem {
            problem,
            column_scales: None,
        })
    }
}

/// Loads `phi.mtx`, `s.csv` and `problem.json` from a directory. Stored
/// dictionaries are already normalized, so the column-norm check applies.
pub fn load_problem_dir(dir: &Path) -> Result<(Problem, ProblemMeta)> {
    let meta_text = fs::read_to_string(dir.join(META_FILE))
        .map_err(|e| LcaError::Format(format!("{}: {e}", dir.join(META_FILE).display())))?;
    let meta: ProblemMeta = serde_json::from_str(&meta_text)?;
    let config = LoadConfig {
        mode: meta.mode,
        lambda1: meta.lambda1,
        lambda2: meta.lambda2,
        normalize: false,
    };
    let loaded = load_problem(&dir.join(PHI_FILE), &dir.join(SIGNAL_FILE), &config)?;
    Ok((loaded.problem, meta))
}

/// Writes the problem directory. Mode and weights in `meta` are replaced by
/// the problem's own.
pub fn save_problem(problem: &Problem, dir: &Path, meta: &ProblemMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut phi = Vec::new();
    write_matrix_market(&mut phi, problem.phi())?;
    write_atomic(&dir.join(PHI_FILE), &phi)?;
    write_atomic(
        &dir.join(SIGNAL_FILE),
        &vector_to_csv_bytes(problem.signal().as_slice().expect("contiguous")),
    )?;
    let meta = ProblemMeta {
        mode: problem.mode(),
        lambda1: problem.lambda1(),
        lambda2: problem.lambda2(),
        ..meta.clone()
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write_atomic(&dir.join(META_FILE), &json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_problem, GenerateSpec};
    use ndarray::{arr1, arr2};

    #[test]
    fn identity_csv_matches_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("phi.csv"), "1,0\n0,1\n").unwrap();
        fs::write(dir.path().join("s.csv"), "2\n0.5\n").unwrap();
        let cfg = LoadConfig {
            mode: ConstraintMode::Lasso,
            lambda1: 1.0,
            lambda2: 0.0,
            normalize: false,
        };
        let loaded =
            load_problem(&dir.path().join("phi.csv"), &dir.path().join("s.csv"), &cfg).unwrap();
        let fixture = Problem::new(
            Array2::eye(2),
            arr1(&[2.0, 0.5]),
            1.0,
            0.0,
            ConstraintMode::Lasso,
        )
        .unwrap();
        assert_eq!(loaded.problem, fixture);
        assert!(loaded.column_scales.is_none());
    }

    #[test]
    fn zero_column_with_normalize_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("phi.csv"), "1,0\n0,0\n").unwrap();
        fs::write(dir.path().join("s.csv"), "1\n1\n").unwrap();
        let cfg = LoadConfig {
            mode: ConstraintMode::Lasso,
            lambda1: 1.0,
            lambda2: 0.0,
            normalize: true,
        };
        assert!(matches!(
            load_problem(&dir.path().join("phi.csv"), &dir.path().join("s.csv"), &cfg),
            Err(LcaError::Validation(_))
        ));
    }

    #[test]
    fn unnormalized_without_flag_is_rejected_and_with_flag_reports_scales() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("phi.csv"), "3,0\n4,2\n").unwrap();
        fs::write(dir.path().join("s.csv"), "1\n1\n").unwrap();
        let mut cfg = LoadConfig {
            mode: ConstraintMode::Lasso,
            lambda1: 1.0,
            lambda2: 0.0,
            normalize: false,
        };
        let (phi, s) = (dir.path().join("phi.csv"), dir.path().join("s.csv"));
        assert!(matches!(
            load_problem(&phi, &s, &cfg),
            Err(LcaError::Validation(_))
        ));
        cfg.normalize = true;
        let loaded = load_problem(&phi, &s, &cfg).unwrap();
        assert_eq!(loaded.column_scales, Some(vec![5.0, 2.0]));
    }

    #[test]
    fn matrix_market_variants() {
        let coord =
            "%%MatrixMarket matrix coordinate real general\n% comment\n2 3 2\n1 1 1.5\n2 3 -2\n";
        assert_eq!(
            read_matrix_market(coord.as_bytes()).unwrap(),
            arr2(&[[1.5, 0.0, 0.0], [0.0, 0.0, -2.0]])
        );
        let sym = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n2 1 0.5\n";
        assert_eq!(
            read_matrix_market(sym.as_bytes()).unwrap(),
            arr2(&[[1.0, 0.5], [0.5, 0.0]])
        );
        let array = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n";
        assert_eq!(
            read_matrix_market(array.as_bytes()).unwrap(),
            arr2(&[[1.0, 3.0], [2.0, 4.0]])
        );
    }

    #[test]
    fn malformed_inputs_are_format_errors() {
        for bad in [
            "",
            "%%MatrixMarket matrix array complex general\n1 1\n1\n",
            "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 x\n",
        ] {
            assert!(
                matches!(read_matrix_market(bad.as_bytes()), Err(LcaError::Format(_))),
                "{bad:?}"
            );
        }
        assert!(matches!(
            read_csv_matrix("1,2\n3\n".as_bytes()),
            Err(LcaError::Format(_))
        ));
        assert!(matches!(
            read_csv_vector("1,2\n3,4\n".as_bytes()),
            Err(LcaError::Format(_))
        ));
        assert!(matches!(
            read_csv_vector("1\nabc\n".as_bytes()),
            Err(LcaError::Format(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let spec = GenerateSpec {
            seed: 5,
            mode: ConstraintMode::ClassoElasticNet,
            lambda2: 0.3,
            ..GenerateSpec::default()
        };
        let (p, _) = generate_problem(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = ProblemMeta {
            mode: p.mode(),
            lambda1: p.lambda1(),
            lambda2: p.lambda2(),
            seed: Some(5),
            provenance: "test".into(),
            column_scales: None,
        };
        save_problem(&p, dir.path(), &meta).unwrap();
        let (q, meta2) = load_problem_dir(dir.path()).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(q.mode(), p.mode());
        assert_eq!(q.lambda2(), p.lambda2());
        for (x, y) in p.phi().iter().zip(q.phi().iter()) {
            assert!((x - y).abs() <= 1e-15);
        }
        for (x, y) in p.signal().iter().zip(q.signal().iter()) {
            assert!((x - y).abs() <= 1e-15);
        }
        assert_eq!(p.fingerprint(), q.fingerprint());
    }
}
