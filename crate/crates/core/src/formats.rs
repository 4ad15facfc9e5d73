//! On-disk encodings.
//!
//! HRB1 is the binary ensemble layout: the 4 magic bytes `HRB1`, then `n`,
//! `T` and `N` as little-endian `u64`, then `N·T·n` little-endian `f64`
//! residual components ordered `[trajectory][step][component]`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{TrajectoryEnsemble, TrajectorySource};
use crate::error::{Error, Result};
use crate::manifold::PcaDecomposition;

pub const HRB1_MAGIC: &[u8; 4] = b"HRB1";
const HRB1_HEADER: usize = 4 + 3 * 8;

/// Serializes any trajectory source without materializing it twice.
pub fn encode_hrb1<S: TrajectorySource + ?Sized>(source: &S) -> Vec<u8> {
    let (n, steps, count) = (source.dim(), source.steps(), source.trajectories());
    let mut out = Vec::with_capacity(HRB1_HEADER + 8 * n * steps * count);
    out.extend_from_slice(HRB1_MAGIC);
    for v in [n, steps, count] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let mut block = DMatrix::zeros(n, steps);
    for i in 0..count {
        source.write_trajectory(i, &mut block);
        // Column t of `block` is r_t, so column-major order is step-major.
        for v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses an HRB1 buffer. Never panics; every malformation is a
/// [`Error::Format`].
pub fn decode_hrb1(bytes: &[u8]) -> Result<TrajectoryEnsemble> {
    if bytes.len() < HRB1_HEADER {
        return Err(Error::Format(format!(
            "HRB1 header needs {HRB1_HEADER} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != HRB1_MAGIC {
        return Err(Error::Format("missing HRB1 magic bytes".into()));
    }
    let field = |k: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[4 + 8 * k..12 + 8 * k]);
        u64::from_le_bytes(b)
    };
    let (n, steps, count) = (field(0), field(1), field(2));
    if n == 0 || steps == 0 || count == 0 {
        return Err(Error::Format(format!(
            "HRB1 dimensions must be positive, got n={n} T={steps} N={count}"
        )));
    }
    let values = n
        .checked_mul(steps)
        .and_then(|v| v.checked_mul(count))
        .filter(|&v| v <= (usize::MAX / 8) as u64)
        .ok_or_else(|| Error::Format("HRB1 dimensions overflow".into()))?;
    let payload = &bytes[HRB1_HEADER..];
    if payload.len() as u64 != values * 8 {
        return Err(Error::Format(format!(
            "HRB1 payload holds {} bytes, header implies {}",
            payload.len(),
            values * 8
        )));
    }
    let mut data = Vec::with_capacity(values as usize);
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at offset {k}")));
        }
        data.push(v);
    }
    Ok(TrajectoryEnsemble {
        n: n as usize,
        steps: steps as usize,
        trajectories: count as usize,
        data,
        dataset_ref: String::new(),
        config: None,
    })
}

/// Long CSV dump with columns `trajectory,step,r_1..r_n`. Steps count from 0.
pub fn trajectories_to_csv<S: TrajectorySource + ?Sized>(source: &S) -> String {
    let (n, steps) = (source.dim(), source.steps());
    let mut out = String::from("trajectory,step");
    for k in 1..=n {
        let _ = write!(out, ",r_{k}");
    }
    out.push('\n');
    let mut block = DMatrix::zeros(n, steps);
    for i in 0..source.trajectories() {
        source.write_trajectory(i, &mut block);
        for t in 0..steps {
            let _ = write!(out, "{i},{t}");
            for v in block.column(t).iter() {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
    }
    out
}

/// Parses a numeric CSV with one sample per row. A first row that does not
/// parse as numbers is taken as a header. Errors name the 1-based line.
pub fn parse_feature_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Format(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if rows.is_empty() && width.is_none() => {
                // Header row: fixes the width but carries no data.
                width = Some(record.len());
                continue;
            }
            Err(e) => {
                let col = record.iter().position(|f| f.parse::<f64>().is_err()).unwrap_or(0);
                return Err(Error::Format(format!(
                    "line {line}, column {}: {e} ({:?})",
                    col + 1,
                    &record[col]
                )));
            }
        };
        if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("line {line}, column {}: non-finite value", bad + 1)));
        }
        match width {
            Some(w) if w != row.len() => {
                return Err(Error::Format(format!(
                    "line {line}: expected {w} fields, found {}",
                    row.len()
                )))
            }
            _ => width = Some(row.len()),
        }
        rows.push(row);
    }
    let d = width.unwrap_or(0);
    if rows.is_empty() || d == 0 {
        return Err(Error::Format("no numeric rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Writes a matrix as header-less CSV, one row per line.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// One value per line, under a header.
pub fn vector_to_csv(header: &str, v: &DVector<f64>) -> String {
    let mut out = format!("index,{header}\n");
    for (k, x) in v.iter().enumerate() {
        let _ = writeln!(out, "{},{x:e}", k + 1);
    }
    out
}

/// Columns `index,lambda_P,lambda_P1,lambda_sigma_w,lambda_y,explained_variance`;
/// components the decomposition lacks are left empty.
pub fn spectrum_to_csv(pca: &PcaDecomposition) -> String {
    let mut out = String::from("index,lambda_P,lambda_P1,lambda_sigma_w,lambda_y,explained_variance\n");
    let cell = |v: &Option<Vec<f64>>, k: usize| {
        v.as_ref()
            .and_then(|v| v.get(k))
            .map(|x| format!("{x:e}"))
            .unwrap_or_default()
    };
    for k in 0..pca.lambda_p.len() {
        let _ = writeln!(
            out,
            "{},{:e},{},{},{},{:e}",
            k + 1,
            pca.lambda_p[k],
            cell(&pca.lambda_p1, k),
            cell(&pca.lambda_sigma_w, k),
            cell(&pca.lambda_y, k),
            pca.explained_variance.get(k).copied().unwrap_or(f64::NAN)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ensemble() -> TrajectoryEnsemble {
        TrajectoryEnsemble {
            n: 2,
            steps: 3,
            trajectories: 2,
            data: (0..12).map(|k| k as f64 * 0.5 - 1.0).collect(),
            dataset_ref: String::new(),
            config: None,
        }
    }

    #[test]
    fn hrb1_round_trip() {
        let e = ensemble();
        let bytes = encode_hrb1(&e);
        assert_eq!(&bytes[..4], b"HRB1");
        assert_eq!(bytes.len(), 28 + 12 * 8);
        let back = decode_hrb1(&bytes).unwrap();
        assert_eq!(back.data, e.data);
        assert_eq!((back.n, back.steps, back.trajectories), (2, 3, 2));
    }

    #[test]
    fn hrb1_rejects_garbage() {
        let good = encode_hrb1(&ensemble());
        assert!(decode_hrb1(&good[..good.len() - 1]).is_err());
        assert!(decode_hrb1(b"HRB2").is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_hrb1(&bad).is_err());
        let mut huge = good.clone();
        huge[4..12].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_hrb1(&huge).is_err());
        let mut nan = good;
        nan[28..36].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_hrb1(&nan).is_err());
    }

    #[test]
    fn trajectory_csv_layout() {
        let csv = trajectories_to_csv(&ensemble());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "trajectory,step,r_1,r_2");
        assert_eq!(lines.len(), 7);
        assert!(lines[4].starts_with("1,0,"));
    }

    #[test]
    fn feature_csv_header_optional() {
        let a = parse_feature_csv("a,b\n1,2\n3,4\n").unwrap();
        let b = parse_feature_csv("1,2\n3,4\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (2, 2));
    }

    #[test]
    fn feature_csv_errors_name_line() {
        let e = parse_feature_csv("1,2\n3,x\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = parse_feature_csv("1,2\n3\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(parse_feature_csv("").is_err());
        assert!(parse_feature_csv("h1,h2\n").is_err());
    }
}
