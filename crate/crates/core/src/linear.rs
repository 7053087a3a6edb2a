//! Shared matrices and the linear layers built on them.

use crate::error::{Error, Result};
use crate::ring::FixedPointParams;
use crate::sharing::{MatmulJob, Party};

/// Row-major matrix of one party's shares, all at the same scale.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SharedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl SharedMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} matrix with {} elements", data.len())));
        }
        Ok(SharedMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        SharedMatrix { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> SharedMatrix {
        let mut t = SharedMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Columns `start..start + width`.
    pub fn columns(&self, start: usize, width: usize) -> SharedMatrix {
        let mut out = SharedMatrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(parts: &[SharedMatrix]) -> Result<SharedMatrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::Shape("hstack of matrices with different row counts".into()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = SharedMatrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                out.row_mut(i)[off..off + p.cols].copy_from_slice(p.row(i));
                off += p.cols;
            }
        }
        Ok(out)
    }

    /// The first `n` rows.
    pub fn head_rows(&self, n: usize) -> SharedMatrix {
        SharedMatrix { rows: n, cols: self.cols, data: self.data[..n * self.cols].to_vec() }
    }
}

/// `X W`, truncated back to scale `f`. Weights are shared like any input.
pub async fn matmul_shared(p: &mut Party, x: &SharedMatrix, w: &SharedMatrix) -> Result<SharedMatrix> {
    Ok(matmul_many(p, &[(x, w)]).await?.pop().unwrap())
}

/// Independent products `X_i W_i` in a single round.
pub async fn matmul_many(p: &mut Party, pairs: &[(&SharedMatrix, &SharedMatrix)]) -> Result<Vec<SharedMatrix>> {
    for (x, w) in pairs {
        if x.cols != w.rows {
            return Err(Error::Shape(format!("{}x{} times {}x{}", x.rows, x.cols, w.rows, w.cols)));
        }
    }
    let jobs: Vec<MatmulJob> = pairs
        .iter()
        .map(|(x, w)| MatmulJob { x: &x.data, y: &w.data, rows: x.rows, inner: x.cols, cols: w.cols })
        .collect();
    let raw = p.matmul_batch(&jobs).await?;
    let f = p.params().f;
    Ok(pairs
        .iter()
        .zip(raw)
        .map(|((x, w), z)| SharedMatrix { rows: x.rows, cols: w.cols, data: p.trunc(&z, f) })
        .collect())
}

/// Encoding of `1 / sqrt(d)`.
pub fn inv_sqrt_scale(params: &FixedPointParams, d: usize) -> u64 {
    params.encode(1.0 / (d as f64).sqrt()).expect("1/sqrt(d) is representable").0
}

/// `Q K^T` scaled by `1 / sqrt(d)`.
pub async fn attention_scores(p: &mut Party, q: &SharedMatrix, k: &SharedMatrix, d: usize) -> Result<SharedMatrix> {
    Ok(attention_scores_many(p, &[(q, k)], d).await?.pop().unwrap())
}

/// Scores for several heads in one round.
pub async fn attention_scores_many(
    p: &mut Party,
    heads: &[(&SharedMatrix, &SharedMatrix)],
    d: usize,
) -> Result<Vec<SharedMatrix>> {
    for (q, k) in heads {
        if q.cols != d || k.cols != d {
            return Err(Error::Shape(format!("head dim {d} with Q {}x{} and K {}x{}", q.rows, q.cols, k.rows, k.cols)));
        }
    }
    let kt: Vec<SharedMatrix> = heads.iter().map(|(_, k)| k.transpose()).collect();
    let pairs: Vec<(&SharedMatrix, &SharedMatrix)> = heads.iter().zip(&kt).map(|((q, _), kt)| (*q, kt)).collect();
    let raw = matmul_many(p, &pairs).await?;
    let params = p.params();
    let s = inv_sqrt_scale(&params, d);
    Ok(raw
        .into_iter()
        .map(|m| {
            let scaled = p.scale(&m.data, s);
            SharedMatrix { data: p.trunc(&scaled, params.f), ..m }
        })
        .collect())
}

/// Adds a shared bias row to every row. Local.
pub fn add_bias(p: &Party, x: &SharedMatrix, b: &SharedMatrix) -> Result<SharedMatrix> {
    if b.rows != 1 || b.cols != x.cols {
        return Err(Error::Shape(format!("bias {}x{} for {} columns", b.rows, b.cols, x.cols)));
    }
    let mask = p.params().mask();
    let mut out = x.clone();
    for i in 0..x.rows {
        for (v, bj) in out.row_mut(i).iter_mut().zip(&b.data) {
            *v = v.wrapping_add(*bj) & mask;
        }
    }
    Ok(out)
}

/// Elementwise sum of two shared matrices. Local.
pub fn residual_add(p: &Party, x: &SharedMatrix, y: &SharedMatrix) -> Result<SharedMatrix> {
    if x.rows != y.rows || x.cols != y.cols {
        return Err(Error::Shape(format!("{}x{} plus {}x{}", x.rows, x.cols, y.rows, y.cols)));
    }
    Ok(SharedMatrix { rows: x.rows, cols: x.cols, data: p.add(&x.data, &y.data) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::{run_symmetric, SessionConfig};
    use crate::transcript::RevealKind;

    #[test]
    fn identity_times_w() {
        let params = FixedPointParams::default();
        let one = params.one().0;
        let eye: Vec<u64> = (0..16).map(|i| if i % 5 == 0 { one } else { 0 }).collect();
        let w: Vec<u64> = (0..16).map(|i| params.encode(i as f64 * 0.37 - 2.0).unwrap().0).collect();
        let out = run_symmetric(&SessionConfig::new(params, 2), async |p: &mut Party| {
            let x = SharedMatrix::new(4, 4, p.constant(&eye))?;
            let ws = SharedMatrix::new(4, 4, p.constant(&w))?;
            let z = matmul_shared(p, &x, &ws).await?;
            p.open(RevealKind::Plain, &z.data).await
        })
        .unwrap();
        for (a, b) in out.out0.unwrap().iter().zip(&w) {
            assert!((params.to_signed(*a) - params.to_signed(*b)).abs() <= 1);
        }
    }

    #[test]
    fn bias_and_residual_are_local() {
        let params = FixedPointParams::default();
        let out = run_symmetric(&SessionConfig::new(params, 2), async |p: &mut Party| {
            let x = SharedMatrix::new(2, 2, p.constant(&[1, 2, 3, 4]))?;
            let zero = SharedMatrix::zeros(1, 2);
            let same = add_bias(p, &x, &zero)?;
            let neg = SharedMatrix { data: p.neg(&x.data), ..x.clone() };
            let z = residual_add(p, &x, &neg)?;
            Ok::<_, Error>((same == x, z.data))
        })
        .unwrap();
        assert!(out.ledger.phases().is_empty());
        let (same, z) = out.out0.unwrap();
        assert!(same);
        assert_eq!(z, vec![0; 4]);
    }

    #[test]
    fn shape_errors() {
        let params = FixedPointParams::default();
        let out = run_symmetric(&SessionConfig::new(params, 2), async |p: &mut Party| {
            let x = SharedMatrix::zeros(2, 3);
            let w = SharedMatrix::zeros(2, 3);
            matmul_shared(p, &x, &w).await.map(|_| ())
        })
        .unwrap();
        assert!(matches!(out.out0, Err(Error::Shape(_))));
        assert!(SharedMatrix::new(2, 2, vec![0; 3]).is_err());
    }
}
