//! Feature standardization and PCA.

use std::fs;
use std::path::Path;

use faer::Mat;

use crate::error::{Error, Result};
use crate::model::{decode, encode};
use crate::tensor::{matmul, matmul_nt, Tensor};

fn check_matrix(x: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, d] => Ok((n, d)),
        _ => Err(Error::shape(format!("{what} needs an N×D matrix, got {:?}", x.shape()))),
    }
}

fn column_means(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.row_len());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerParams {
    pub fn fit(x: &Tensor) -> Result<ScalerParams> {
        let (n, d) = check_matrix(x, "scaler")?;
        if n == 0 {
            return Err(Error::input("cannot fit a scaler on zero rows"));
        }
        let mean = column_means(x);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(ScalerParams { mean, std })
    }

    /// `(x − μ)/σ`, with zero-σ columns mapped to 0.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = check_matrix(x, "scaler")?;
        if d != self.mean.len() {
            return Err(Error::shape(format!("scaler fitted on {} features, got {d}", self.mean.len())));
        }
        let mut out = x.clone();
        for i in 0..n {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let values: Vec<f64> = self.mean.iter().chain(&self.std).copied().collect();
        encode(&format!("scaler:{}", self.mean.len()), &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ScalerParams> {
        let (desc, values) = decode(bytes)?;
        let d: usize = desc
            .strip_prefix("scaler:")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptPayload(format!("not a scaler descriptor: {desc:?}")))?;
        if values.len() != 2 * d {
            return Err(Error::CorruptPayload(format!("scaler of {d} features needs {} values", 2 * d)));
        }
        let (mean, std) = values.split_at(d);
        Ok(ScalerParams { mean: mean.to_vec(), std: std.to_vec() })
    }
}

/// Principal directions of the fitted data.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaParams {
    /// D×d, orthonormal columns ordered by decreasing variance.
    pub components: Tensor,
    pub mean: Vec<f64>,
    /// Variance along each component (divide-by-(N−1)).
    pub explained_variance: Vec<f64>,
    /// Sum of per-feature variances (same normalization).
    pub total_variance: f64,
}

impl PcaParams {
    /// Top-`dims` principal directions via SVD of the centered data. Each
    /// component's largest-magnitude entry is made positive.
    pub fn fit(x: &Tensor, dims: usize) -> Result<PcaParams> {
        let (n, d) = check_matrix(x, "pca")?;
        if dims == 0 || dims > n.min(d) {
            return Err(Error::config(format!("PCA dims {dims} outside 1..={}", n.min(d))));
        }
        let mean = column_means(x);
        let centered = Mat::<f64>::from_fn(n, d, |i, j| x.at(i, j) - mean[j]);
        let denom = (n.max(2) - 1) as f64;
        let total_variance = (0..d)
            .map(|j| (0..n).map(|i| centered[(i, j)] * centered[(i, j)]).sum::<f64>())
            .sum::<f64>()
            / denom;
        // The SVD of the small triangular factor has the same right singular
        // vectors and values as the tall centered matrix.
        let r = centered.qr().thin_R().to_owned();
        let svd = r.svd().map_err(|e| Error::Numeric(format!("PCA SVD did not converge: {e:?}")))?;
        let v = svd.V();
        let s = svd.S();
        let mut components = Tensor::zeros(&[d, dims]);
        let mut explained_variance = Vec::with_capacity(dims);
        for c in 0..dims {
            let col: Vec<f64> = (0..d).map(|j| v[(j, c)]).collect();
            let pivot = col
                .iter()
                .enumerate()
                .fold(0, |best, (j, x)| if x.abs() > col[best].abs() { j } else { best });
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for (j, x) in col.iter().enumerate() {
                components.data_mut()[j * dims + c] = sign * x;
            }
            let sv = if c < s.dim() { s[c] } else { 0.0 };
            explained_variance.push(sv * sv / denom);
        }
        Ok(PcaParams { components, mean, explained_variance, total_variance })
    }

    pub fn input_dims(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dims(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    fn centered(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = check_matrix(x, "pca")?;
        if d != self.input_dims() {
            return Err(Error::shape(format!("PCA fitted on {} features, got {d}", self.input_dims())));
        }
        let mut out = x.clone();
        for i in 0..n {
            out.row_mut(i).iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
        }
        Ok(out)
    }

    /// `(X − mean)·C`.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        matmul(&self.centered(x)?, &self.components)
    }

    /// `Z·Cᵀ + mean`.
    pub fn reconstruct(&self, z: &Tensor) -> Result<Tensor> {
        let (n, _) = check_matrix(z, "pca")?;
        let mut out = matmul_nt(z, &self.components)?;
        for i in 0..n {
            out.row_mut(i).iter_mut().zip(&self.mean).for_each(|(v, m)| *v += m);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut values = self.mean.clone();
        values.extend_from_slice(self.components.data());
        values.extend_from_slice(&self.explained_variance);
        values.push(self.total_variance);
        encode(&format!("pca:{}:{}", self.input_dims(), self.output_dims()), &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PcaParams> {
        let (desc, values) = decode(bytes)?;
        let bad = || Error::CorruptPayload(format!("not a PCA descriptor: {desc:?}"));
        let (d, k) = desc
            .strip_prefix("pca:")
            .and_then(|s| s.split_once(':'))
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(bad)?;
        if d == 0 || k == 0 || values.len() != d + d * k + k + 1 {
            return Err(Error::CorruptPayload(format!("PCA {d}→{k} payload has {} values", values.len())));
        }
        let (mean, rest) = values.split_at(d);
        let (comp, rest) = rest.split_at(d * k);
        let (ev, total) = rest.split_at(k);
        Ok(PcaParams {
            components: Tensor::new(&[d, k], comp.to_vec())?,
            mean: mean.to_vec(),
            explained_variance: ev.to_vec(),
            total_variance: total[0],
        })
    }
}

/// Optional scaling followed by optional PCA, fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub scaler: Option<ScalerParams>,
    pub pca: Option<PcaParams>,
}

impl Preprocessor {
    pub fn fit(x: &Tensor, scale: bool, pca_dims: Option<usize>) -> Result<Preprocessor> {
        let scaler = scale.then(|| ScalerParams::fit(x)).transpose()?;
        let pca = match pca_dims {
            Some(d) => {
                let scaled = match &scaler {
                    Some(s) => s.transform(x)?,
                    None => x.clone(),
                };
                Some(PcaParams::fit(&scaled, d)?)
            }
            None => None,
        };
        Ok(Preprocessor { scaler, pca })
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = match &self.scaler {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        if let Some(p) = &self.pca {
            out = p.transform(&out)?;
        }
        Ok(out)
    }

    /// Writes `scaler.bin` and/or `pca.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut written = Vec::new();
        if let Some(s) = &self.scaler {
            let p = dir.join("scaler.bin");
            fs::write(&p, s.to_bytes())?;
            written.push(p);
        }
        if let Some(p) = &self.pca {
            let path = dir.join("pca.bin");
            fs::write(&path, p.to_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}
