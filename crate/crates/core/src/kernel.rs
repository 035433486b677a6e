//! NNGP and NTK kernels for deep ReLU fully connected networks.
//!
//! The NNGP recursion starts from the linear kernel
//! `K0(x,x') = sigma_b^2 + sigma_w^2 (x.x')/d` and applies the ReLU arc-cosine
//! map once per hidden layer. The NTK accumulates the derivative map along
//! the same recursion.

use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Symmetric covariance over an ordered point list (training points first,
/// then test points), with the generating hyperparameters as provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub depth: usize,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Sub-block (rows x cols) by index ranges.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
        self.entries
            .view((rows.start, cols.start), (rows.len(), cols.len()))
            .into_owned()
    }

    /// Content hash of (points, depth, sigma_w, sigma_b) used as cache key.
    pub fn cache_key(points: &DMatrix<f64>, depth: usize, sigma_w: f64, sigma_b: f64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        feed(&(points.nrows() as u64).to_le_bytes());
        feed(&(points.ncols() as u64).to_le_bytes());
        for i in 0..points.nrows() {
            for j in 0..points.ncols() {
                feed(&points[(i, j)].to_le_bytes());
            }
        }
        feed(&(depth as u64).to_le_bytes());
        feed(&sigma_w.to_le_bytes());
        feed(&sigma_b.to_le_bytes());
        h
    }

    /// Flat binary cache layout: size header then row-major entries.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n();
        let mut out = Vec::with_capacity(16 + 8 * n * n + 24);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&self.sigma_w.to_le_bytes());
        out.extend_from_slice(&self.sigma_b.to_le_bytes());
        out.extend_from_slice(&(self.depth as u64).to_le_bytes());
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&self.entries[(i, j)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::Other("truncated kernel cache entry".into()));
        }
        let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let sigma_w = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let sigma_b = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let depth = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        if bytes.len() != 32 + 8 * n * n {
            return Err(Error::Other("kernel cache entry size mismatch".into()));
        }
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let o = 32 + 8 * (i * n + j);
                entries[(i, j)] = f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
            }
        }
        Ok(KernelMatrix {
            entries,
            sigma_w,
            sigma_b,
            depth,
        })
    }

    pub fn cache_path(dir: &Path, kind: &str, key: u64) -> PathBuf {
        dir.join(format!("{kind}-{key:016x}.kern"))
    }
}

/// The ReLU arc-cosine map: given same-point variances and the cross value,
/// returns E[relu(u) relu(u')] for (u,u') centred Gaussian with that
/// covariance.
fn arccos_map(kxx: f64, kyy: f64, kxy: f64) -> f64 {
    let denom = (kxx * kyy).sqrt();
    let c = (kxy / denom).clamp(-1.0, 1.0);
    let theta = c.acos();
    denom / (2.0 * std::f64::consts::PI) * (theta.sin() + (std::f64::consts::PI - theta) * c)
}

/// Derivative arc-cosine map: E[relu'(u) relu'(u')], a pure function of the
/// correlation angle.
fn arccos_dot_map(kxx: f64, kyy: f64, kxy: f64) -> f64 {
    let denom = (kxx * kyy).sqrt();
    let c = (kxy / denom).clamp(-1.0, 1.0);
    let theta = c.acos();
    (std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI)
}

fn base_kernel(points: &DMatrix<f64>, sigma_w: f64, sigma_b: f64) -> Result<DMatrix<f64>> {
    if points.nrows() == 0 || points.ncols() == 0 {
        return Err(Error::DimensionMismatch("empty point set".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input".into()));
    }
    let d = points.ncols() as f64;
    let sw2 = sigma_w * sigma_w;
    let sb2 = sigma_b * sigma_b;
    let mut k = points * points.transpose();
    k.scale_mut(sw2 / d);
    k.add_scalar_mut(sb2);
    // Exact symmetry regardless of summation order.
    for i in 0..k.nrows() {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    for i in 0..k.nrows() {
        if k[(i, i)] <= 0.0 {
            return Err(Error::ZeroNormRow { row: i });
        }
    }
    Ok(k)
}

fn layer_step(k: &DMatrix<f64>, sigma_w: f64, sigma_b: f64) -> DMatrix<f64> {
    let n = k.nrows();
    let sw2 = sigma_w * sigma_w;
    let sb2 = sigma_b * sigma_b;
    let mut next = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = sb2 + sw2 * arccos_map(k[(i, i)], k[(j, j)], k[(i, j)]);
            next[(i, j)] = v;
            next[(j, i)] = v;
        }
    }
    next
}

/// NNGP covariance of a ReLU network with `depth` hidden layers.
pub fn nngp_relu_kernel(
    points: &DMatrix<f64>,
    depth: usize,
    sigma_w: f64,
    sigma_b: f64,
) -> Result<KernelMatrix> {
    assert!(depth >= 1, "depth counts hidden layers and must be >= 1");
    let mut k = base_kernel(points, sigma_w, sigma_b)?;
    for _ in 0..depth {
        k = layer_step(&k, sigma_w, sigma_b);
    }
    Ok(KernelMatrix {
        entries: k,
        sigma_w,
        sigma_b,
        depth,
    })
}

/// NTK of the same architecture: `Theta^l = K^l + Theta^{l-1} sigma_w^2
/// Fdot(K^{l-1})`, returned at `l = depth`.
pub fn ntk_relu_kernel(
    points: &DMatrix<f64>,
    depth: usize,
    sigma_w: f64,
    sigma_b: f64,
) -> Result<KernelMatrix> {
    assert!(depth >= 1, "depth counts hidden layers and must be >= 1");
    let sw2 = sigma_w * sigma_w;
    let mut k = base_kernel(points, sigma_w, sigma_b)?;
    let mut theta = k.clone();
    for _ in 0..depth {
        let n = k.nrows();
        let mut next_theta = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let fdot = arccos_dot_map(k[(i, i)], k[(j, j)], k[(i, j)]);
                let v = theta[(i, j)] * sw2 * fdot;
                next_theta[(i, j)] = v;
                next_theta[(j, i)] = v;
            }
        }
        k = layer_step(&k, sigma_w, sigma_b);
        theta = &k + next_theta;
    }
    Ok(KernelMatrix {
        entries: theta,
        sigma_w,
        sigma_b,
        depth,
    })
}

/// Cholesky with escalating diagonal jitter: start at `1e-10 x mean diag`,
/// escalate tenfold up to `1e-4 x mean diag` before failing.
pub fn jittered_cholesky(matrix: &DMatrix<f64>) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let n = matrix.nrows();
    let mean_diag = (0..n).map(|i| matrix[(i, i)]).sum::<f64>() / n as f64;
    if let Some(ch) = Cholesky::new(matrix.clone()) {
        return Ok((ch, 0.0));
    }
    let mut rel = 1e-10;
    while rel <= 1e-4 {
        let jitter = rel * mean_diag;
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::FactorisationFailed {
        max_jitter: 1e-4 * mean_diag,
    })
}
