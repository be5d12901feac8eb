use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::TunerError;

const SQRT5: f64 = 2.236_067_977_499_79;
/// Added to the kernel diagonal, in standardized units.
pub const GP_JITTER: f64 = 1e-10;

/// Bounds on the log kernel hyperparameters.
const LN_VARIANCE: (f64, f64) = (-3.0, 3.0);
const LN_SCALE: (f64, f64) = (-4.6, 2.3);
const LN_NOISE: (f64, f64) = (-13.8, 0.0);

/// Matérn 5/2 with per-coordinate length scales.
pub fn matern52(x1: &[f64], x2: &[f64], scales: &[f64], variance: f64) -> f64 {
    let r2: f64 = x1
        .iter()
        .zip(x2)
        .zip(scales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    matern52_r(r2.sqrt(), variance)
}

pub fn matern52_r(r: f64, variance: f64) -> f64 {
    variance * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
}

/// Kernel hyperparameters. Length scales are per search dimension and are
/// shared by all coordinates of a categorical's one-hot block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub variance: f64,
    pub length_scales: Vec<f64>,
    pub noise: f64,
}

impl GpHyper {
    fn to_log(&self) -> Vec<f64> {
        let mut t = vec![self.variance.ln()];
        t.extend(self.length_scales.iter().map(|l| l.ln()));
        t.push(self.noise.ln());
        t
    }

    fn from_log(t: &[f64]) -> Self {
        Self {
            variance: t[0].exp(),
            length_scales: t[1..t.len() - 1].iter().map(|x| x.exp()).collect(),
            noise: t[t.len() - 1].exp(),
        }
    }
}

fn clamp_log(t: &mut [f64]) {
    let n = t.len();
    t[0] = t[0].clamp(LN_VARIANCE.0, LN_VARIANCE.1);
    for x in &mut t[1..n - 1] {
        *x = x.clamp(LN_SCALE.0, LN_SCALE.1);
    }
    t[n - 1] = t[n - 1].clamp(LN_NOISE.0, LN_NOISE.1);
}

/// A fitted GP over unit-cube inputs, predicting in the original units of
/// the observations.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyper,
    /// Search-dimension index of every input coordinate.
    pub groups: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    coord_scales: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    pub log_marginal_likelihood: f64,
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (mean, std, y.iter().map(|v| (v - mean) / std).collect())
}

fn coord_scales(hyper: &GpHyper, groups: &[usize]) -> Vec<f64> {
    groups.iter().map(|&g| hyper.length_scales[g]).collect()
}

fn signal_matrix(x: &[Vec<f64>], scales: &[f64], variance: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(&x[i], &x[j], scales, variance);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Log marginal likelihood of standardized targets and its gradient with
/// respect to the log hyperparameters.
pub(crate) fn lml_and_grad(
    x: &[Vec<f64>],
    z: &[f64],
    groups: &[usize],
    n_dims: usize,
    theta: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let hyper = GpHyper::from_log(theta);
    let scales = coord_scales(&hyper, groups);
    let n = x.len();
    let ks = signal_matrix(x, &scales, hyper.variance);
    let mut k = ks.clone();
    for i in 0..n {
        k[(i, i)] += hyper.noise + GP_JITTER;
    }
    let chol = Cholesky::new(k)?;
    let y = DVector::from_column_slice(z);
    let alpha = chol.solve(&y);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = ααᵀ − K⁻¹; ∂LML/∂θ = ½ tr(W ∂K/∂θ).
    let kinv = chol.inverse();
    let w = &alpha * alpha.transpose() - kinv;
    let mut grad = vec![0.0; n_dims + 2];
    grad[0] = 0.5 * w.component_mul(&ks).sum();
    grad[n_dims + 1] = 0.5 * hyper.noise * w.diagonal().sum();
    let mut per_group = vec![0.0; n_dims];
    for i in 0..n {
        for j in 0..i {
            let mut r2 = 0.0;
            per_group.iter_mut().for_each(|s| *s = 0.0);
            for (c, &g) in groups.iter().enumerate() {
                let s = ((x[i][c] - x[j][c]) / scales[c]).powi(2);
                per_group[g] += s;
                r2 += s;
            }
            let r = r2.sqrt();
            // ∂k/∂ln ℓ_g = σ²·(5/3)(1 + √5 r)e^{−√5 r}·Σ_{c∈g} s_c
            let common = hyper.variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
            let wij = w[(i, j)];
            for g in 0..n_dims {
                // Off-diagonal entries appear twice in the trace.
                grad[1 + g] += wij * common * per_group[g];
            }
        }
    }
    Some((lml, grad))
}

/// Fits kernel hyperparameters by maximizing the log marginal likelihood
/// with multi-start Adam in log space.
pub fn fit_gp(
    x: &[Vec<f64>],
    y: &[f64],
    groups: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<GpModel, TunerError> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(TunerError::TooFewObservations(x.len().min(y.len())));
    }
    let n_dims = groups.iter().max().map_or(0, |g| g + 1);
    let (_, _, z) = standardize(y);
    let default = GpHyper {
        variance: 1.0,
        length_scales: vec![0.5; n_dims],
        noise: 1e-2,
    };
    let mut starts = vec![default.to_log()];
    for _ in 0..2 {
        let mut t = vec![rng.gen_range(-1.0..1.0)];
        t.extend((0..n_dims).map(|_| rng.gen_range(-2.3..0.7)));
        t.push(rng.gen_range(-9.0..-2.0));
        starts.push(t);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let mut theta = start;
        let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
        let (b1, b2, lr) = (0.9, 0.999, 0.05);
        for it in 1..=120 {
            let Some((lml, g)) = lml_and_grad(x, &z, groups, n_dims, &theta) else {
                break;
            };
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, theta.clone()));
            }
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(it));
                let vh = v[i] / (1.0 - b2.powi(it));
                theta[i] += lr * mh / (vh.sqrt() + 1e-8);
            }
            clamp_log(&mut theta);
        }
        if let Some((lml, _)) = lml_and_grad(x, &z, groups, n_dims, &theta) {
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, theta));
            }
        }
    }
    let (_, theta) = best.ok_or(TunerError::Singular)?;
    GpModel::with_hyper(x, y, groups, GpHyper::from_log(&theta))
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `(x, y)`.
    pub fn with_hyper(x: &[Vec<f64>], y: &[f64], groups: &[usize], hyper: GpHyper) -> Result<Self, TunerError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(TunerError::TooFewObservations(x.len().min(y.len())));
        }
        let (y_mean, y_std, z) = standardize(y);
        let scales = coord_scales(&hyper, groups);
        let n = x.len();
        let mut k = signal_matrix(x, &scales, hyper.variance);
        for i in 0..n {
            k[(i, i)] += hyper.noise + GP_JITTER;
        }
        let chol = Cholesky::new(k).ok_or(TunerError::Singular)?;
        let zv = DVector::from_column_slice(&z);
        let alpha = chol.solve(&zv);
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let lml = -0.5 * zv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(Self {
            hyper,
            groups: groups.to_vec(),
            x: x.to_vec(),
            y: y.to_vec(),
            y_mean,
            y_std,
            coord_scales: scales,
            chol,
            alpha,
            log_marginal_likelihood: lml,
        })
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| matern52(xi, x, &self.coord_scales, self.hyper.variance)),
        );
        let mu = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let var = (self.hyper.variance - v.norm_squared()).max(0.0);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }

    /// Noise variance in the units of the observations.
    pub fn noise_variance(&self) -> f64 {
        (self.hyper.noise + GP_JITTER) * self.y_std * self.y_std
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a minimization problem.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 0.0 {
        return (best - mu).max(0.0);
    }
    let z = (best - mu) / sigma;
    ((best - mu) * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}
