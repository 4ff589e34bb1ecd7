//! LCS extraction: Gaussian pre-filter, two-component GMM, threshold at the
//! mean of the higher component.
//!
//! The GMM is fitted on min-max normalized samples so the mask does not
//! depend on the scale or offset of the FTLE field.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{MaskField, ScalarField};

#[derive(Debug, Error)]
pub enum LcsError {
    #[error("invalid LCS parameters: {0}")]
    InvalidParams(String),
    #[error("too few samples for a two-component fit: {0} (need at least {MIN_SAMPLES})")]
    TooFewSamples(usize),
    #[error("degenerate samples: {0}")]
    Degenerate(String),
}

pub const MIN_SAMPLES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcsParams {
    /// Pre-filter standard deviation in cells.
    pub gaussian_sigma: f64,
    /// Stop when the per-sample log-likelihood changes by less than this (relative).
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub seed: u64,
    /// Fits use a seeded random subset beyond this many samples.
    pub max_fit_samples: usize,
}

impl Default for LcsParams {
    fn default() -> Self {
        LcsParams { gaussian_sigma: 1.0, em_tol: 1e-6, em_max_iter: 500, seed: 0, max_fit_samples: 1 << 18 }
    }
}

impl LcsParams {
    pub fn validate(&self) -> Result<(), LcsError> {
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma >= 0.0) {
            return Err(LcsError::InvalidParams("gaussian_sigma must be non-negative".into()));
        }
        if !(self.em_tol.is_finite() && self.em_tol > 0.0) {
            return Err(LcsError::InvalidParams("em_tol must be positive".into()));
        }
        if self.em_max_iter == 0 || self.max_fit_samples < MIN_SAMPLES {
            return Err(LcsError::InvalidParams("em_max_iter and max_fit_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Two-component 1D Gaussian mixture, components sorted by mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Mean per-sample log-likelihood at the final parameters.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Mean per-sample log-likelihood before each EM update.
    pub trace: Vec<f64>,
}

impl GmmModel {
    /// Mean of the higher component.
    pub fn threshold(&self) -> f64 {
        self.means[1]
    }

    fn canonicalize(&mut self) {
        if self.means[0] > self.means[1] {
            self.weights.swap(0, 1);
            self.means.swap(0, 1);
            self.variances.swap(0, 1);
        }
    }
}

/// Separable Gaussian blur, radius `ceil(3 sigma)`, clamp-to-edge borders.
pub fn gaussian_filter(field: &ScalarField, sigma: f64) -> ScalarField {
    if sigma <= 0.0 {
        return field.clone();
    }
    let spec = *field.spec();
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let (nx, ny) = (spec.nx as isize, spec.ny as isize);
    let src = field.values();
    let mut tmp = vec![0.0; src.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let ii = (i + t as isize - radius).clamp(0, nx - 1);
                acc += w * src[(j * nx + ii) as usize];
            }
            tmp[(j * nx + i) as usize] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let jj = (j + t as isize - radius).clamp(0, ny - 1);
                acc += w * tmp[(jj * nx + i) as usize];
            }
            out[(j * nx + i) as usize] = acc;
        }
    }
    ScalarField::from_values(spec, out).expect("blur preserves layout")
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - d * d / (2.0 * var)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let f = pos - lo as f64;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

/// EM fit of a two-component mixture.
///
/// Initialization runs 2-means from the 5% and 95% quantiles; EM then
/// iterates until the mean log-likelihood changes by less than `em_tol`
/// relative (or `em_max_iter`). Sample sets larger than `max_fit_samples`
/// are subsampled with a ChaCha8 stream seeded by `seed`.
pub fn fit_gmm2(samples: &[f64], params: &LcsParams) -> Result<GmmModel, LcsError> {
    params.validate()?;
    if samples.len() < MIN_SAMPLES {
        return Err(LcsError::TooFewSamples(samples.len()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(LcsError::Degenerate("non-finite sample".into()));
    }
    let data: Vec<f64> = if samples.len() > params.max_fit_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut idx = sample_indices(&mut rng, samples.len(), params.max_fit_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| samples[k]).collect()
    } else {
        samples.to_vec()
    };
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mut sorted = data.clone();
    sorted.sort_by(f64::total_cmp);
    let span = sorted[sorted.len() - 1] - sorted[0];
    if !(var > 0.0) || span <= 0.0 {
        return Err(LcsError::Degenerate("all samples are equal".into()));
    }
    let var_floor = (1e-6 * span).powi(2);

    // 2-means
    let mut centers = [quantile(&sorted, 0.05), quantile(&sorted, 0.95)];
    if centers[0] == centers[1] {
        centers = [sorted[0], sorted[sorted.len() - 1]];
    }
    let mut split = 0.5 * (centers[0] + centers[1]);
    for _ in 0..100 {
        let (mut s, mut c) = ([0.0; 2], [0usize; 2]);
        for &x in &data {
            let k = usize::from(x >= split);
            s[k] += x;
            c[k] += 1;
        }
        for k in 0..2 {
            if c[k] > 0 {
                centers[k] = s[k] / c[k] as f64;
            }
        }
        let next = 0.5 * (centers[0] + centers[1]);
        if next == split {
            break;
        }
        split = next;
    }
    let mut weights = [0.0; 2];
    let mut vars = [0.0; 2];
    for &x in &data {
        let k = usize::from(x >= split);
        weights[k] += 1.0;
        vars[k] += (x - centers[k]).powi(2);
    }
    for k in 0..2 {
        vars[k] = if weights[k] > 1.0 { (vars[k] / weights[k]).max(var_floor) } else { var.max(var_floor) };
        weights[k] = (weights[k] / n).clamp(1e-6, 1.0 - 1e-6);
    }
    let wsum = weights[0] + weights[1];
    weights = [weights[0] / wsum, weights[1] / wsum];
    let mut means = centers;

    let mean_ll = |w: &[f64; 2], m: &[f64; 2], v: &[f64; 2]| -> f64 {
        data.iter()
            .map(|&x| {
                let a = w[0].ln() + log_normal(x, m[0], v[0]);
                let b = w[1].ln() + log_normal(x, m[1], v[1]);
                let hi = a.max(b);
                hi + ((a - hi).exp() + (b - hi).exp()).ln()
            })
            .sum::<f64>()
            / n
    };

    let mut trace = Vec::new();
    // responsibility of the second component per sample
    let mut resp = vec![0.0; data.len()];
    let mut ll = mean_ll(&weights, &means, &vars);
    let mut iterations = 0;
    for _ in 0..params.em_max_iter {
        trace.push(ll);
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            let a = weights[0].ln() + log_normal(*x, means[0], vars[0]);
            let b = weights[1].ln() + log_normal(*x, means[1], vars[1]);
            let hi = a.max(b);
            let ea = (a - hi).exp();
            let eb = (b - hi).exp();
            *r = eb / (ea + eb);
        }
        let mut r_sum = [0.0; 2];
        let mut rx_sum = [0.0; 2];
        for (x, r1) in data.iter().zip(&resp) {
            let r = [1.0 - r1, *r1];
            for k in 0..2 {
                r_sum[k] += r[k];
                rx_sum[k] += r[k] * x;
            }
        }
        for k in 0..2 {
            if r_sum[k] <= 0.0 {
                return Err(LcsError::Degenerate("a mixture component lost all support".into()));
            }
            means[k] = rx_sum[k] / r_sum[k];
        }
        let mut rxx_sum = [0.0; 2];
        for (x, r1) in data.iter().zip(&resp) {
            let r = [1.0 - r1, *r1];
            for k in 0..2 {
                rxx_sum[k] += r[k] * (x - means[k]).powi(2);
            }
        }
        for k in 0..2 {
            weights[k] = r_sum[k] / n;
            vars[k] = (rxx_sum[k] / r_sum[k]).max(var_floor);
        }
        iterations += 1;
        let next = mean_ll(&weights, &means, &vars);
        let change = (next - ll).abs();
        ll = next;
        if change <= params.em_tol * ll.abs().max(1.0) {
            break;
        }
    }
    let mut model = GmmModel { weights, means, variances: vars, log_likelihood: ll, iterations, trace };
    model.canonicalize();
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct LcsExtraction {
    pub mask: MaskField,
    /// Threshold in FTLE units; `None` when the field was degenerate.
    pub threshold: Option<f64>,
    /// Mixture fitted in normalized `[0, 1]` units.
    pub model: Option<GmmModel>,
    pub warning: Option<String>,
}

/// Blur, fit, threshold. A constant field yields an empty mask and a warning.
pub fn extract_lcs(ftle: &ScalarField, params: &LcsParams) -> Result<LcsExtraction, LcsError> {
    params.validate()?;
    if ftle.values().iter().any(|v| !v.is_finite()) {
        return Err(LcsError::Degenerate("non-finite FTLE sample".into()));
    }
    let spec = *ftle.spec();
    let (lo, hi) = (ftle.min(), ftle.max());
    let empty = |why: String| {
        log::warn!("LCS extraction produced an empty mask: {why}");
        Ok(LcsExtraction { mask: MaskField::empty(spec), threshold: None, model: None, warning: Some(why) })
    };
    if !(hi > lo) {
        return empty("FTLE field is constant".into());
    }
    let span = hi - lo;
    let normalized = ScalarField::from_values(spec, ftle.values().iter().map(|v| (v - lo) / span).collect())
        .expect("normalization preserves layout");
    let filtered = gaussian_filter(&normalized, params.gaussian_sigma);
    let model = match fit_gmm2(filtered.values(), params) {
        Ok(m) => m,
        Err(LcsError::Degenerate(why)) => return empty(why),
        Err(e) => return Err(e),
    };
    let t = model.threshold();
    let cells = filtered.values().iter().map(|v| *v >= t).collect();
    Ok(LcsExtraction {
        mask: MaskField::from_cells(spec, cells).expect("mask layout"),
        threshold: Some(lo + t * span),
        model: Some(model),
        warning: None,
    })
}
