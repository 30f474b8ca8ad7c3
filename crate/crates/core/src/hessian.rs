//! Stochastic Hessian probes: Hutchinson trace, `GᵀHG`, and `tr(HΣ)`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::model::DifferentiableTask;
use crate::rng::{normal_vec, rademacher_vec};
use crate::Scalar;

pub const DEFAULT_PROBES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    #[default]
    Gaussian,
    Rademacher,
}

/// Mean of a set of per-probe values and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub estimate: T,
    pub standard_error: T,
}

fn mean_and_se<T: Scalar>(values: &[T]) -> Result<Estimate<T>> {
    let k = values.len();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    if !linalg::all_finite(values) {
        return Err(Error::NonFinite("probe value"));
    }
    let kf = T::from_usize_lossy(k);
    let mean = values.iter().copied().sum::<T>() / kf;
    let var = values.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (kf - T::one());
    Ok(Estimate {
        estimate: mean,
        standard_error: (var / kf).sqrt(),
    })
}

/// Hutchinson estimate of `tr(H)` from `k` probes `vᵀHv`.
pub fn hutchinson_trace<T, F, R>(hvp: F, d: usize, k: usize, probes: ProbeKind, rng: &mut R) -> Result<Estimate<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> Vec<T>,
    R: Rng + ?Sized,
{
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    let values: Vec<T> = (0..k)
        .map(|_| {
            let v: Vec<T> = match probes {
                ProbeKind::Gaussian => normal_vec(rng, d),
                ProbeKind::Rademacher => rademacher_vec(rng, d),
            };
            linalg::dot(&v, &hvp(&v))
        })
        .collect();
    mean_and_se(&values)
}

/// `Gᵀ(HG)`.
pub fn quadratic_form<T: Scalar, F: Fn(&[T]) -> Vec<T>>(g: &[T], hvp: F) -> Result<T> {
    let hg = hvp(g);
    check_dim(g.len(), hg.len())?;
    Ok(linalg::dot(g, &hg))
}

/// Centered estimate of `tr(HΣ) = E[(g_i − G)ᵀH(g_i − G)]` with the
/// `m/(m − 1)` correction for using `Ĝ` in place of `G`.
pub fn trace_h_sigma<T, F>(grads: &[Vec<T>], g_hat: &[T], hvp: F) -> Result<Estimate<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> Vec<T>,
{
    let m = grads.len();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let corr = T::from_usize_lossy(m) / T::from_usize_lossy(m - 1);
    let mut values = Vec::with_capacity(m);
    for g in grads {
        check_dim(g_hat.len(), g.len())?;
        let c = linalg::sub(g, g_hat);
        values.push(corr * linalg::dot(&c, &hvp(&c)));
    }
    mean_and_se(&values)
}

/// One row of Hessian statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianStats<T> {
    pub tr_h: T,
    pub tr_h_sigma: T,
    pub g_h_g: T,
    pub g_norm_sq: T,
    pub probe_count: usize,
    pub standard_error_tr_h: T,
}

impl<T: Scalar> HessianStats<T> {
    /// `σ²tr(H)/(Bc²)` evaluated on this snapshot.
    pub fn decelerator(&self, sigma: T, c: T, batch: T) -> T {
        sigma * sigma * self.tr_h / (batch * c * c)
    }
}

/// Estimates every field of [`HessianStats`] at `w` from one batch: `Ĝ` and
/// the `tr(HΣ)` sample from the per-sample gradients, `tr(H)` from `k`
/// Hutchinson probes of the batch Hessian.
pub fn stats_snapshot<K, R>(
    task: &K,
    w: &[K::Scalar],
    batch: &[K::Sample],
    k: usize,
    rng: &mut R,
) -> Result<HessianStats<K::Scalar>>
where
    K: DifferentiableTask,
    R: Rng + ?Sized,
{
    check_dim(task.dim(), w.len())?;
    if batch.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: batch.len(),
        });
    }
    let hvp = |v: &[K::Scalar]| task.hvp(w, batch, v);
    let grads = task.per_sample_gradients(w, batch);
    let g_hat = linalg::mean_vec(&grads)?;
    let tr_h = hutchinson_trace(hvp, task.dim(), k, ProbeKind::Gaussian, rng)?;
    let ths = trace_h_sigma(&grads, &g_hat, hvp)?;
    Ok(HessianStats {
        tr_h: tr_h.estimate,
        tr_h_sigma: ths.estimate,
        g_h_g: quadratic_form(&g_hat, hvp)?,
        g_norm_sq: linalg::norm_sq(&g_hat),
        probe_count: k,
        standard_error_tr_h: tr_h.standard_error,
    })
}

/// Writes `iter,tr_H,tr_H_Sigma,gHg,g_norm_sq,decelerator` rows.
pub fn write_stats_csv<T: Scalar, W: Write>(
    out: W,
    rows: &[(usize, HessianStats<T>)],
    sigma: T,
    c: T,
    batch: T,
) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["iter", "tr_H", "tr_H_Sigma", "gHg", "g_norm_sq", "decelerator"])?;
    for (iter, s) in rows {
        w.write_record([
            iter.to_string(),
            s.tr_h.to_string(),
            s.tr_h_sigma.to_string(),
            s.g_h_g.to_string(),
            s.g_norm_sq.to_string(),
            s.decelerator(sigma, c, batch).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
