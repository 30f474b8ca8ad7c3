use rand::Rng;

use super::DifferentiableTask;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::normal_vec;
use crate::Scalar;

/// Per-sample loss ½(w−x)ᵀA(w−x) with x ~ N(x_mean, S).
///
/// Population gradient `G = A(w − x_mean)`, Hessian `H = A`, and per-sample
/// gradient covariance `Σ = A·S·Aᵀ` are all known exactly.
#[derive(Debug, Clone)]
pub struct QuadraticTask<T> {
    a: Matrix<T>,
    x_mean: Vec<T>,
    s: Matrix<T>,
    s_factor: Matrix<T>,
}

/// Exact population quantities of a [`QuadraticTask`] at one point.
#[derive(Debug, Clone)]
pub struct PopulationStats<T> {
    pub g: Vec<T>,
    pub hessian: Matrix<T>,
    pub sigma: Matrix<T>,
    pub g_norm_sq: T,
    pub g_h_g: T,
    pub tr_h: T,
    pub tr_h_sigma: T,
}

impl<T: Scalar> QuadraticTask<T> {
    pub fn new(a: Matrix<T>, x_mean: Vec<T>, s: Matrix<T>) -> Result<Self> {
        let d = x_mean.len();
        check_dim(d, a.rows())?;
        check_dim(d, a.cols())?;
        check_dim(d, s.rows())?;
        check_dim(d, s.cols())?;
        let sym_tol = T::lit(1e-10);
        if !a.is_symmetric(sym_tol) {
            return Err(Error::invalid("A", "not symmetric"));
        }
        if !s.is_symmetric(sym_tol) {
            return Err(Error::invalid("S", "not symmetric"));
        }
        a.psd_factor()
            .map_err(|_| Error::invalid("A", "not positive semi-definite"))?;
        let s_factor = s
            .psd_factor()
            .map_err(|_| Error::invalid("S", "not positive semi-definite"))?;
        Ok(Self {
            a,
            x_mean,
            s,
            s_factor,
        })
    }

    /// `A = a·I`, `S = s·I`, zero data mean.
    pub fn isotropic(d: usize, a: T, s: T) -> Result<Self> {
        Self::new(
            Matrix::identity(d).scaled(a),
            vec![T::zero(); d],
            Matrix::identity(d).scaled(s),
        )
    }

    pub fn hessian(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn data_mean(&self) -> &[T] {
        &self.x_mean
    }

    pub fn data_covariance(&self) -> &Matrix<T> {
        &self.s
    }

    pub fn population_gradient(&self, w: &[T]) -> Vec<T> {
        self.a.matvec(&linalg::sub(w, &self.x_mean))
    }

    /// Σ = A·S·Aᵀ.
    pub fn gradient_covariance(&self) -> Matrix<T> {
        self.a.matmul(&self.s).matmul(&self.a.transpose())
    }

    /// E_x L(w, x) = ½(w−μ)ᵀA(w−μ) + ½tr(AS).
    pub fn population_loss(&self, w: &[T]) -> T {
        let r = linalg::sub(w, &self.x_mean);
        let half = T::lit(0.5);
        half * linalg::dot(&r, &self.a.matvec(&r)) + half * self.a.matmul(&self.s).trace()
    }

    /// Optimal population loss ½tr(AS), attained at w = x_mean.
    pub fn irreducible_loss(&self) -> T {
        T::lit(0.5) * self.a.matmul(&self.s).trace()
    }

    pub fn population_stats(&self, w: &[T]) -> Result<PopulationStats<T>> {
        check_dim(self.dim(), w.len())?;
        let g = self.population_gradient(w);
        let hg = self.a.matvec(&g);
        let sigma = self.gradient_covariance();
        let tr_h_sigma = self.a.matmul(&sigma).trace();
        Ok(PopulationStats {
            g_norm_sq: linalg::norm_sq(&g),
            g_h_g: linalg::dot(&g, &hg),
            tr_h: self.a.trace(),
            tr_h_sigma,
            hessian: self.a.clone(),
            sigma,
            g,
        })
    }
}

/// Exact `{G, H, Σ, |G|², GᵀHG, tr(H), tr(HΣ)}` of a quadratic task at `w`.
pub fn population_stats<T: Scalar>(task: &QuadraticTask<T>, w: &[T]) -> Result<PopulationStats<T>> {
    task.population_stats(w)
}

impl<T: Scalar> DifferentiableTask for QuadraticTask<T> {
    type Scalar = T;
    type Sample = Vec<T>;

    fn dim(&self) -> usize {
        self.x_mean.len()
    }

    fn loss(&self, w: &[T], x: &Vec<T>) -> T {
        let r = linalg::sub(w, x);
        T::lit(0.5) * linalg::dot(&r, &self.a.matvec(&r))
    }

    fn per_sample_gradient(&self, w: &[T], x: &Vec<T>) -> Vec<T> {
        self.a.matvec(&linalg::sub(w, x))
    }

    fn hvp(&self, _w: &[T], _batch: &[Vec<T>], v: &[T]) -> Vec<T> {
        self.a.matvec(v)
    }

    fn sample_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let z: Vec<T> = normal_vec(rng, self.dim());
        linalg::add(&self.x_mean, &self.s_factor.matvec(&z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::checks;
    use crate::model::empirical_moments;
    use crate::rng::seeded;

    #[test]
    fn identity_stats() {
        let t = QuadraticTask::<f64>::isotropic(3, 1.0, 1.0).unwrap();
        let p = t.population_stats(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.g_norm_sq, 1.0);
        assert_eq!(p.g_h_g, 1.0);
        assert_eq!(p.tr_h, 3.0);
        assert_eq!(p.tr_h_sigma, 3.0);
    }

    #[test]
    fn zero_covariance_stats() {
        let t = QuadraticTask::new(
            Matrix::diag(&[1.0, 2.0]),
            vec![0.0, 0.0],
            Matrix::zeros(2, 2),
        )
        .unwrap();
        let p = t.population_stats(&[1.0, 1.0]).unwrap();
        assert_eq!(p.tr_h_sigma, 0.0);
        assert_eq!(p.sigma, Matrix::zeros(2, 2));
    }

    #[test]
    fn diag_123_trace_h_sigma_is_36() {
        let a = Matrix::<f64>::diag(&[1.0, 2.0, 3.0]);
        let t = QuadraticTask::new(a.clone(), vec![0.0; 3], Matrix::identity(3)).unwrap();
        // independent dense route: trace(A·A·S·Aᵀ)
        let oracle = a.matmul(&a).matmul(&Matrix::identity(3)).matmul(&a.transpose()).trace();
        assert_eq!(oracle, 36.0);
        let p = t.population_stats(&[0.3, -0.2, 0.9]).unwrap();
        assert!((p.tr_h_sigma - oracle).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let t = QuadraticTask::<f64>::isotropic(3, 1.0, 1.0).unwrap();
        assert!(matches!(
            t.population_stats(&[0.0; 4]),
            Err(Error::DimensionMismatch { expected: 3, found: 4 })
        ));
    }

    #[test]
    fn non_psd_hessian_rejected() {
        let r = QuadraticTask::new(Matrix::diag(&[1.0, -1.0]), vec![0.0; 2], Matrix::identity(2));
        assert!(r.is_err());
    }

    #[test]
    fn zero_covariance_gives_zero_sample_covariance() {
        let t = QuadraticTask::new(
            Matrix::diag(&[1.0, 2.0, 0.5]),
            vec![0.1, 0.2, 0.3],
            Matrix::zeros(3, 3),
        )
        .unwrap();
        let m = empirical_moments(&t, &[1.0, -1.0, 0.0], 17, &mut seeded(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.covariance[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn empirical_mean_converges_at_1e5() {
        let t = correlated_task();
        let w = vec![1.0, -0.5, 0.25, 2.0];
        let exact = t.population_gradient(&w);
        let m = empirical_moments(&t, &w, 100_000, &mut seeded(11)).unwrap();
        let err = checks::vec_rel_err(&m.mean, &exact);
        assert!(err <= 0.05, "relative error {err}");
    }

    #[test]
    fn empirical_covariance_within_three_standard_errors() {
        let t = correlated_task();
        let w = vec![0.5, 0.5, -0.5, 1.0];
        let m = 20_000;
        let est = empirical_moments(&t, &w, m, &mut seeded(5)).unwrap();
        let sigma = t.gradient_covariance();
        let mf = m as f64;
        for i in 0..4 {
            for j in 0..4 {
                // Var of the sample covariance of a Gaussian pair ≈ (Σii Σjj + Σij²)/m
                let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / mf).sqrt();
                let diff = (est.covariance[(i, j)] - sigma[(i, j)]).abs();
                assert!(diff <= 3.0 * se + 1e-12, "({i},{j}): {diff} > 3·{se}");
            }
        }
    }

    #[test]
    fn gradient_and_hvp_invariants() {
        let t = correlated_task();
        let w = vec![0.2, -1.0, 0.7, 0.1];
        checks::gradient_matches_fd(&t, &w, 1);
        checks::hvp_linear_and_symmetric(&t, &w, 1e-8, 2);
    }

    pub(crate) fn correlated_task() -> QuadraticTask<f64> {
        let a = Matrix::from_rows(&[
            vec![2.0, 0.3, 0.0, 0.1],
            vec![0.3, 1.0, 0.2, 0.0],
            vec![0.0, 0.2, 0.5, 0.0],
            vec![0.1, 0.0, 0.0, 1.5],
        ])
        .unwrap();
        let s = Matrix::from_rows(&[
            vec![1.0, 0.4, 0.0, 0.0],
            vec![0.4, 0.8, 0.0, 0.1],
            vec![0.0, 0.0, 0.3, 0.0],
            vec![0.0, 0.1, 0.0, 0.6],
        ])
        .unwrap();
        QuadraticTask::new(a, vec![0.5, 0.0, -0.5, 1.0], s).unwrap()
    }
}
