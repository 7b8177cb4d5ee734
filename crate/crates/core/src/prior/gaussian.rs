use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_inputs, JacobianSupport, Linearized, ModelKind, ScoreModel};
use crate::error::{check_len, Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// Gaussian in eigen-coordinates. The noised marginal at step `t` has
/// covariance `abar * Sigma + (1 - abar) I`, which shares Sigma's
/// eigenvectors, so every step reuses one decomposition.
#[derive(Debug, Clone)]
pub(crate) struct Component {
    pub mean: Vec<f64>,
    /// `None` means the identity basis (diagonal covariance).
    basis: Option<DMatrix<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl Component {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Config("Gaussian prior needs a non-empty mean".into()));
        }
        match cov {
            Covariance::Diagonal(var) => {
                check_len("covariance diagonal", d, var.len())?;
                if let Some(i) = var.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::Config(format!("variance[{i}] = {} is not positive", var[i])));
                }
                Ok(Self {
                    mean,
                    basis: None,
                    eigenvalues: var,
                })
            }
            Covariance::Full(m) => {
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::Dimension {
                        context: "covariance matrix",
                        expected: d,
                        actual: m.nrows().max(m.ncols()),
                    });
                }
                let asym = (&m - m.transpose()).abs().max();
                if asym > 1e-10 * m.abs().max().max(1.0) {
                    return Err(Error::Config("covariance is not symmetric".into()));
                }
                if m.clone().cholesky().is_none() {
                    return Err(Error::Config("covariance is not positive definite".into()));
                }
                let eig = SymmetricEigen::new(m);
                Ok(Self {
                    mean,
                    basis: Some(eig.eigenvectors),
                    eigenvalues: eig.eigenvalues.iter().copied().collect(),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn to_eigen(&self, v: &[f64]) -> Vec<f64> {
        match &self.basis {
            None => v.to_vec(),
            Some(u) => (u.transpose() * DVector::from_column_slice(v)).as_slice().to_vec(),
        }
    }

    fn from_eigen(&self, v: Vec<f64>) -> Vec<f64> {
        match &self.basis {
            None => v,
            Some(u) => (u * DVector::from_vec(v)).as_slice().to_vec(),
        }
    }

    fn marginal_eigenvalues(&self, abar: f64) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().map(move |l| abar * l + 1.0 - abar)
    }

    /// `Sigma_t^{-1} v`.
    pub fn precision_apply(&self, abar: f64, v: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self
            .to_eigen(v)
            .into_iter()
            .zip(self.marginal_eigenvalues(abar))
            .map(|(z, l)| z / l)
            .collect();
        self.from_eigen(z)
    }

    /// `x - sqrt(abar) mean`.
    pub fn centred(&self, abar: f64, x: &[f64]) -> Vec<f64> {
        let a = abar.sqrt();
        x.iter().zip(&self.mean).map(|(x, m)| x - a * m).collect()
    }

    /// Log density of the noised marginal at `x`.
    pub fn log_density(&self, abar: f64, x: &[f64]) -> (f64, Vec<f64>) {
        let c = self.centred(abar, x);
        let p = self.precision_apply(abar, &c);
        let quad: f64 = c.iter().zip(&p).map(|(a, b)| a * b).sum();
        let logdet: f64 = self.marginal_eigenvalues(abar).map(f64::ln).sum();
        let d = self.dim() as f64;
        let lp = -0.5 * (quad + logdet + d * (2.0 * std::f64::consts::PI).ln());
        (lp, p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|l| l.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        self.from_eigen(z)
            .into_iter()
            .zip(&self.mean)
            .map(|(z, m)| z + m)
            .collect()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        match &self.basis {
            None => lam,
            Some(u) => {
                debug_assert_eq!(u.nrows(), d);
                u * lam * u.transpose()
            }
        }
    }
}

/// Analytic Gaussian prior `x0 ~ N(mean, Sigma)` with a closed-form score
/// `-Sigma_t^{-1} (x_t - sqrt(abar) mean)`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub(crate) component: Component,
    schedule: NoiseSchedule,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, cov: Covariance, schedule: NoiseSchedule) -> Result<Self> {
        Ok(Self {
            component: Component::new(mean, cov)?,
            schedule,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.component.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.component.covariance()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.component.sample(rng)
    }
}

struct GaussianAt<'a> {
    prior: &'a GaussianPrior,
    abar: f64,
    score: Vec<f64>,
}

impl Linearized for GaussianAt<'_> {
    fn score(&self) -> &[f64] {
        &self.score
    }

    fn vjp(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("vjp direction", self.score.len(), v.len())?;
        Ok(self
            .prior
            .component
            .precision_apply(self.abar, v)
            .into_iter()
            .map(|p| -p)
            .collect())
    }
}

impl ScoreModel for GaussianPrior {
    fn kind(&self) -> ModelKind {
        ModelKind::AnalyticGaussian
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> Option<usize> {
        Some(self.component.dim())
    }

    fn jacobian_support(&self) -> JacobianSupport {
        JacobianSupport::Exact
    }

    fn linearize<'a>(&'a self, x: &[f64], step: usize, label: Option<&str>) -> Result<Box<dyn Linearized + 'a>> {
        check_inputs(self, x, step, label)?;
        let abar = self.schedule.alpha_bar(step);
        let c = self.component.centred(abar, x);
        let score = self.component.precision_apply(abar, &c).into_iter().map(|p| -p).collect();
        Ok(Box::new(GaussianAt {
            prior: self,
            abar,
            score,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::testing::{fd_vjp, rel_err};
    use crate::prior::{score_jvp, tweedie_x0};
    use crate::schedule::noise_to_level;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(200, 1e-4, 2e-2).unwrap()
    }

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn score_vanishes_at_scaled_mean() {
        let s = sched();
        let mean = vec![0.5, -1.0, 2.0];
        let p = GaussianPrior::new(mean.clone(), Covariance::Diagonal(vec![0.3, 1.0, 2.0]), s.clone()).unwrap();
        let a = s.alpha_bar(80).sqrt();
        let x: Vec<f64> = mean.iter().map(|m| a * m).collect();
        assert!(p.score(&x, 80, None).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn isotropic_score_and_jvp() {
        let s = sched();
        let mean = vec![1.0, 2.0];
        let p = GaussianPrior::new(mean.clone(), Covariance::Diagonal(vec![1.0, 1.0]), s.clone()).unwrap();
        let x = [0.3, -0.7];
        let a = s.alpha_bar(40).sqrt();
        let sc = p.score(&x, 40, None).unwrap();
        for j in 0..2 {
            assert!((sc[j] + (x[j] - a * mean[j])).abs() < 1e-14);
        }
        let v = [0.25, -4.0];
        let j = score_jvp(&p, &x, 40, &v, None).unwrap();
        assert!((j[0] + 0.25).abs() < 1e-14 && (j[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn tweedie_equals_linear_gaussian_conditional_mean() {
        // E[x0 | x_t] = mu + sqrt(abar) Sigma (abar Sigma + (1-abar) I)^{-1} (x_t - sqrt(abar) mu)
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 6;
        let cov = random_spd(d, &mut rng);
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = GaussianPrior::new(mean.clone(), Covariance::Full(cov.clone()), s.clone()).unwrap();
        for &step in &[0usize, 30, 120, 199] {
            let x0 = p.sample(&mut rng);
            let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xt = noise_to_level(&x0, step, &eps, &s).unwrap();
            let abar = s.alpha_bar(step);
            let st = &cov * abar + DMatrix::identity(d, d) * (1.0 - abar);
            let mu = DVector::from_vec(mean.clone());
            let resid = DVector::from_vec(xt.clone()) - &mu * abar.sqrt();
            let want = &mu + &cov * st.try_inverse().unwrap() * resid * abar.sqrt();
            let got = tweedie_x0(&p, &xt, step, None).unwrap();
            for j in 0..d {
                assert!((got[j] - want[j]).abs() < 1e-10, "step {step}");
            }
        }
    }

    #[test]
    fn no_noise_limit_returns_input() {
        let s = NoiseSchedule::linear(10, 1e-9, 1e-3).unwrap();
        let p = GaussianPrior::new(vec![0.0; 3], Covariance::Diagonal(vec![1.0; 3]), s).unwrap();
        let x = [0.0, 0.0, 0.0];
        let x0 = tweedie_x0(&p, &x, 0, None).unwrap();
        assert!(x0.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 5;
        let p = GaussianPrior::new(vec![0.1; d], Covariance::Full(random_spd(d, &mut rng)), s).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let step = rng.random_range(0..200);
            let exact = score_jvp(&p, &x, step, &v, None).unwrap();
            let fd = fd_vjp(&p, &x, step, &v, None, 1e-5);
            assert!(rel_err(&exact, &fd) < 1e-6);
        }
    }

    #[test]
    fn invalid_covariances() {
        let s = sched();
        let nonsym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianPrior::new(vec![0.0; 2], Covariance::Full(nonsym), s.clone()).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianPrior::new(vec![0.0; 2], Covariance::Full(indefinite), s.clone()).is_err());
        assert!(GaussianPrior::new(vec![0.0; 2], Covariance::Diagonal(vec![1.0, 0.0]), s.clone()).is_err());
        let p = GaussianPrior::new(vec![0.0; 2], Covariance::Diagonal(vec![1.0, 1.0]), s).unwrap();
        assert!(matches!(p.score(&[0.0; 3], 0, None), Err(Error::Dimension { .. })));
        assert!(matches!(p.score(&[f64::NAN, 0.0], 0, None), Err(Error::NonFinite(_))));
        assert!(matches!(p.score(&[0.0; 2], 0, Some("dog")), Err(Error::UnknownLabel(_))));
    }
}
