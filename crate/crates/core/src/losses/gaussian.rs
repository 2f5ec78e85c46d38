use std::f64::consts::PI;

use crate::autograd::{Graph, Var};
use crate::error::{ensure_finite, Error, Result};
use crate::model::GaussianForecast;
use crate::tensor::Matrix;

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{what}: horizon {a} vs {b} targets")));
    }
    Ok(())
}

/// Average Gaussian negative log-likelihood over the horizon:
/// `(T_h·ln 2π + Σ ln σ² + Σ (y-μ)²/σ²) / (2·T_h)`.
pub fn nll_loss(f: &GaussianForecast, y: &[f64]) -> Result<f64> {
    check_lengths("nll", f.horizon(), y.len())?;
    let t = y.len() as f64;
    let mut acc = t * (2.0 * PI).ln();
    for ((m, s), v) in f.mu.iter().zip(&f.sigma).zip(y) {
        acc += (s * s).ln() + (v - m).powi(2) / (s * s);
    }
    ensure_finite("nll", acc / (2.0 * t))
}

/// `KL(N(mu1, s1²) ‖ N(mu2, s2²))`.
pub fn gaussian_kl(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Result<f64> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::Numeric {
            component: format!("kl (scales {s1}, {s2})"),
        });
    }
    let kl = (s2 / s1).ln() + (s1 * s1 + (mu1 - mu2).powi(2)) / (2.0 * s2 * s2) - 0.5;
    ensure_finite("kl", kl)
}

/// Density of the truth under the teacher's Gaussian, capped at 1.
pub fn outcome_weight(mu: f64, sigma: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    let density = (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt());
    density.min(1.0)
}

pub fn outcome_weights(teacher: &GaussianForecast, y: &[f64]) -> Vec<f64> {
    teacher
        .mu
        .iter()
        .zip(&teacher.sigma)
        .zip(y)
        .map(|((&m, &s), &v)| outcome_weight(m, s, v))
        .collect()
}

/// `(alpha_o / T_h) · Σ_t ω_t · KL(teacher_t ‖ student_t)`.
pub fn outcome_kd(student: &GaussianForecast, teacher: &GaussianForecast, y: &[f64], alpha_o: f64) -> Result<f64> {
    check_lengths("outcome kd", student.horizon(), y.len())?;
    check_lengths("outcome kd", teacher.horizon(), y.len())?;
    let w = outcome_weights(teacher, y);
    let mut acc = 0.0;
    for t in 0..y.len() {
        acc += w[t] * gaussian_kl(teacher.mu[t], teacher.sigma[t], student.mu[t], student.sigma[t])?;
    }
    ensure_finite("outcome kd", alpha_o * acc / y.len() as f64)
}

/// Mutual outcome distillation: P1 learns from P2, P2 from P1, and S from
/// both.
pub fn outcome_kd_losses(
    p1: &GaussianForecast,
    p2: &GaussianForecast,
    s: &GaussianForecast,
    y: &[f64],
    alpha_o: f64,
) -> Result<(f64, f64, f64)> {
    Ok((
        outcome_kd(p1, p2, y, alpha_o)?,
        outcome_kd(p2, p1, y, alpha_o)?,
        outcome_kd(s, p1, y, alpha_o)? + outcome_kd(s, p2, y, alpha_o)?,
    ))
}

/// [`nll_loss`] on graph nodes `mu`, `sigma` of shape `[T_h × 1]`.
pub fn nll_graph(g: &mut Graph<'_>, mu: Var, sigma: Var, y: &[f64]) -> Var {
    let t = y.len() as f64;
    let yv = g.constant(Matrix::column(y));
    let r = g.sub(yv, mu);
    let r2 = g.mul(r, r);
    let var = g.mul(sigma, sigma);
    let inv = g.powf(var, -1.0);
    let z2 = g.mul(r2, inv);
    let log_var = g.ln(var);
    let per_step = g.add(z2, log_var);
    let s = g.sum(per_step);
    let s = g.add_scalar(s, t * (2.0 * PI).ln());
    g.scale(s, 1.0 / (2.0 * t))
}

/// [`outcome_kd`] with the teacher entering as constants: no gradient can
/// reach it, and its weights are plain coefficients.
pub fn outcome_kd_graph(
    g: &mut Graph<'_>,
    mu: Var,
    sigma: Var,
    teacher: &GaussianForecast,
    y: &[f64],
    alpha_o: f64,
) -> Var {
    let t = y.len() as f64;
    let w = g.constant(Matrix::column(&outcome_weights(teacher, y)));
    let offset = g.constant(Matrix::column(
        &teacher.sigma.iter().map(|s| -s.ln() - 0.5).collect::<Vec<_>>(),
    ));
    let teacher_var = g.constant(Matrix::column(
        &teacher.sigma.iter().map(|s| s * s).collect::<Vec<_>>(),
    ));
    let teacher_mu = g.constant(Matrix::column(&teacher.mu));
    let d = g.sub(teacher_mu, mu);
    let d2 = g.mul(d, d);
    let num = g.add(d2, teacher_var);
    let student_var = g.mul(sigma, sigma);
    let inv = g.powf(student_var, -1.0);
    let frac = g.mul(num, inv);
    let frac = g.scale(frac, 0.5);
    let log_s = g.ln(sigma);
    let kl = g.add(log_s, frac);
    let kl = g.add(kl, offset);
    let weighted = g.mul(kl, w);
    let s = g.sum(weighted);
    g.scale(s, alpha_o / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{assert_close_gradients, numeric_gradient, FD_STEP, FD_TOLERANCE};
    use crate::params::ParamStore;

    fn f(mu: &[f64], sigma: &[f64]) -> GaussianForecast {
        GaussianForecast::new(mu.to_vec(), sigma.to_vec()).unwrap()
    }

    /// Composite Simpson integration of p·ln(p/q) on [-12, 12].
    fn kl_by_quadrature(mu1: f64, s1: f64, mu2: f64, s2: f64) -> f64 {
        kl_simpson(mu1, s1, mu2, s2, -12.0, 12.0)
    }

    fn kl_simpson(mu1: f64, s1: f64, mu2: f64, s2: f64, a: f64, b: f64) -> f64 {
        let pdf = |x: f64, m: f64, s: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * PI).sqrt());
        let log_pdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln();
        let integrand = |x: f64| pdf(x, mu1, s1) * (log_pdf(x, mu1, s1) - log_pdf(x, mu2, s2));
        let n = 24_000;
        let h = (b - a) / n as f64;
        let mut acc = integrand(a) + integrand(b);
        for k in 1..n {
            let x = a + k as f64 * h;
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * integrand(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn nll_hand_values() {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        assert!((nll_loss(&f(&[1.0, 2.0], &[1.0, 1.0]), &[1.0, 2.0]).unwrap() - half_log_2pi).abs() < 1e-15);
        assert!((half_log_2pi - 0.9189).abs() < 1e-4);
        let v = nll_loss(&f(&[1.0], &[1.0]), &[0.0]).unwrap();
        assert!((v - 0.5 * ((2.0 * PI).ln() + 1.0)).abs() < 1e-15);
        assert!((v - 1.4189).abs() < 1e-4);
        let at1 = nll_loss(&f(&[0.0], &[1.0]), &[0.0]).unwrap();
        let at2 = nll_loss(&f(&[0.0], &[2.0]), &[0.0]).unwrap();
        assert!(at2 > at1);
        assert!(nll_loss(&f(&[0.0], &[1.0]), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn kl_hand_values_and_quadrature() {
        assert_eq!(gaussian_kl(0.3, 1.7, 0.3, 1.7).unwrap(), 0.0);
        assert!((gaussian_kl(0.0, 1.0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let v = gaussian_kl(0.0, 1.0, 0.0, 4.0).unwrap();
        assert!((v - (4f64.ln() + 1.0 / 32.0 - 0.5)).abs() < 1e-15);
        assert!((kl_by_quadrature(0.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-6);
        assert!(gaussian_kl(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(gaussian_kl(0.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn kl_normal_pair_with_double_scale() {
        // N(0,1) against N(0, 2²): ln 2 + 1/8 - 1/2
        let v = gaussian_kl(0.0, 1.0, 0.0, 2.0).unwrap();
        assert!((v - (2f64.ln() + 0.125 - 0.5)).abs() < 1e-15);
        assert!((v - 0.3181).abs() < 1e-4);
        assert!((kl_by_quadrature(0.0, 1.0, 0.0, 2.0) - v).abs() < 1e-6);
    }

    #[test]
    fn kl_matches_quadrature_on_grid() {
        let mus = [-3.0, -1.5, 0.0, 1.5, 3.0];
        let sigmas = [0.3, 0.9, 1.5, 2.2, 3.0];
        let mut worst: f64 = 0.0;
        for &m1 in &mus {
            for &s1 in &sigmas {
                for &m2 in &mus {
                    for &s2 in &sigmas {
                        let exact = gaussian_kl(m1, s1, m2, s2).unwrap();
                        // wide p against narrow q keeps mass past ±12, so
                        // integrate over ±40 standard deviations of p
                        let numeric = kl_simpson(m1, s1, m2, s2, m1 - 40.0 * s1, m1 + 40.0 * s1);
                        worst = worst.max((exact - numeric).abs());
                        assert!(exact >= 0.0);
                        if exact == 0.0 {
                            assert!(m1 == m2 && s1 == s2);
                        }
                    }
                }
            }
        }
        assert!(worst < 1e-6, "worst quadrature gap {worst:e}");
    }

    #[test]
    fn outcome_weight_values() {
        let s = 1.0 / (2.0 * PI).sqrt();
        assert!((outcome_weight(3.0, s, 3.0) - 1.0).abs() < 1e-15);
        assert!((outcome_weight(0.0, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(outcome_weight(0.0, 0.01, 0.0), 1.0);
        let grid: Vec<f64> = [0.0, 1.0, 2.0, 4.0].iter().map(|z| outcome_weight(0.0, 1.3, z * 1.3)).collect();
        assert!(grid.windows(2).all(|p| p[1] < p[0]));
        assert!(grid.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn outcome_kd_examples() {
        let a = f(&[0.0], &[1.0]);
        let b = f(&[1.0], &[1.0]);
        let (l1, l2, ls) = outcome_kd_losses(&a, &a, &a, &[0.0], 1.0).unwrap();
        assert_eq!((l1, l2, ls), (0.0, 0.0, 0.0));
        let (l1, l2, ls) = outcome_kd_losses(&a, &b, &a, &[0.0], 0.0).unwrap();
        assert_eq!((l1, l2, ls), (0.0, 0.0, 0.0));
        // P1 = N(0,1), P2 = N(1,1), y = 0: weight of P2 is φ(1)
        let (l1, _, _) = outcome_kd_losses(&a, &b, &a, &[0.0], 1.0).unwrap();
        let expected = (-0.5f64).exp() / (2.0 * PI).sqrt() * 0.5;
        assert!((l1 - expected).abs() < 1e-15);
        assert!((l1 - 0.1210).abs() < 1e-4);
    }

    #[test]
    fn graph_forms_match_values_and_differentiate() {
        let y = [0.3, -1.0, 2.0];
        let mu = Matrix::column(&[0.1, -0.5, 1.0]);
        let raw_sigma = Matrix::column(&[0.8, 1.4, 0.6]);
        let teacher = f(&[0.5, -0.8, 1.7], &[0.7, 0.3, 1.1]);
        let store = ParamStore::new();
        let value = |m: &Matrix, s: &Matrix| {
            let fc = f(m.as_slice(), s.as_slice());
            nll_loss(&fc, &y).unwrap() + outcome_kd(&fc, &teacher, &y, 0.7).unwrap()
        };
        let build = |g: &mut Graph<'_>, m: &Matrix, s: &Matrix| {
            let mv = g.input(m.clone());
            let sv = g.input(s.clone());
            let a = nll_graph(g, mv, sv, &y);
            let b = outcome_kd_graph(g, mv, sv, &teacher, &y, 0.7);
            (g.add(a, b), mv, sv)
        };
        let mut g = Graph::inference(&store);
        let (loss, mv, sv) = build(&mut g, &mu, &raw_sigma);
        assert!((g.scalar(loss) - value(&mu, &raw_sigma)).abs() < 1e-12);
        let grads = g.backward(loss);
        let n_mu = numeric_gradient(&mu, FD_STEP, |m| value(m, &raw_sigma));
        let n_sigma = numeric_gradient(&raw_sigma, FD_STEP, |s| value(&mu, s));
        assert_close_gradients("mu", grads.wrt(mv).unwrap(), &n_mu, FD_TOLERANCE);
        assert_close_gradients("sigma", grads.wrt(sv).unwrap(), &n_sigma, FD_TOLERANCE);
    }
}
