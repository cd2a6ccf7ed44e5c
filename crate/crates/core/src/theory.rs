//! Closed-form expected squared error of the count-ratio estimator.
//!
//! The estimator is unbiased, so `E[SE] = Σ_ij Var[M̃_ij]`. Under Fixed
//! Sampling `Var[M̃_ij] = M_ij (1 − M_ij) / n_i`. Under Variable Sampling the
//! class count `N_i` is the binomial marginal of the multinomial draw and
//! `Var[M̃_ij] = M_ij (1 − M_ij) Σ_{x=1..n} P(N_i = x) / x`.
//!
//! The Variable sum starts at `x = 1`. When `P(N_i = 0)` is not negligible the
//! simulated error exceeds the closed form by `P(N_i = 0) Σ_j M_ij²`; the
//! report carries a warning for every class where that mass exceeds
//! [`ZERO_COUNT_WARN_THRESHOLD`].

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::estimation::SamplingScheme;
use crate::noise::{ClassPrior, NoiseMatrix, NoiseSpec};
use crate::sum::{compensated_sum, KahanSum};

pub const ZERO_COUNT_WARN_THRESHOLD: f64 = 1e-3;

/// `C(n, x) pˣ (1 − p)ⁿ⁻ˣ`, evaluated in log space.
pub fn binomial_pmf(n: u64, p: f64, x: u64) -> Result<f64> {
    if x > n {
        return Err(Error::invalid(format!("{x} successes out of {n} trials")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(pmf_unchecked(n, p, x))
}

fn pmf_unchecked(n: u64, p: f64, x: u64) -> f64 {
    if p == 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if x == n { 1.0 } else { 0.0 };
    }
    let ln = ln_binomial(n, x) + x as f64 * p.ln() + (n - x) as f64 * (-p).ln_1p();
    ln.exp()
}

/// `E[1/N; N ≥ 1]` for `N ~ Binomial(n, p)`, i.e. `Σ_{x=1..n} P(N=x) / x`.
///
/// Terms are accumulated smallest first with compensation.
pub fn truncated_reciprocal_expectation(n: u64, p: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let mut terms: Vec<f64> = (1..=n)
        .map(|x| pmf_unchecked(n, p, x) / x as f64)
        .filter(|t| *t > 0.0)
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(compensated_sum(terms))
}

/// `P(N_i = 0)` for a class with prior mass `p` under `n` draws.
pub fn zero_count_probability(n: u64, p: f64) -> f64 {
    (n as f64 * (-p).ln_1p()).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCountWarning {
    pub class: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedErrorReport {
    pub k: usize,
    /// Row-major `Var[M̃_ij]`.
    pub per_entry_variance: Vec<f64>,
    pub total: f64,
    pub scheme: SamplingScheme,
    pub prior: Option<ClassPrior>,
    pub warnings: Vec<ZeroCountWarning>,
}

impl ExpectedErrorReport {
    pub fn variance(&self, i: usize, j: usize) -> f64 {
        self.per_entry_variance[i * self.k + j]
    }
}

fn report(
    m: &NoiseMatrix,
    row_factor: &[f64],
    scheme: SamplingScheme,
    prior: Option<ClassPrior>,
    warnings: Vec<ZeroCountWarning>,
) -> ExpectedErrorReport {
    let k = m.k();
    let mut per_entry_variance = Vec::with_capacity(k * k);
    let mut total = KahanSum::new();
    for (row, &factor) in m.rows().zip(row_factor) {
        for &mij in row {
            let v = mij * (1.0 - mij) * factor;
            per_entry_variance.push(v);
            total.add(v);
        }
    }
    ExpectedErrorReport {
        k,
        per_entry_variance,
        total: total.value(),
        scheme,
        prior,
        warnings,
    }
}

/// Expected squared error when exactly `per_class[i]` pairs of class `i` are drawn.
pub fn expected_error_fixed(m: &NoiseMatrix, per_class: &[usize]) -> Result<ExpectedErrorReport> {
    if per_class.len() != m.k() {
        return Err(Error::DimensionMismatch {
            expected: m.k(),
            actual: per_class.len(),
        });
    }
    if let Some(i) = per_class.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "class {i} has n_i = 0; the fixed-sampling variance is undefined"
        )));
    }
    let factors: Vec<f64> = per_class.iter().map(|&n| 1.0 / n as f64).collect();
    Ok(report(
        m,
        &factors,
        SamplingScheme::Fixed {
            per_class: per_class.to_vec(),
        },
        None,
        Vec::new(),
    ))
}

/// Expected squared error when `n` pairs are drawn with clean labels from `prior`.
pub fn expected_error_variable(
    m: &NoiseMatrix,
    prior: &ClassPrior,
    n: usize,
) -> Result<ExpectedErrorReport> {
    if prior.k() != m.k() {
        return Err(Error::DimensionMismatch {
            expected: m.k(),
            actual: prior.k(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("variable sampling needs n >= 1"));
    }
    let mut factors = Vec::with_capacity(m.k());
    let mut warnings = Vec::new();
    for (class, &p) in prior.probs().iter().enumerate() {
        factors.push(truncated_reciprocal_expectation(n as u64, p)?);
        let p0 = zero_count_probability(n as u64, p);
        if p0 > ZERO_COUNT_WARN_THRESHOLD {
            warnings.push(ZeroCountWarning {
                class,
                probability: p0,
            });
        }
    }
    Ok(report(
        m,
        &factors,
        SamplingScheme::Variable { total: n },
        Some(prior.clone()),
        warnings,
    ))
}

/// Dispatches on the scheme. Variable Sampling without a prior assumes a
/// uniform class distribution.
pub fn expected_error(
    m: &NoiseMatrix,
    scheme: &SamplingScheme,
    prior: Option<&ClassPrior>,
) -> Result<ExpectedErrorReport> {
    match scheme {
        SamplingScheme::Fixed { per_class } => expected_error_fixed(m, per_class),
        SamplingScheme::Variable { total } => match prior {
            Some(p) => expected_error_variable(m, p, *total),
            None => expected_error_variable(m, &ClassPrior::uniform(m.k())?, *total),
        },
    }
}

/// Axis of a theory curve or simulation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "values")]
pub enum Grid {
    /// `n_i` for every class under Fixed Sampling, `n` under Variable Sampling.
    SampleSizes(Vec<usize>),
    NoiseLevels(Vec<f64>),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::SampleSizes(v) => v.len(),
            Grid::NoiseLevels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, idx: usize) -> f64 {
        match self {
            Grid::SampleSizes(v) => v[idx] as f64,
            Grid::NoiseLevels(v) => v[idx],
        }
    }

    /// Noise process and scheme at grid point `idx`.
    pub fn point(
        &self,
        idx: usize,
        noise: &NoiseSpec,
        scheme: &SamplingScheme,
    ) -> Result<(NoiseSpec, SamplingScheme)> {
        match self {
            Grid::SampleSizes(v) => Ok((noise.clone(), scheme.with_size(v[idx]))),
            Grid::NoiseLevels(v) => Ok((noise.with_epsilon(v[idx])?, scheme.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub grid_value: f64,
    pub expected_se: f64,
}

/// Expected error at every grid point. Noise-level grids rebuild the matrix
/// at each `ε`.
pub fn error_curve(
    noise: &NoiseSpec,
    scheme: &SamplingScheme,
    prior: Option<&ClassPrior>,
    grid: &Grid,
) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    (0..grid.len())
        .map(|idx| {
            let (spec, scheme) = grid.point(idx, noise, scheme)?;
            let r = expected_error(&spec.build()?, &scheme, prior)?;
            Ok(CurvePoint {
                grid_value: grid.value(idx),
                expected_se: r.total,
            })
        })
        .collect()
}

/// `grid_value,expected_se` rows.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["grid_value", "expected_se"])?;
    for p in points {
        w.write_record([fmt_f64(p.grid_value), fmt_f64(p.expected_se)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Shortest round-trip decimal text.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{single_flip_noise, uniform_noise, FlipSpec, NoiseLevel};

    fn eps(x: f64) -> NoiseLevel {
        NoiseLevel::new(x).unwrap()
    }

    #[test]
    fn pmf_small_cases() {
        assert!((binomial_pmf(4, 0.5, 2).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(binomial_pmf(17, 0.0, 0).unwrap(), 1.0);
        assert_eq!(binomial_pmf(17, 0.0, 3).unwrap(), 0.0);
        assert_eq!(binomial_pmf(17, 1.0, 17).unwrap(), 1.0);
        assert!(binomial_pmf(3, 0.5, 4).is_err());
        assert!(binomial_pmf(3, 1.5, 1).is_err());
    }

    #[test]
    fn pmf_large_n_sums_to_one() {
        let s = compensated_sum((0..=5000).map(|x| binomial_pmf(5000, 0.03, x).unwrap()));
        assert!((s - 1.0).abs() < 1e-10, "{s}");
    }

    #[test]
    fn reciprocal_expectation_examples() {
        assert!((truncated_reciprocal_expectation(2, 0.5).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(truncated_reciprocal_expectation(1, 1.0).unwrap(), 1.0);
        assert_eq!(truncated_reciprocal_expectation(10, 0.0).unwrap(), 0.0);
        assert!(truncated_reciprocal_expectation(0, 0.5).is_err());
    }

    #[test]
    fn fixed_examples() {
        let u = uniform_noise(10, eps(0.5)).unwrap();
        let r = expected_error_fixed(&u, &[10; 10]).unwrap();
        assert!((r.total - 13.0 / 18.0).abs() < 1e-12, "{}", r.total);

        let cyc = FlipSpec::new(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let m = single_flip_noise(3, eps(0.3), &cyc).unwrap();
        let r = expected_error_fixed(&m, &[20; 3]).unwrap();
        assert!((r.total - 0.063).abs() < 1e-12, "{}", r.total);

        let id = NoiseMatrix::identity(4).unwrap();
        assert_eq!(expected_error_fixed(&id, &[3, 1, 7, 2]).unwrap().total, 0.0);

        assert!(expected_error_fixed(&id, &[3, 0, 7, 2]).is_err());
        assert!(expected_error_fixed(&id, &[3, 1]).is_err());
    }

    #[test]
    fn report_total_matches_entries() {
        let u = uniform_noise(5, eps(0.35)).unwrap();
        let r = expected_error_fixed(&u, &[3, 9, 4, 12, 6]).unwrap();
        let s: f64 = r.per_entry_variance.iter().sum();
        assert!((s - r.total).abs() < 1e-12);
        assert!(r.per_entry_variance.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn variable_examples() {
        let m = NoiseMatrix::from_rows([[0.8, 0.2], [0.2, 0.8]]).unwrap();
        let prior = ClassPrior::new(vec![0.5, 0.5]).unwrap();
        let r = expected_error_variable(&m, &prior, 2).unwrap();
        assert!((r.total - 0.4).abs() < 1e-15, "{}", r.total);
        // P(N_i = 0) = 0.25
        assert_eq!(r.warnings.len(), 2);

        let id = NoiseMatrix::identity(3).unwrap();
        let skew = ClassPrior::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert_eq!(expected_error_variable(&id, &skew, 50).unwrap().total, 0.0);
    }

    #[test]
    fn variable_warns_only_when_empty_rows_are_likely() {
        let u = uniform_noise(4, eps(0.3)).unwrap();
        let prior = ClassPrior::new(vec![0.91, 0.03, 0.03, 0.03]).unwrap();
        let r = expected_error_variable(&u, &prior, 100).unwrap();
        assert_eq!(r.warnings.iter().map(|w| w.class).collect::<Vec<_>>(), vec![1, 2, 3]);
        let r = expected_error_variable(&u, &prior, 1000).unwrap();
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn variable_exceeds_fixed_on_uniform_setting() {
        let u = uniform_noise(10, eps(0.5)).unwrap();
        let prior = ClassPrior::uniform(10).unwrap();
        for ni in [5, 10, 50] {
            let f = expected_error_fixed(&u, &[ni; 10]).unwrap().total;
            let v = expected_error_variable(&u, &prior, 10 * ni).unwrap().total;
            assert!(v > f, "n_i={ni}: variable {v} fixed {f}");
        }
    }

    #[test]
    fn curve_identity_and_halving() {
        let id = NoiseSpec::Explicit {
            matrix: NoiseMatrix::identity(3).unwrap(),
        };
        let c = error_curve(&id, &SamplingScheme::fixed_equal(3, 1), None, &Grid::SampleSizes(vec![1, 5, 9]))
            .unwrap();
        assert!(c.iter().all(|p| p.expected_se == 0.0));
        let c = error_curve(&id, &SamplingScheme::Variable { total: 1 }, None, &Grid::SampleSizes(vec![4, 8]))
            .unwrap();
        assert!(c.iter().all(|p| p.expected_se == 0.0));

        let u = NoiseSpec::Uniform { k: 10, epsilon: 0.5 };
        let c = error_curve(&u, &SamplingScheme::fixed_equal(10, 1), None, &Grid::SampleSizes(vec![10, 20]))
            .unwrap();
        assert_eq!(c[1].expected_se, c[0].expected_se / 2.0);

        assert!(error_curve(&u, &SamplingScheme::fixed_equal(10, 1), None, &Grid::SampleSizes(vec![])).is_err());
        assert!(error_curve(&id, &SamplingScheme::fixed_equal(3, 1), None, &Grid::NoiseLevels(vec![0.1])).is_err());
    }

    #[test]
    fn single_flip_curve_peaks_at_half() {
        let spec = NoiseSpec::SingleFlip {
            k: 10,
            epsilon: 0.0,
            flips: FlipSpec::mnist_pairs().flips(),
        };
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let c = error_curve(&spec, &SamplingScheme::fixed_equal(10, 20), None, &Grid::NoiseLevels(grid)).unwrap();
        let best = c
            .iter()
            .max_by(|a, b| a.expected_se.total_cmp(&b.expected_se))
            .unwrap();
        assert_eq!(best.grid_value, 0.5);
    }

    #[test]
    fn curve_csv_layout() {
        let pts = [
            CurvePoint { grid_value: 10.0, expected_se: 0.5 },
            CurvePoint { grid_value: 20.0, expected_se: 0.25 },
        ];
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "grid_value,expected_se\n10.0,0.5\n20.0,0.25\n");
    }
}
