//! Weighted Gaussians and finite Gaussian mixtures.
//!
//! Densities follow the `N(x; variance, mean)` convention. A component with
//! variance exactly zero is a Dirac impulse at its mean; it participates in
//! products and overlaps through the sifting property but is never
//! point-evaluated.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussianError {
    #[error("cannot point-evaluate a Dirac component at {mean}")]
    DiracEvaluation { mean: f64 },
    #[error("invalid variance {0}")]
    InvalidVariance(f64),
    #[error("invalid weight {0}")]
    InvalidWeight(f64),
    #[error("non-finite mean {0}")]
    InvalidMean(f64),
    #[error("product of Dirac impulses at {a} and {b} is identically zero")]
    ZeroProduct { a: f64, b: f64 },
    #[error("product of two Dirac impulses at {at} has no finite scale")]
    DegenerateProduct { at: f64 },
    #[error("overlap of two Dirac impulses is undefined")]
    DegenerateOverlap,
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("cannot normalize a mixture with total weight {0}")]
    NormalizationFailure(f64),
    #[error("mixture is not normalized (total weight {0})")]
    NotNormalized(f64),
    #[error("mixture contains a Dirac component; it cannot be evaluated on a grid")]
    DiracOnGrid,
    #[error("invalid quadrature setup: {0}")]
    InvalidQuadrature(String),
}

pub type Result<T> = std::result::Result<T, GaussianError>;

/// Density of `N(x; variance, mean)`.
pub fn eval_gaussian(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if variance == 0.0 {
        return Err(GaussianError::DiracEvaluation { mean });
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(GaussianError::InvalidVariance(variance));
    }
    let d = x - mean;
    Ok((-(d * d) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt())
}

/// Log-density of `N(x; variance, mean)` for a strictly positive variance.
pub(crate) fn log_gaussian(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln()) - d * d / (2.0 * variance)
}

/// Numerically stable `ln(Σ exp(v))`; `-inf` for an empty or all `-inf` input.
pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One term `weight · N(x; variance, mean)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedGaussian {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl WeightedGaussian {
    pub fn new(weight: f64, mean: f64, variance: f64) -> Result<Self> {
        let g = Self {
            weight,
            mean,
            variance,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit-weight impulse `δ(x − at)`.
    pub fn dirac(at: f64) -> Self {
        Self {
            weight: 1.0,
            mean: at,
            variance: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(GaussianError::InvalidWeight(self.weight));
        }
        if !self.mean.is_finite() {
            return Err(GaussianError::InvalidMean(self.mean));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(GaussianError::InvalidVariance(self.variance));
        }
        Ok(())
    }

    pub fn is_dirac(&self) -> bool {
        self.variance == 0.0
    }

    /// Weighted density at `x`.
    pub fn density(&self, x: f64) -> Result<f64> {
        Ok(self.weight * eval_gaussian(x, self.mean, self.variance)?)
    }

    pub fn with_weight(self, weight: f64) -> Self {
        Self { weight, ..self }
    }
}

/// `ln N(μ_a; σ_a² + σ_b², μ_b)`, the log of the overlap integral of two
/// unit-weight Gaussians.
pub(crate) fn log_overlap(
    mean_a: f64,
    var_a: f64,
    mean_b: f64,
    var_b: f64,
) -> Result<f64> {
    let var = var_a + var_b;
    if var == 0.0 {
        return Err(GaussianError::DegenerateOverlap);
    }
    Ok(log_gaussian(mean_a, mean_b, var))
}

/// Mean and variance of the normalized product of two Gaussians with
/// `var_a + var_b > 0`. A Dirac factor keeps its location exactly.
fn product_moments(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64) -> (f64, f64) {
    if var_a == 0.0 {
        return (mean_a, 0.0);
    }
    if var_b == 0.0 {
        return (mean_b, 0.0);
    }
    let var_sum = var_a + var_b;
    ((mean_a * var_b + mean_b * var_a) / var_sum, var_a * var_b / var_sum)
}

/// Product of two weighted Gaussians as a single weighted Gaussian.
///
/// The returned weight folds both input weights and the constant
/// `N(μ_a; σ_a² + σ_b², μ_b)`. When exactly one input is a Dirac the
/// formula reduces to sifting. Two Diracs give `ZeroProduct` at distinct
/// points and `DegenerateProduct` at the same point.
pub fn product_pair(a: &WeightedGaussian, b: &WeightedGaussian) -> Result<WeightedGaussian> {
    let var_sum = a.variance + b.variance;
    if var_sum == 0.0 {
        return if a.mean == b.mean {
            Err(GaussianError::DegenerateProduct { at: a.mean })
        } else {
            Err(GaussianError::ZeroProduct {
                a: a.mean,
                b: b.mean,
            })
        };
    }
    let scale = eval_gaussian(a.mean, b.mean, var_sum)?;
    let (mean, variance) = product_moments(a.mean, a.variance, b.mean, b.variance);
    Ok(WeightedGaussian {
        weight: a.weight * b.weight * scale,
        mean,
        variance,
    })
}

/// `∫ a(u) b(u) du = w_a w_b N(μ_a; σ_a² + σ_b², μ_b)`.
pub fn overlap_scale(a: &WeightedGaussian, b: &WeightedGaussian) -> Result<f64> {
    let var_sum = a.variance + b.variance;
    if var_sum == 0.0 {
        return Err(GaussianError::DegenerateOverlap);
    }
    Ok(a.weight * b.weight * eval_gaussian(a.mean, b.mean, var_sum)?)
}

/// A finite, nonempty weighted sum of Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WeightedGaussian>", into = "Vec<WeightedGaussian>")]
pub struct GaussianMixture {
    components: Vec<WeightedGaussian>,
}

impl TryFrom<Vec<WeightedGaussian>> for GaussianMixture {
    type Error = GaussianError;

    fn try_from(components: Vec<WeightedGaussian>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<GaussianMixture> for Vec<WeightedGaussian> {
    fn from(m: GaussianMixture) -> Self {
        m.components
    }
}

/// Tolerance used when deciding whether a mixture already sums to one.
pub const NORMALIZED_TOLERANCE: f64 = 1e-9;

impl GaussianMixture {
    pub fn new(components: Vec<WeightedGaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(GaussianError::EmptyMixture);
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    pub fn single(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![WeightedGaussian::new(1.0, mean, variance)?])
    }

    pub fn dirac(at: f64) -> Self {
        Self {
            components: vec![WeightedGaussian::dirac(at)],
        }
    }

    pub fn components(&self) -> &[WeightedGaussian] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, WeightedGaussian> {
        self.components.iter()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_weight() - 1.0).abs() <= NORMALIZED_TOLERANCE
    }

    pub fn has_dirac(&self) -> bool {
        self.components.iter().any(WeightedGaussian::is_dirac)
    }

    /// The single impulse location when every component is a Dirac at the
    /// same point.
    pub fn as_point_mass(&self) -> Option<f64> {
        let first = self.components[0].mean;
        self.components
            .iter()
            .all(|c| c.is_dirac() && c.mean == first)
            .then_some(first)
    }

    pub fn max_weight(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight)
            .fold(0.0, f64::max)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.density(x)?;
        }
        Ok(acc)
    }

    /// Pointwise density on `grid`.
    pub fn eval_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        if self.has_dirac() {
            return Err(GaussianError::DiracOnGrid);
        }
        grid.iter().map(|&x| self.eval(x)).collect()
    }

    /// Scales weights so they sum to one.
    pub fn normalize(&self) -> Result<Self> {
        let total = self.total_weight();
        if !(total > 0.0 && total.is_finite()) {
            return Err(GaussianError::NormalizationFailure(total));
        }
        Ok(self.scaled(1.0 / total))
    }

    /// Scales weights so the largest equals one. Used for likelihoods,
    /// whose overall constant carries no information.
    pub fn max_scaled(&self) -> Result<Self> {
        let max = self.max_weight();
        if !(max > 0.0 && max.is_finite()) {
            return Err(GaussianError::NormalizationFailure(max));
        }
        Ok(self.scaled(1.0 / max))
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| c.with_weight(c.weight * factor))
                .collect(),
        }
    }

    /// Mean and variance of a normalized mixture.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let total = self.total_weight();
        if (total - 1.0).abs() > NORMALIZED_TOLERANCE {
            return Err(GaussianError::NotNormalized(total));
        }
        let mean: f64 = self.components.iter().map(|c| c.weight * c.mean).sum();
        // central form avoids cancellation in Σw(σ²+μ²) − mean²
        let variance: f64 = self
            .components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - mean).powi(2)))
            .sum();
        Ok((mean, variance.max(0.0)))
    }

    /// Smallest interval covering `mean ± k·σ` of every component.
    pub fn envelope(&self, k_sigma: f64) -> (f64, f64) {
        self.components.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), c| {
                let r = k_sigma * c.variance.sqrt();
                (lo.min(c.mean - r), hi.max(c.mean + r))
            },
        )
    }

    /// Composite-trapezoid estimate of `∫ |m(x) − target(x)| dx` over `support`.
    pub fn l1_distance<F: Fn(f64) -> f64>(
        &self,
        target: F,
        support: (f64, f64),
        n_points: usize,
    ) -> Result<f64> {
        let grid = linspace(support.0, support.1, n_points)?;
        let values = self.eval_grid(&grid)?;
        let diffs: Vec<f64> = grid
            .iter()
            .zip(&values)
            .map(|(&x, &m)| (m - target(x)).abs())
            .collect();
        Ok(trapezoid(&diffs, grid[1] - grid[0]))
    }

    pub fn reduce(&self, policy: &ReductionPolicy) -> Reduction {
        reduce::mixture_reduce(self, policy)
    }
}

/// Product of two mixtures: all pairwise [`product_pair`] terms, dropping
/// pairs whose product is identically zero.
pub fn mixture_product(a: &GaussianMixture, b: &GaussianMixture) -> Result<GaussianMixture> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for ca in a.iter() {
        for cb in b.iter() {
            match product_pair(ca, cb) {
                Ok(p) => out.push(p),
                Err(GaussianError::ZeroProduct { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    GaussianMixture::new(out)
}

/// Product of two mixtures up to a positive constant, computed in the log
/// domain and returned with its largest weight scaled to one.
///
/// Coincident Dirac pairs dominate every finite term: if any occur, only
/// they survive, weighted by the product of their input weights.
pub(crate) fn scaled_product(a: &GaussianMixture, b: &GaussianMixture) -> Result<GaussianMixture> {
    let mut degenerate = Vec::new();
    let mut terms = Vec::with_capacity(a.len() * b.len());
    for ca in a.iter() {
        for cb in b.iter() {
            let var_sum = ca.variance + cb.variance;
            if var_sum == 0.0 {
                if ca.mean == cb.mean {
                    degenerate.push(WeightedGaussian::dirac(ca.mean).with_weight(ca.weight * cb.weight));
                }
                continue;
            }
            let log_w = ca.weight.ln() + cb.weight.ln() + log_gaussian(ca.mean, cb.mean, var_sum);
            let (mean, variance) = product_moments(ca.mean, ca.variance, cb.mean, cb.variance);
            terms.push((log_w, mean, variance));
        }
    }
    if !degenerate.is_empty() {
        return GaussianMixture::new(degenerate)?.max_scaled();
    }
    from_log_weights(terms)
}

/// Builds a mixture from `(ln weight, mean, variance)` triples, scaling the
/// largest weight to one and dropping zero-weight terms.
pub(crate) fn from_log_weights(terms: Vec<(f64, f64, f64)>) -> Result<GaussianMixture> {
    let max = terms
        .iter()
        .map(|t| t.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GaussianError::EmptyMixture);
    }
    let components = terms
        .into_iter()
        .filter(|t| t.0 > f64::NEG_INFINITY)
        .map(|(lw, mean, variance)| WeightedGaussian {
            weight: (lw - max).exp(),
            mean,
            variance,
        })
        .collect();
    GaussianMixture::new(components)
}

/// Collapses a mixture whose components are all Diracs at one point into a
/// single unit-weight Dirac.
pub(crate) fn collapse_point_mass(m: GaussianMixture) -> GaussianMixture {
    match m.as_point_mass() {
        Some(at) if m.len() > 1 => GaussianMixture::dirac(at),
        _ => m,
    }
}

/// A likelihood message: the constant function 1, or a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum Likelihood {
    Vacuous,
    Mixture(GaussianMixture),
}

impl Likelihood {
    pub fn is_vacuous(&self) -> bool {
        matches!(self, Likelihood::Vacuous)
    }

    pub fn as_mixture(&self) -> Option<&GaussianMixture> {
        match self {
            Likelihood::Vacuous => None,
            Likelihood::Mixture(m) => Some(m),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            Likelihood::Vacuous => Ok(1.0),
            Likelihood::Mixture(m) => m.eval(x),
        }
    }
}

mod reduce;
pub use reduce::{Reduction, ReductionPolicy};

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(GaussianError::InvalidQuadrature(format!(
            "need lo < hi and at least 2 points, got [{lo}, {hi}] with {n}"
        )));
    }
    let h = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
        .collect())
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}
