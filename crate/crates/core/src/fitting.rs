//! Constructing Gaussian-sum approximations of densities and conditional
//! densities.
//!
//! Fits place equally spaced means with a shared variance and optionally
//! refine the weights by projected gradient descent on a discretized L2
//! objective. Errors are reported in L1 (and L2) by composite trapezoid
//! quadrature.

use thiserror::Error;

use crate::gaussian::{
    eval_gaussian, linspace, trapezoid, GaussianError, GaussianMixture, WeightedGaussian,
};
use crate::network::{ConditionalMixtureCpd, CpdComponent, Factor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid target density: {0}")]
    InvalidTarget(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("gradient descent diverged (objective {0})")]
    FitDiverged(f64),
    #[error("function returned a non-finite value at {0:?}")]
    InvalidFunction(Vec<f64>),
    #[error("nonlinear conditional fits support 1 or 2 parents, got {0}")]
    UnsupportedArity(usize),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

pub type Result<T> = std::result::Result<T, FitError>;

/// A one-dimensional density to approximate.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetDensity {
    Uniform { lo: f64, hi: f64 },
    Triangular { lo: f64, mode: f64, hi: f64 },
    /// Piecewise-linear density through `(xs, ys)`, zero outside.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
    Mixture(GaussianMixture),
}

impl TargetDensity {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(FitError::InvalidTarget(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn triangular(lo: f64, mode: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo <= mode && mode <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(FitError::InvalidTarget(format!(
                "triangular needs lo <= mode <= hi and lo < hi, got ({lo}, {mode}, {hi})"
            )));
        }
        Ok(Self::Triangular { lo, mode, hi })
    }

    /// Tabulated density, rescaled so its trapezoid integral is one.
    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(FitError::InvalidTarget(
                "tabulated target needs at least 2 points and matching lengths".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) || xs.iter().any(|x| !x.is_finite()) {
            return Err(FitError::InvalidTarget("tabulated abscissae must strictly increase".into()));
        }
        if ys.iter().any(|y| !(*y >= 0.0 && y.is_finite())) {
            return Err(FitError::InvalidTarget("tabulated values must be nonnegative".into()));
        }
        let area: f64 = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum();
        if !(area > 0.0) {
            return Err(FitError::InvalidTarget("tabulated density has zero area".into()));
        }
        Ok(Self::Tabulated {
            xs,
            ys: ys.into_iter().map(|y| y / area).collect(),
        })
    }

    pub fn mixture(m: GaussianMixture) -> Result<Self> {
        if m.has_dirac() {
            return Err(FitError::InvalidTarget("mixture target cannot contain Diracs".into()));
        }
        Ok(Self::Mixture(m.normalize()?))
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Self::Uniform { lo, hi } => {
                if (*lo..=*hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Triangular { lo, mode, hi } => {
                let peak = 2.0 / (hi - lo);
                if x < *lo || x > *hi {
                    0.0
                } else if x < *mode {
                    peak * (x - lo) / (mode - lo)
                } else if x > *mode {
                    peak * (hi - x) / (hi - mode)
                } else {
                    peak
                }
            }
            Self::Tabulated { xs, ys } => {
                if x < xs[0] || x > xs[xs.len() - 1] {
                    return 0.0;
                }
                let k = xs.partition_point(|&p| p <= x).clamp(1, xs.len() - 1);
                let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                ys[k - 1] + t * (ys[k] - ys[k - 1])
            }
            Self::Mixture(m) => m.eval(x).unwrap_or(0.0),
        }
    }

    /// Interval carrying (essentially) all of the mass.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Uniform { lo, hi } | Self::Triangular { lo, hi, .. } => (*lo, *hi),
            Self::Tabulated { xs, .. } => (xs[0], xs[xs.len() - 1]),
            Self::Mixture(m) => m.envelope(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceRule {
    /// Every component uses this variance.
    Shared(f64),
    /// Standard deviation is this multiple of the mean spacing.
    SpacingMultiple(f64),
}

impl VarianceRule {
    pub fn variance(&self, spacing: f64) -> Result<f64> {
        let v = match *self {
            Self::Shared(v) => v,
            Self::SpacingMultiple(c) => {
                if !(c > 0.0) {
                    return Err(FitError::InvalidConfig(format!("spacing multiple must be positive, got {c}")));
                }
                (c * spacing).powi(2)
            }
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(FitError::InvalidConfig(format!("variance must be positive, got {v}")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_components: usize,
    pub support: (f64, f64),
    pub variance_rule: VarianceRule,
    pub refine_steps: usize,
    pub step_size: f64,
    pub quadrature_points: usize,
}

impl FitConfig {
    pub const DEFAULT_QUADRATURE_POINTS: usize = 2001;
    pub const DEFAULT_STEP_SIZE: f64 = 0.01;

    pub fn new(n_components: usize, support: (f64, f64), variance_rule: VarianceRule) -> Self {
        Self {
            n_components,
            support,
            variance_rule,
            refine_steps: 0,
            step_size: Self::DEFAULT_STEP_SIZE,
            quadrature_points: Self::DEFAULT_QUADRATURE_POINTS,
        }
    }

    pub fn with_refinement(mut self, steps: usize, step_size: f64) -> Self {
        self.refine_steps = steps;
        self.step_size = step_size;
        self
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support;
        if self.n_components == 0 {
            return Err(FitError::InvalidConfig("need at least one component".into()));
        }
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(FitError::InvalidConfig(format!("support must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if !(self.step_size > 0.0) {
            return Err(FitError::InvalidConfig("step size must be positive".into()));
        }
        if self.quadrature_points < 2 {
            return Err(FitError::InvalidConfig("need at least 2 quadrature points".into()));
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        (self.support.1 - self.support.0) / self.n_components as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub mixture: GaussianMixture,
    pub l1_error: f64,
    pub l2_error: f64,
    pub iterations_used: usize,
    /// Objective after each accepted descent step, starting with the
    /// initial value. Empty for an unrefined fit.
    pub objective_trace: Vec<f64>,
}

/// Range over which a fit with these components is scored: the config
/// support widened by five of the widest component's standard deviations.
fn error_range(config: &FitConfig, m: &GaussianMixture) -> (f64, f64) {
    let sd = m.iter().map(|c| c.variance.sqrt()).fold(0.0, f64::max);
    (config.support.0 - 5.0 * sd, config.support.1 + 5.0 * sd)
}

/// L1 and L2 distances between `mixture` and `target` over `support`.
pub fn fit_error(
    mixture: &GaussianMixture,
    target: &TargetDensity,
    support: (f64, f64),
    n_points: usize,
) -> Result<(f64, f64)> {
    let grid = linspace(support.0, support.1, n_points)?;
    let values = mixture.eval_grid(&grid)?;
    let (abs, sq): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .zip(&values)
        .map(|(&x, &m)| {
            let r = m - target.density(x);
            (r.abs(), r * r)
        })
        .unzip();
    let h = grid[1] - grid[0];
    Ok((trapezoid(&abs, h), trapezoid(&sq, h).sqrt()))
}

fn report(
    mixture: GaussianMixture,
    target: &TargetDensity,
    config: &FitConfig,
    iterations_used: usize,
    objective_trace: Vec<f64>,
) -> Result<FitReport> {
    let range = error_range(config, &mixture);
    let (l1_error, l2_error) = fit_error(&mixture, target, range, config.quadrature_points)?;
    Ok(FitReport {
        mixture,
        l1_error,
        l2_error,
        iterations_used,
        objective_trace,
    })
}

/// Equally weighted Gaussians at the cell centres of a uniform partition
/// of the support, optionally refined by [`gradient_refine`].
pub fn uniform_grid_fit(target: &TargetDensity, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    let m = config.n_components;
    let h = config.spacing();
    let variance = config.variance_rule.variance(h)?;
    let w = 1.0 / m as f64;
    let components = (1..=m)
        .map(|k| WeightedGaussian::new(w, config.support.0 + (k as f64 - 0.5) * h, variance))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let initial = GaussianMixture::new(components)?;
    if config.refine_steps == 0 {
        return report(initial, target, config, 0, Vec::new());
    }
    gradient_refine(&initial, target, config)
}

/// Discretized objective `Σ_g q_g (Σ_i w_i φ_i(x_g) − t(x_g))²` over fixed
/// component shapes `φ_i`, with trapezoid weights `q_g`.
#[derive(Debug, Clone)]
pub struct WeightObjective {
    basis: Vec<Vec<f64>>,
    target: Vec<f64>,
    quad: Vec<f64>,
}

impl WeightObjective {
    pub fn new(shapes: &GaussianMixture, target: &TargetDensity, grid: &[f64]) -> Result<Self> {
        if grid.len() < 2 {
            return Err(FitError::InvalidConfig("objective grid needs at least 2 points".into()));
        }
        let h = grid[1] - grid[0];
        let mut quad = vec![h; grid.len()];
        quad[0] *= 0.5;
        *quad.last_mut().unwrap() *= 0.5;
        let basis = shapes
            .iter()
            .map(|c| grid.iter().map(|&x| eval_gaussian(x, c.mean, c.variance)).collect())
            .collect::<std::result::Result<Vec<Vec<f64>>, _>>()?;
        Ok(Self {
            basis,
            target: grid.iter().map(|&x| target.density(x)).collect(),
            quad,
        })
    }

    fn residual(&self, weights: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.target.iter().map(|t| -t).collect();
        for (w, phi) in weights.iter().zip(&self.basis) {
            for (ri, p) in r.iter_mut().zip(phi) {
                *ri += w * p;
            }
        }
        r
    }

    pub fn value(&self, weights: &[f64]) -> f64 {
        self.residual(weights)
            .iter()
            .zip(&self.quad)
            .map(|(r, q)| q * r * r)
            .sum()
    }

    /// `∂/∂w_i = 2 Σ_g q_g r_g φ_i(x_g)`.
    pub fn gradient(&self, weights: &[f64]) -> Vec<f64> {
        let r = self.residual(weights);
        self.basis
            .iter()
            .map(|phi| {
                2.0 * phi
                    .iter()
                    .zip(&r)
                    .zip(&self.quad)
                    .map(|((p, r), q)| p * r * q)
                    .sum::<f64>()
            })
            .collect()
    }
}

const MAX_HALVINGS: usize = 30;
const MIN_IMPROVEMENT: f64 = 1e-12;

/// Clips to nonnegative and rescales to sum one.
fn project(weights: &mut [f64]) -> bool {
    for w in weights.iter_mut() {
        *w = w.max(0.0);
    }
    let s: f64 = weights.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return false;
    }
    for w in weights.iter_mut() {
        *w /= s;
    }
    true
}

/// Projected gradient descent on the weights of `initial`, keeping means
/// and variances fixed.
pub fn gradient_refine(
    initial: &GaussianMixture,
    target: &TargetDensity,
    config: &FitConfig,
) -> Result<FitReport> {
    config.validate()?;
    if config.refine_steps == 0 {
        return report(initial.clone(), target, config, 0, Vec::new());
    }
    let range = error_range(config, initial);
    let grid = linspace(range.0, range.1, config.quadrature_points)?;
    let objective = WeightObjective::new(initial, target, &grid)?;

    let mut weights: Vec<f64> = initial.iter().map(|c| c.weight).collect();
    let mut current = objective.value(&weights);
    if !current.is_finite() {
        return Err(FitError::FitDiverged(current));
    }
    let mut trace = vec![current];
    let mut iterations = 0;
    while iterations < config.refine_steps {
        let grad = objective.gradient(&weights);
        let mut step = config.step_size;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial: Vec<f64> = weights.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
            if project(&mut trial) {
                let value = objective.value(&trial);
                if !value.is_finite() {
                    return Err(FitError::FitDiverged(value));
                }
                if value <= current {
                    accepted = Some((trial, value));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, value)) = accepted else { break };
        iterations += 1;
        let improvement = current - value;
        weights = trial;
        current = value;
        trace.push(current);
        if improvement < MIN_IMPROVEMENT {
            break;
        }
    }

    let mixture = GaussianMixture::new(
        initial
            .iter()
            .zip(&weights)
            .map(|(c, &w)| c.with_weight(w))
            .collect(),
    )?;
    report(mixture, target, config, iterations, trace)
}

/// Spacing multiple minimizing the L1 error of an unrefined grid fit, by
/// golden-section search over `[lo, hi]`.
pub fn calibrate_min_l1(
    target: &TargetDensity,
    n_components: usize,
    support: (f64, f64),
    bracket: (f64, f64),
) -> Result<f64> {
    let l1 = |c: f64| -> Result<f64> {
        let cfg = FitConfig::new(n_components, support, VarianceRule::SpacingMultiple(c));
        Ok(uniform_grid_fit(target, &cfg)?.l1_error)
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = bracket;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (l1(c)?, l1(d)?);
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = l1(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = l1(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Spacing multiple in `[lo, hi]` whose unrefined grid fit has L1 error
/// `l1_target`, by bisection. The error must cross the target once on the
/// bracket.
pub fn calibrate_to_l1(
    target: &TargetDensity,
    n_components: usize,
    support: (f64, f64),
    l1_target: f64,
    bracket: (f64, f64),
) -> Result<f64> {
    let f = |c: f64| -> Result<f64> {
        let cfg = FitConfig::new(n_components, support, VarianceRule::SpacingMultiple(c));
        Ok(uniform_grid_fit(target, &cfg)?.l1_error - l1_target)
    };
    let (mut a, mut b) = bracket;
    let (fa, fb) = (f(a)?, f(b)?);
    if fa.signum() == fb.signum() {
        return Err(FitError::InvalidConfig(format!(
            "L1 error does not cross {l1_target} on [{a}, {b}]"
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if fm.signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Builds a separable mixture CPD for `x = g(u) + w`, `w ~ N(0, noise_variance)`,
/// on a tensor grid of parent cell centres.
///
/// Parent factor variances follow `parent_variance_rule` applied to each
/// axis's spacing; weights are proportional to cell volume and sum to one.
pub fn fit_conditional<G>(
    g: G,
    noise_variance: f64,
    parent_supports: &[(f64, f64)],
    grid_sizes: &[usize],
    parent_variance_rule: VarianceRule,
) -> Result<ConditionalMixtureCpd>
where
    G: Fn(&[f64]) -> f64,
{
    let n = parent_supports.len();
    if n == 0 || n > 2 {
        return Err(FitError::UnsupportedArity(n));
    }
    if grid_sizes.len() != n || grid_sizes.contains(&0) {
        return Err(FitError::InvalidConfig("need one positive grid size per parent".into()));
    }
    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
        return Err(FitError::InvalidConfig(format!("noise variance must be positive, got {noise_variance}")));
    }
    let mut axes = Vec::with_capacity(n);
    for (&(lo, hi), &size) in parent_supports.iter().zip(grid_sizes) {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(FitError::InvalidConfig(format!("parent support must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        let h = (hi - lo) / size as f64;
        let variance = parent_variance_rule.variance(h)?;
        let centres: Vec<f64> = (0..size).map(|k| lo + (k as f64 + 0.5) * h).collect();
        axes.push((centres, h, variance));
    }
    // every cell has the same volume on a uniform tensor grid
    let cells: usize = grid_sizes.iter().product();
    let weight = 1.0 / cells as f64;

    let mut components = Vec::with_capacity(cells);
    let mut point = vec![0.0; n];
    for flat in 0..cells {
        let mut rem = flat;
        for axis in (0..n).rev() {
            let size = grid_sizes[axis];
            point[axis] = axes[axis].0[rem % size];
            rem /= size;
        }
        let child_mean = g(&point);
        if !child_mean.is_finite() {
            return Err(FitError::InvalidFunction(point.clone()));
        }
        components.push(CpdComponent {
            weight,
            child: Factor {
                mean: child_mean,
                variance: noise_variance,
            },
            parents: point
                .iter()
                .zip(&axes)
                .map(|(&mean, axis)| Factor {
                    mean,
                    variance: axis.2,
                })
                .collect(),
        });
    }
    ConditionalMixtureCpd::new(components).map_err(FitError::InvalidConfig)
}
