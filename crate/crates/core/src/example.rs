//! The two-parent sum network: `X, Y ~ U[0, 1]` approximated by Gaussian
//! sums, `Z = X + Y + w` with `w ~ N(0, 0.01)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erf;
use thiserror::Error;

use crate::fitting::{
    calibrate_min_l1, calibrate_to_l1, uniform_grid_fit, FitConfig, FitError, FitReport,
    TargetDensity, VarianceRule,
};
use crate::gaussian::{linspace, trapezoid, GaussianError, GaussianMixture};
use crate::network::{LinearCpd, Network, NetworkError, NodeModel, NodeSpec};
use crate::propagation::{propagate, InferenceOptions, InferenceResult, PropagationError};
use crate::Evidence;

pub const PRIOR_COMPONENTS: usize = 20;
pub const NOISE_VARIANCE: f64 = 0.01;
/// L1 error the prior fit is calibrated to.
pub const PRIOR_L1_TARGET: f64 = 0.09;
/// Grid shared by all exported curves.
pub const PLOT_RANGE: (f64, f64) = (-0.25, 2.25);
pub const PLOT_POINTS: usize = 501;
/// Points on `[0, 1]` for the posterior reference.
pub const POSTERIOR_POINTS: usize = 2001;

#[derive(Debug, Error)]
pub enum ExampleError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

pub type Result<T> = std::result::Result<T, ExampleError>;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z * FRAC_1_SQRT_2))
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `E[max(x − W, 0)]` for `W ~ N(0, s²)`.
fn smoothed_ramp(x: f64, s: f64) -> f64 {
    x * std_normal_cdf(x / s) + s * std_normal_pdf(x / s)
}

/// Density of `U[0,1] + U[0,1] + N(0, variance)`.
pub fn triangle_convolved(z: f64, variance: f64) -> f64 {
    let s = variance.sqrt();
    smoothed_ramp(z, s) - 2.0 * smoothed_ramp(z - 1.0, s) + smoothed_ramp(z - 2.0, s)
}

/// Density of `U[lo,hi] + N(0, variance)`.
pub fn uniform_convolved(z: f64, lo: f64, hi: f64, variance: f64) -> f64 {
    let s = variance.sqrt();
    (std_normal_cdf((z - lo) / s) - std_normal_cdf((z - hi) / s)) / (hi - lo)
}

/// Posterior of `X` given `Z = z` under exact uniform priors, tabulated on
/// `POSTERIOR_POINTS` points of `[0, 1]` and normalized there.
pub fn exact_posterior_x(z: f64, variance: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let xs = linspace(0.0, 1.0, POSTERIOR_POINTS)?;
    let h = xs[1] - xs[0];
    let s = variance.sqrt();
    // ∫₀¹ N(z; variance, x + y) dy in closed form
    let unnorm: Vec<f64> = xs
        .iter()
        .map(|&x| std_normal_cdf((z - x) / s) - std_normal_cdf((z - x - 1.0) / s))
        .collect();
    let total = trapezoid(&unnorm, h);
    Ok((xs, unnorm.into_iter().map(|p| p / total).collect()))
}

/// L1 distance between `m` and a reference density on the plot grid.
pub fn l1_against(m: &GaussianMixture, reference: impl Fn(f64) -> f64) -> Result<f64> {
    let xs = linspace(PLOT_RANGE.0, PLOT_RANGE.1, PLOT_POINTS)?;
    let diffs = xs
        .iter()
        .map(|&x| Ok((m.eval(x)? - reference(x)).abs()))
        .collect::<std::result::Result<Vec<_>, GaussianError>>()?;
    Ok(trapezoid(&diffs, xs[1] - xs[0]))
}

/// Spacing multiple for the prior fit: the value on the narrow side of the
/// L1 minimum where the unrefined fit has L1 error `PRIOR_L1_TARGET`.
pub fn prior_spacing_multiple() -> Result<f64> {
    let target = TargetDensity::uniform(0.0, 1.0)?;
    let best = calibrate_min_l1(&target, PRIOR_COMPONENTS, (0.0, 1.0), (0.2, 2.0))?;
    Ok(calibrate_to_l1(&target, PRIOR_COMPONENTS, (0.0, 1.0), PRIOR_L1_TARGET, (0.1, best))?)
}

pub fn prior_fit(spacing_multiple: f64) -> Result<FitReport> {
    let target = TargetDensity::uniform(0.0, 1.0)?;
    let config = FitConfig::new(
        PRIOR_COMPONENTS,
        (0.0, 1.0),
        VarianceRule::SpacingMultiple(spacing_multiple),
    );
    Ok(uniform_grid_fit(&target, &config)?)
}

pub fn sum_network(prior: &GaussianMixture) -> Result<Network> {
    let cpd = LinearCpd::new(vec![1.0, 1.0], NOISE_VARIANCE).map_err(|reason| NetworkError::InvalidCpd {
        node: "Z".into(),
        reason,
    })?;
    Ok(Network::build(vec![
        NodeSpec::root("X", prior.clone())?,
        NodeSpec::root("Y", prior.clone())?,
        NodeSpec::child("Z", &["X", "Y"], NodeModel::Linear(cpd))?,
    ])?)
}

#[derive(Debug, Clone)]
pub struct ExampleRun {
    pub spacing_multiple: f64,
    pub prior: FitReport,
    pub no_evidence: InferenceResult,
    pub given_x: InferenceResult,
    pub given_z: InferenceResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleMetrics {
    pub prior_l1: f64,
    pub z_no_evidence_l1: f64,
    pub z_given_x_l1: f64,
    pub y_unchanged_given_x: bool,
    pub x_given_z_mean: f64,
    pub x_given_z_std: f64,
    pub x_given_z_l1: f64,
}

pub const X_EVIDENCE: f64 = 1.0;
pub const Z_EVIDENCE: f64 = 2.0;

pub fn run() -> Result<ExampleRun> {
    let spacing_multiple = prior_spacing_multiple()?;
    let prior = prior_fit(spacing_multiple)?;
    let net = sum_network(&prior.mixture)?;
    let options = InferenceOptions::default();
    let no_evidence = propagate(&net, &Evidence::new(), &options)?;
    let given_x = propagate(&net, &Evidence::new().with("X", X_EVIDENCE)?, &options)?;
    let given_z = propagate(&net, &Evidence::new().with("Z", Z_EVIDENCE)?, &options)?;
    Ok(ExampleRun {
        spacing_multiple,
        prior,
        no_evidence,
        given_x,
        given_z,
    })
}

fn belief<'a>(r: &'a InferenceResult, node: &str) -> &'a GaussianMixture {
    r.belief(node).expect("sum network has nodes X, Y and Z")
}

impl ExampleRun {
    pub fn metrics(&self) -> Result<ExampleMetrics> {
        let z0 = belief(&self.no_evidence, "Z");
        let z_no_evidence_l1 = l1_against(z0, |z| triangle_convolved(z, NOISE_VARIANCE))?;
        let z1 = belief(&self.given_x, "Z");
        let z_given_x_l1 = l1_against(
            z1,
            |z| uniform_convolved(z, X_EVIDENCE, X_EVIDENCE + 1.0, NOISE_VARIANCE),
        )?;
        let y_unchanged_given_x = belief(&self.given_x, "Y") == &self.prior.mixture;

        let x2 = belief(&self.given_z, "X");
        let (x_given_z_mean, var) = x2.moments()?;
        // reference is zero off [0, 1], so the belief's mass there adds directly
        let (xs, reference) = exact_posterior_x(Z_EVIDENCE, NOISE_VARIANCE)?;
        let fitted = x2.eval_grid(&xs)?;
        let h = xs[1] - xs[0];
        let inside_diff: Vec<f64> = fitted.iter().zip(&reference).map(|(a, b)| (a - b).abs()).collect();
        let inside_mass = trapezoid(&fitted, h);
        let x_given_z_l1 = trapezoid(&inside_diff, h) + (1.0 - inside_mass).max(0.0);

        Ok(ExampleMetrics {
            prior_l1: self.prior.l1_error,
            z_no_evidence_l1,
            z_given_x_l1,
            y_unchanged_given_x,
            x_given_z_mean,
            x_given_z_std: var.sqrt(),
            x_given_z_l1,
        })
    }

    /// Curves for export as `(file stem, node, belief)`.
    pub fn curves(&self) -> Vec<(&'static str, &'static str, &GaussianMixture)> {
        vec![
            ("prior_x", "X", &self.prior.mixture),
            ("z_no_evidence", "Z", belief(&self.no_evidence, "Z")),
            ("z_given_x", "Z", belief(&self.given_x, "Z")),
            ("y_given_x", "Y", belief(&self.given_x, "Y")),
            ("x_given_z", "X", belief(&self.given_z, "X")),
            ("y_given_z", "Y", belief(&self.given_z, "Y")),
        ]
    }
}
