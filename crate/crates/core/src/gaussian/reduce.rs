//! Pruning and moment-matched merging of mixture components.

use super::{linspace, trapezoid, GaussianMixture, WeightedGaussian};

/// Bounds on mixture size applied after each message or belief is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionPolicy {
    /// Components whose normalized weight falls below this are dropped.
    pub prune_epsilon: f64,
    /// Upper bound on the component count; `None` is unbounded.
    pub max_components: Option<usize>,
}

impl ReductionPolicy {
    pub const DEFAULT_PRUNE_EPSILON: f64 = 1e-9;
    pub const DEFAULT_MAX_COMPONENTS: usize = 512;

    pub fn identity() -> Self {
        Self {
            prune_epsilon: 0.0,
            max_components: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.prune_epsilon == 0.0 && self.max_components.is_none()
    }
}

impl Default for ReductionPolicy {
    fn default() -> Self {
        Self {
            prune_epsilon: Self::DEFAULT_PRUNE_EPSILON,
            max_components: Some(Self::DEFAULT_MAX_COMPONENTS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub mixture: GaussianMixture,
    pub pruned: usize,
    pub merged: usize,
    /// Quadrature estimate of the L1 change; `None` when Dirac components
    /// make the densities ungriddable.
    pub l1_change: Option<f64>,
}

const L1_POINTS: usize = 4001;

/// Distance between two components: mean separation in units of the pooled
/// standard deviation.
fn merge_distance(a: &WeightedGaussian, b: &WeightedGaussian) -> f64 {
    let dm = (a.mean - b.mean).abs();
    let pooled = a.variance + b.variance;
    if pooled == 0.0 {
        if dm == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        dm / pooled.sqrt()
    }
}

/// Single component with the same total weight, mean and variance.
fn moment_match(a: &WeightedGaussian, b: &WeightedGaussian) -> WeightedGaussian {
    let w = a.weight + b.weight;
    if w == 0.0 {
        return WeightedGaussian { weight: 0.0, ..*a };
    }
    let (fa, fb) = (a.weight / w, b.weight / w);
    let mean = fa * a.mean + fb * b.mean;
    let variance = fa * a.variance + fb * b.variance + fa * fb * (a.mean - b.mean).powi(2);
    WeightedGaussian {
        weight: w,
        mean,
        variance,
    }
}

pub(super) fn mixture_reduce(m: &GaussianMixture, policy: &ReductionPolicy) -> Reduction {
    let total = m.total_weight();
    let mut comps: Vec<WeightedGaussian> = if policy.prune_epsilon > 0.0 && total > 0.0 {
        let threshold = policy.prune_epsilon * total;
        m.iter().copied().filter(|c| c.weight >= threshold).collect()
    } else {
        m.components().to_vec()
    };
    if comps.is_empty() {
        // keep the heaviest component rather than emptying the mixture
        let heaviest = m
            .iter()
            .copied()
            .reduce(|a, b| if b.weight > a.weight { b } else { a })
            .expect("mixtures are nonempty");
        comps.push(heaviest);
    }
    let pruned = m.len() - comps.len();

    let target = policy.max_components.unwrap_or(usize::MAX).max(1);
    let merged = if comps.len() > target {
        greedy_merge(&mut comps, target)
    } else {
        0
    };

    if pruned == 0 && merged == 0 {
        return Reduction {
            mixture: m.clone(),
            pruned,
            merged,
            l1_change: Some(0.0),
        };
    }

    let kept: f64 = comps.iter().map(|c| c.weight).sum();
    if kept > 0.0 && pruned > 0 {
        let scale = total / kept;
        for c in &mut comps {
            c.weight *= scale;
        }
    }
    let mixture = GaussianMixture { components: comps };
    let l1_change = l1_between(m, &mixture);
    Reduction {
        mixture,
        pruned,
        merged,
        l1_change,
    }
}

/// Repeatedly merges the closest pair until at most `target` remain. Ties go
/// to the lexicographically first index pair. Returns the number of merges.
fn greedy_merge(comps: &mut Vec<WeightedGaussian>, target: usize) -> usize {
    let n = comps.len();
    let mut alive = vec![true; n];
    // best[i] = (distance, partner) over all live j != i, smallest j on ties
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n];
    let row_best = |comps: &[WeightedGaussian], alive: &[bool], i: usize| {
        let mut out = (f64::INFINITY, usize::MAX);
        for j in 0..comps.len() {
            if j != i && alive[j] {
                let d = merge_distance(&comps[i], &comps[j]);
                if d < out.0 || out.1 == usize::MAX {
                    out = (d, j);
                }
            }
        }
        out
    };
    for i in 0..n {
        best[i] = row_best(comps, &alive, i);
    }

    let mut live = n;
    let mut merges = 0;
    while live > target {
        let mut choice: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] || best[i].1 == usize::MAX {
                continue;
            }
            let (d, j) = best[i];
            let pair = (i.min(j), i.max(j));
            let better = match choice {
                None => true,
                Some((bd, a, b)) => d < bd || (d == bd && pair < (a, b)),
            };
            if better {
                choice = Some((d, pair.0, pair.1));
            }
        }
        let Some((_, a, b)) = choice else { break };
        comps[a] = moment_match(&comps[a], &comps[b]);
        alive[b] = false;
        live -= 1;
        merges += 1;

        for i in 0..n {
            if !alive[i] {
                continue;
            }
            if i == a || best[i].1 == a || best[i].1 == b {
                best[i] = row_best(comps, &alive, i);
            } else {
                let d = merge_distance(&comps[i], &comps[a]);
                if d < best[i].0 || (d == best[i].0 && a < best[i].1) {
                    best[i] = (d, a);
                }
            }
        }
    }

    let mut idx = 0;
    comps.retain(|_| {
        let keep = alive[idx];
        idx += 1;
        keep
    });
    merges
}

fn l1_between(a: &GaussianMixture, b: &GaussianMixture) -> Option<f64> {
    if a.has_dirac() || b.has_dirac() {
        return None;
    }
    let (lo_a, hi_a) = a.envelope(10.0);
    let (lo_b, hi_b) = b.envelope(10.0);
    let grid = linspace(lo_a.min(lo_b), hi_a.max(hi_b), L1_POINTS).ok()?;
    let diffs: Vec<f64> = grid
        .iter()
        .map(|&x| Some((a.eval(x).ok()? - b.eval(x).ok()?).abs()))
        .collect::<Option<_>>()?;
    Some(trapezoid(&diffs, grid[1] - grid[0]))
}
