//! Test-only oracles: random polytrees, grid variable elimination and
//! nested-sum weight formulas. None of this goes through message passing.
#![allow(dead_code)]

use std::f64::consts::PI;

use gmbn::network::{ConditionalMixtureCpd, CpdComponent, Factor, LinearCpd};
use gmbn::{Evidence, GaussianMixture, Network, NodeModel, NodeSpec, WeightedGaussian};
use rand::Rng;

pub fn npdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_mixture<R: Rng>(rng: &mut R, max_components: usize) -> GaussianMixture {
    let k = rng.gen_range(1..=max_components);
    let comps = (0..k)
        .map(|_| {
            WeightedGaussian::new(
                rng.gen_range(0.2..1.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.2..1.0),
            )
            .unwrap()
        })
        .collect();
    GaussianMixture::new(comps).unwrap().normalize().unwrap()
}

pub fn random_mixture_cpd<R: Rng>(rng: &mut R, arity: usize, max_components: usize) -> ConditionalMixtureCpd {
    let k = rng.gen_range(1..=max_components);
    let comps = (0..k)
        .map(|_| CpdComponent {
            weight: rng.gen_range(0.2..1.0),
            child: Factor {
                mean: rng.gen_range(-2.0..2.0),
                variance: rng.gen_range(0.2..1.0),
            },
            parents: (0..arity)
                .map(|_| Factor {
                    mean: rng.gen_range(-2.0..2.0),
                    variance: rng.gen_range(0.2..1.0),
                })
                .collect(),
        })
        .collect();
    ConditionalMixtureCpd::new(comps).unwrap()
}

pub fn random_linear_cpd<R: Rng>(rng: &mut R, arity: usize) -> LinearCpd {
    let coeffs = (0..arity)
        .map(|_| {
            let b: f64 = rng.gen_range(0.5..1.5);
            if rng.gen_bool(0.5) {
                b
            } else {
                -b
            }
        })
        .collect();
    LinearCpd::new(coeffs, rng.gen_range(0.2..1.0)).unwrap()
}

pub fn node_name(i: usize) -> String {
    format!("N{i}")
}

/// Random polytree on `n` nodes named `N0..`: each node after the first
/// attaches to an earlier one with a random edge direction.
pub fn random_polytree<R: Rng>(rng: &mut R, n: usize, max_parents: usize, max_components: usize) -> Network {
    let parents = loop {
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 1..n {
            let j = rng.gen_range(0..i);
            if rng.gen_bool(0.5) {
                parents[i].push(j);
            } else {
                parents[j].push(i);
            }
        }
        if parents.iter().all(|p| p.len() <= max_parents) {
            break parents;
        }
    };
    let specs = (0..n)
        .map(|i| {
            let name = node_name(i);
            let ps: Vec<String> = parents[i].iter().map(|&p| node_name(p)).collect();
            let ps: Vec<&str> = ps.iter().map(String::as_str).collect();
            if ps.is_empty() {
                NodeSpec::root(&name, random_mixture(rng, max_components)).unwrap()
            } else if rng.gen_bool(0.5) {
                NodeSpec::child(&name, &ps, NodeModel::Linear(random_linear_cpd(rng, ps.len()))).unwrap()
            } else {
                let cpd = random_mixture_cpd(rng, ps.len(), max_components);
                NodeSpec::child(&name, &ps, NodeModel::MixtureCpd(cpd)).unwrap()
            }
        })
        .collect();
    Network::build(specs).unwrap()
}

pub fn descendants(net: &Network, v: usize) -> Vec<usize> {
    let mut seen = vec![false; net.len()];
    let mut stack = net.children_of(v).to_vec();
    while let Some(u) = stack.pop() {
        if !seen[u] {
            seen[u] = true;
            stack.extend_from_slice(net.children_of(u));
        }
    }
    (0..net.len()).filter(|&u| seen[u]).collect()
}

fn ancestral_set(net: &Network, seeds: &[usize]) -> Vec<bool> {
    let mut keep = vec![false; net.len()];
    let mut stack = seeds.to_vec();
    while let Some(u) = stack.pop() {
        if !keep[u] {
            keep[u] = true;
            stack.extend_from_slice(net.parents_of(u));
        }
    }
    keep
}

/// Interval containing every component mean of the marginal, and the largest
/// component standard deviation.
fn marginal_bounds(net: &Network) -> Vec<(f64, f64, f64)> {
    let n = net.len();
    let mut out: Vec<Option<(f64, f64, f64)>> = vec![None; n];
    while out.iter().any(Option::is_none) {
        for v in 0..n {
            if out[v].is_some() || net.parents_of(v).iter().any(|&p| out[p].is_none()) {
                continue;
            }
            out[v] = Some(match &net.node(v).model {
                NodeModel::Prior(m) => (
                    m.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min),
                    m.iter().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max),
                    m.iter().map(|c| c.variance.sqrt()).fold(0.0, f64::max),
                ),
                NodeModel::MixtureCpd(cpd) => (
                    cpd.components().iter().map(|c| c.child.mean).fold(f64::INFINITY, f64::min),
                    cpd.components().iter().map(|c| c.child.mean).fold(f64::NEG_INFINITY, f64::max),
                    cpd.components().iter().map(|c| c.child.variance.sqrt()).fold(0.0, f64::max),
                ),
                NodeModel::Linear(cpd) => {
                    let (mut lo, mut hi, mut var) = (0.0, 0.0, cpd.noise_variance());
                    for (&p, &b) in net.parents_of(v).iter().zip(cpd.coefficients()) {
                        let (plo, phi, psd) = out[p].unwrap();
                        lo += (b * plo).min(b * phi);
                        hi += (b * plo).max(b * phi);
                        var += b * b * psd * psd;
                    }
                    (lo, hi, var.sqrt())
                }
            });
        }
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Narrowest feature of any factor along any axis.
fn smallest_width(net: &Network) -> f64 {
    let mut w = f64::INFINITY;
    for spec in net.nodes() {
        match &spec.model {
            NodeModel::Prior(m) => m.iter().for_each(|c| w = w.min(c.variance.sqrt())),
            NodeModel::MixtureCpd(cpd) => {
                for c in cpd.components() {
                    w = w.min(c.child.variance.sqrt());
                    c.parents.iter().for_each(|f| w = w.min(f.variance.sqrt()));
                }
            }
            NodeModel::Linear(cpd) => {
                let sd = cpd.noise_variance().sqrt();
                w = w.min(sd);
                cpd.coefficients().iter().for_each(|b| w = w.min(sd / b.abs()));
            }
        }
    }
    w
}

struct Table {
    vars: Vec<usize>,
    data: Vec<f64>,
}

fn for_each_index(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    if sizes.contains(&0) {
        return;
    }
    let mut idx = vec![0; sizes.len()];
    loop {
        f(&idx);
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Per-variable strides of `vars` laid out row-major, expressed against the
/// positions of `all`.
fn strides(vars: &[usize], sizes: &[usize], all: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(vars.len());
    let mut stride = 1;
    for &v in vars.iter().rev() {
        out.push((all.iter().position(|&u| u == v).unwrap(), stride));
        stride *= sizes[v];
    }
    out
}

fn offset(strides: &[(usize, usize)], assignment: &[usize]) -> usize {
    strides.iter().map(|&(pos, s)| assignment[pos] * s).sum()
}

/// Multiplies every table mentioning `v` and sums `v` out; quadrature
/// weights are already folded into each variable's own factor.
fn eliminate(tables: Vec<Table>, v: usize, sizes: &[usize]) -> Vec<Table> {
    let (touching, mut rest): (Vec<Table>, Vec<Table>) = tables.into_iter().partition(|t| t.vars.contains(&v));
    let mut scope: Vec<usize> = touching.iter().flat_map(|t| t.vars.iter().copied()).filter(|&u| u != v).collect();
    scope.sort_unstable();
    scope.dedup();
    let mut all = scope.clone();
    all.push(v);
    let all_sizes: Vec<usize> = all.iter().map(|&u| sizes[u]).collect();
    let table_strides: Vec<Vec<(usize, usize)>> = touching.iter().map(|t| strides(&t.vars, sizes, &all)).collect();
    let out_strides = strides(&scope, sizes, &all);
    let out_len: usize = scope.iter().map(|&u| sizes[u]).product();
    let mut data = vec![0.0; out_len];
    for_each_index(&all_sizes, |a| {
        let mut prod = 1.0;
        for (t, st) in touching.iter().zip(&table_strides) {
            prod *= t.data[offset(st, a)];
        }
        data[offset(&out_strides, a)] += prod;
    });
    rest.push(Table { vars: scope, data });
    rest
}

/// Posterior density of `query` at `xs` by variable elimination on
/// trapezoid grids.
///
/// Nodes outside the ancestral set of the query and the evidence are
/// dropped: nothing below them is observed, so they carry no information
/// upward.
pub fn grid_posterior(net: &Network, evidence: &Evidence, query: usize, xs: &[f64]) -> Vec<f64> {
    let n = net.len();
    let observed: Vec<Option<f64>> = (0..n).map(|v| evidence.get(net.node(v).id.as_str())).collect();
    let mut seeds = vec![query];
    seeds.extend((0..n).filter(|&v| observed[v].is_some()));
    let keep = ancestral_set(net, &seeds);

    let bounds = marginal_bounds(net);
    let h_target = 0.3 * smallest_width(net);
    let mut points: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut quad: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut integration_len = 0;
    for v in (0..n).filter(|&v| keep[v]) {
        if let Some(x0) = observed[v] {
            points[v] = vec![x0];
            quad[v] = vec![1.0];
            continue;
        }
        let (lo, hi, sd) = bounds[v];
        let (a, b) = (lo - 10.0 * sd, hi + 10.0 * sd);
        let m = ((b - a) / h_target).ceil() as usize + 1;
        let h = (b - a) / (m - 1) as f64;
        points[v] = (0..m).map(|k| a + k as f64 * h).collect();
        quad[v] = (0..m).map(|k| if k == 0 || k == m - 1 { 0.5 * h } else { h }).collect();
        if v == query {
            // the query keeps raw values: its integration grid first, then `xs`
            integration_len = m;
            points[v].extend_from_slice(xs);
            quad[v] = vec![1.0; points[v].len()];
        }
    }
    let sizes: Vec<usize> = points.iter().map(Vec::len).collect();

    let mut tables = Vec::new();
    for v in (0..n).filter(|&v| keep[v]) {
        let mut vars = vec![v];
        vars.extend_from_slice(net.parents_of(v));
        let dims: Vec<usize> = vars.iter().map(|&u| sizes[u]).collect();
        let mut data = Vec::with_capacity(dims.iter().product());
        let factor = factor_fn(net, v);
        let mut u = vec![0.0; vars.len() - 1];
        for_each_index(&dims, |a| {
            for (slot, (&p, &k)) in u.iter_mut().zip(vars[1..].iter().zip(&a[1..])) {
                *slot = points[p][k];
            }
            data.push(factor(points[v][a[0]], &u) * quad[v][a[0]]);
        });
        tables.push(Table { vars, data });
    }

    let mut remaining: Vec<usize> = (0..n).filter(|&v| keep[v] && v != query).collect();
    while !remaining.is_empty() {
        // cheapest next elimination
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut scope: Vec<usize> =
                    tables.iter().filter(|t| t.vars.contains(&v)).flat_map(|t| t.vars.clone()).collect();
                scope.sort_unstable();
                scope.dedup();
                (i, scope.iter().map(|&u| sizes[u]).product::<usize>())
            })
            .min_by_key(|&(_, cost)| cost)
            .unwrap();
        let v = remaining.remove(pos);
        tables = eliminate(tables, v, &sizes);
    }

    let mut values = vec![1.0; sizes[query]];
    for t in &tables {
        if t.vars.is_empty() {
            continue;
        }
        assert_eq!(t.vars, vec![query]);
        for (val, f) in values.iter_mut().zip(&t.data) {
            *val *= f;
        }
    }
    let grid = &points[query][..integration_len];
    let h = grid[1] - grid[0];
    let body = &values[..integration_len];
    let z = h * (body.iter().sum::<f64>() - 0.5 * (body[0] + body[integration_len - 1]));
    values[integration_len..].iter().map(|v| v / z).collect()
}

fn factor_fn(net: &Network, v: usize) -> Box<dyn Fn(f64, &[f64]) -> f64 + '_> {
    match &net.node(v).model {
        NodeModel::Prior(m) => Box::new(move |x, _| m.iter().map(|c| c.weight * npdf(x, c.mean, c.variance)).sum()),
        NodeModel::Linear(cpd) => Box::new(move |x, u| {
            let mean: f64 = cpd.coefficients().iter().zip(u).map(|(b, u)| b * u).sum();
            npdf(x, mean, cpd.noise_variance())
        }),
        NodeModel::MixtureCpd(cpd) => Box::new(move |x, u| {
            cpd.components()
                .iter()
                .map(|c| {
                    c.weight
                        * npdf(x, c.child.mean, c.child.variance)
                        * c.parents.iter().zip(u).map(|(f, &u)| npdf(u, f.mean, f.variance)).product::<f64>()
                })
                .sum()
        }),
    }
}

fn tuples(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for_each_index(sizes, |a| out.push(a.to_vec()));
    out
}

/// γ_j as an explicit sum over every tuple of parent components.
pub fn gamma_nested(cpd: &ConditionalMixtureCpd, pis: &[GaussianMixture]) -> Vec<f64> {
    let sizes: Vec<usize> = pis.iter().map(GaussianMixture::len).collect();
    let all = tuples(&sizes);
    cpd.components()
        .iter()
        .map(|c| {
            all.iter()
                .map(|t| {
                    let mut term = c.weight;
                    for ((f, pi), &k) in c.parents.iter().zip(pis).zip(t) {
                        let a = pi.components()[k];
                        term *= a.weight * npdf(f.mean, a.mean, f.variance + a.variance);
                    }
                    term
                })
                .sum()
        })
        .collect()
}

/// ψ_j as an explicit sum over every λ component and co-parent tuple.
pub fn psi_nested(
    cpd: &ConditionalMixtureCpd,
    lambda: &GaussianMixture,
    other_pis: &[GaussianMixture],
    target: usize,
) -> Vec<f64> {
    let mut sizes = vec![lambda.len()];
    sizes.extend(other_pis.iter().map(GaussianMixture::len));
    let all = tuples(&sizes);
    cpd.components()
        .iter()
        .map(|c| {
            let others: Vec<&Factor> =
                c.parents.iter().enumerate().filter(|(k, _)| *k != target).map(|(_, f)| f).collect();
            all.iter()
                .map(|t| {
                    let l = lambda.components()[t[0]];
                    let mut term = c.weight * l.weight * npdf(c.child.mean, l.mean, c.child.variance + l.variance);
                    for ((f, pi), &k) in others.iter().zip(other_pis).zip(&t[1..]) {
                        let a = pi.components()[k];
                        term *= a.weight * npdf(f.mean, a.mean, f.variance + a.variance);
                    }
                    term
                })
                .sum()
        })
        .collect()
}
