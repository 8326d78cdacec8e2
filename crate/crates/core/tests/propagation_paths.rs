mod common;

use common::{node_name, npdf, random_mixture, random_polytree, rel_err};
use gmbn::fitting::{fit_conditional, VarianceRule};
use gmbn::gaussian::{linspace, trapezoid};
use gmbn::network::{ConditionalMixtureCpd, LinearCpd};
use gmbn::propagation::{
    compute_pi_linear, compute_pi_mixture, lambda_message_to_parent_linear, propagate_with_pivots,
    PropagationError,
};
use gmbn::{
    propagate, Evidence, GaussianMixture, InferenceOptions, Likelihood, Network, NodeModel, NodeSpec,
    ReductionPolicy, WeightedGaussian,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad_grid(m: &GaussianMixture) -> (Vec<f64>, f64) {
    let (lo, hi) = m.envelope(10.0);
    let xs = linspace(lo, hi, 1201).unwrap();
    let h = xs[1] - xs[0];
    (xs, h)
}

/// Asserts `a / b` is the same constant at every sample, to `tol`.
fn assert_proportional(a: &[f64], b: &[f64], tol: f64) {
    let ratios: Vec<f64> = a.iter().zip(b).map(|(a, b)| a / b).collect();
    for r in &ratios {
        assert!(rel_err(*r, ratios[0]) < tol, "ratios {ratios:?}");
    }
}

#[test]
fn linear_pi_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let p1 = random_mixture(&mut rng, 3);
        let p2 = random_mixture(&mut rng, 3);
        let cpd = LinearCpd::new(vec![rng.gen_range(0.5..1.5), -rng.gen_range(0.5..1.5)], rng.gen_range(0.2..1.0))
            .unwrap();
        let pi = compute_pi_linear(&cpd, &[p1.clone(), p2.clone()], &ReductionPolicy::identity()).unwrap();
        let (g1, h1) = quad_grid(&p1);
        let (g2, h2) = quad_grid(&p2);
        let w1: Vec<f64> = g1.iter().map(|&u| p1.eval(u).unwrap()).collect();
        let w2: Vec<f64> = g2.iter().map(|&u| p2.eval(u).unwrap()).collect();
        let b = cpd.coefficients();
        for x in [-3.0, -1.0, 0.0, 0.7, 2.5] {
            let mut total = 0.0;
            for (u1, a) in g1.iter().zip(&w1) {
                for (u2, c) in g2.iter().zip(&w2) {
                    total += a * c * npdf(x, b[0] * u1 + b[1] * u2, cpd.noise_variance());
                }
            }
            let q = total * h1 * h2;
            assert!((pi.eval(x).unwrap() - q).abs() < 1e-9, "x = {x}");
        }
    }
}

#[test]
fn linear_lambda_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let lambda = random_mixture(&mut rng, 3);
        let other = random_mixture(&mut rng, 3);
        let cpd = LinearCpd::new(vec![rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)], rng.gen_range(0.2..1.0))
            .unwrap();
        let msg = lambda_message_to_parent_linear(
            &cpd,
            &Likelihood::Mixture(lambda.clone()),
            &[other.clone()],
            0,
            &ReductionPolicy::identity(),
        )
        .unwrap();
        let msg = msg.as_mixture().unwrap();
        assert!((msg.max_weight() - 1.0).abs() < 1e-15);
        let (gx, hx) = quad_grid(&lambda);
        let (gu, hu) = quad_grid(&other);
        let b = cpd.coefficients();
        let us = [-1.0, 0.0, 0.5, 1.5];
        let oracle: Vec<f64> = us
            .iter()
            .map(|&u1| {
                let mut total = 0.0;
                for &x in &gx {
                    let lx = lambda.eval(x).unwrap();
                    for &u2 in &gu {
                        total += lx * other.eval(u2).unwrap() * npdf(x, b[0] * u1 + b[1] * u2, cpd.noise_variance());
                    }
                }
                total * hx * hu
            })
            .collect();
        let ours: Vec<f64> = us.iter().map(|&u| msg.eval(u).unwrap()).collect();
        assert_proportional(&ours, &oracle, 1e-8);
    }
}

#[test]
fn mixture_pi_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let parent = random_mixture(&mut rng, 3);
        let cpd = common::random_mixture_cpd(&mut rng, 1, 3);
        let pi = compute_pi_mixture(&cpd, &[parent.clone()], &ReductionPolicy::identity()).unwrap();
        let (gu, hu) = quad_grid(&parent);
        let xs = [-2.0, -0.5, 0.0, 1.0, 2.0];
        let oracle: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let vals: Vec<f64> = gu.iter().map(|&u| cpd.density(x, &[u]) * parent.eval(u).unwrap()).collect();
                trapezoid(&vals, hu)
            })
            .collect();
        let ours: Vec<f64> = xs.iter().map(|&x| pi.eval(x).unwrap()).collect();
        assert_proportional(&ours, &oracle, 1e-9);
    }
}

fn l1_between(a: &GaussianMixture, b: &GaussianMixture) -> f64 {
    let (lo1, hi1) = a.envelope(8.0);
    let (lo2, hi2) = b.envelope(8.0);
    let xs = linspace(lo1.min(lo2), hi1.max(hi2), 8001).unwrap();
    let d: Vec<f64> = xs.iter().map(|&x| (a.eval(x).unwrap() - b.eval(x).unwrap()).abs()).collect();
    trapezoid(&d, xs[1] - xs[0])
}

#[test]
fn conditional_fit_conditions_on_a_dirac_parent() {
    let g = |u: &[f64]| (3.0 * u[0]).sin();
    let noise = 0.01;
    let cpd = fit_conditional(g, noise, &[(0.0, 2.0)], &[120], VarianceRule::SpacingMultiple(0.5)).unwrap();
    for u0 in [0.3, 0.9, 1.6] {
        let pi = compute_pi_mixture(&cpd, &[GaussianMixture::dirac(u0)], &ReductionPolicy::identity()).unwrap();
        let exact = GaussianMixture::single(g(&[u0]), noise).unwrap();
        let l1 = l1_between(&pi, &exact);
        assert!(l1 <= 0.1, "u0 = {u0}: L1 = {l1}");
    }
}

#[test]
fn conditional_fit_tracks_the_linear_path() {
    let noise = 0.05;
    let parents = [GaussianMixture::single(0.5, 0.04).unwrap(), GaussianMixture::single(-0.2, 0.09).unwrap()];
    let cpd = fit_conditional(
        |u: &[f64]| 1.5 * u[0] - u[1],
        noise,
        &[(-0.5, 1.5), (-1.7, 1.3)],
        &[30, 30],
        VarianceRule::SpacingMultiple(0.5),
    )
    .unwrap();
    let fitted = compute_pi_mixture(&cpd, &parents, &ReductionPolicy::identity()).unwrap();
    let linear = compute_pi_linear(&LinearCpd::new(vec![1.5, -1.0], noise).unwrap(), &parents, &ReductionPolicy::identity())
        .unwrap();
    let l1 = l1_between(&fitted, &linear);
    assert!(l1 <= 0.1, "L1 = {l1}");
}

fn random_case(rng: &mut ChaCha8Rng) -> (Network, Evidence) {
    let n = rng.gen_range(2..=6);
    let net = random_polytree(rng, n, 3, 3);
    let mut evidence = Evidence::new();
    for v in 1..n {
        if rng.gen_bool(0.3) {
            evidence.set(&node_name(v), rng.gen_range(-1.5..1.5)).unwrap();
        }
    }
    (net, evidence)
}

#[test]
fn beliefs_integrate_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..30 {
        let (net, evidence) = random_case(&mut rng);
        let r = propagate(&net, &evidence, &InferenceOptions::default()).unwrap();
        for (id, belief) in &r.beliefs {
            if evidence.get(id.as_str()).is_some() {
                assert_eq!(belief, &GaussianMixture::dirac(evidence.get(id.as_str()).unwrap()));
                continue;
            }
            let (lo, hi) = belief.envelope(10.0);
            let xs = linspace(lo, hi, 20_001).unwrap();
            let ys = belief.eval_grid(&xs).unwrap();
            let mass = trapezoid(&ys, xs[1] - xs[0]);
            assert!((mass - 1.0).abs() < 1e-6, "{id}: {mass}");
        }
    }
}

#[test]
fn pivot_choice_is_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let (net, evidence) = random_case(&mut rng);
        let base = propagate(&net, &evidence, &InferenceOptions::exact()).unwrap();
        for p in 0..net.len() {
            let name = node_name(p);
            let other = propagate_with_pivots(&net, &evidence, &InferenceOptions::exact(), &[&name]).unwrap();
            for (id, belief) in &base.beliefs {
                let alt = &other.beliefs[id];
                if belief.has_dirac() {
                    assert_eq!(belief, alt);
                    continue;
                }
                let (lo, hi) = belief.envelope(3.0);
                for x in linspace(lo, hi, 25).unwrap() {
                    let (a, b) = (belief.eval(x).unwrap_or(0.0), alt.eval(x).unwrap_or(0.0));
                    assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{id} pivot {name}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn point_mass_prior_contradicts_other_evidence() {
    let net = Network::build(vec![
        NodeSpec::root("X", GaussianMixture::dirac(0.0)).unwrap(),
        NodeSpec::child("Y", &["X"], NodeModel::Linear(LinearCpd::new(vec![1.0], 1.0).unwrap())).unwrap(),
    ])
    .unwrap();
    let err = propagate(&net, &Evidence::new().with("X", 1.0).unwrap(), &InferenceOptions::default()).unwrap_err();
    assert!(matches!(err, PropagationError::ContradictoryEvidence { ref node } if node == "X"), "{err}");
    let ok = propagate(&net, &Evidence::new().with("X", 0.0).unwrap(), &InferenceOptions::default()).unwrap();
    assert_eq!(ok.belief("Y").unwrap(), &GaussianMixture::single(0.0, 1.0).unwrap());
}

#[test]
fn vacuous_lambda_leaves_belief_equal_to_pi() {
    let prior = GaussianMixture::new(vec![
        WeightedGaussian::new(0.4, -1.0, 0.3).unwrap(),
        WeightedGaussian::new(0.6, 1.0, 0.5).unwrap(),
    ])
    .unwrap();
    let cpd = ConditionalMixtureCpd::shared_variance(vec![(1.0, 0.0, vec![0.0], 1.0)]).unwrap();
    let net = Network::build(vec![
        NodeSpec::root("U", prior.clone()).unwrap(),
        NodeSpec::child("X", &["U"], NodeModel::MixtureCpd(cpd)).unwrap(),
    ])
    .unwrap();
    let r = propagate(&net, &Evidence::new(), &InferenceOptions::default()).unwrap();
    assert_eq!(r.belief("U").unwrap(), &prior);
    assert!(r.messages.lambda.values().all(Likelihood::is_vacuous));
}

#[test]
fn reduction_caps_belief_size() {
    let prior = GaussianMixture::new(
        (0..30).map(|k| WeightedGaussian::new(1.0, k as f64 * 0.1, 0.01).unwrap()).collect(),
    )
    .unwrap();
    let net = Network::build(vec![
        NodeSpec::root("X", prior.clone()).unwrap(),
        NodeSpec::root("Y", prior).unwrap(),
        NodeSpec::child("Z", &["X", "Y"], NodeModel::Linear(LinearCpd::new(vec![1.0, 1.0], 0.01).unwrap())).unwrap(),
    ])
    .unwrap();
    let options = InferenceOptions {
        reduction: ReductionPolicy { prune_epsilon: 1e-9, max_components: Some(50) },
    };
    let r = propagate(&net, &Evidence::new(), &options).unwrap();
    let d = r.diagnostics[&gmbn::NodeId::new("Z").unwrap()];
    assert_eq!(d.components_after_reduction, 50);
    let exact = propagate(&net, &Evidence::new(), &InferenceOptions::exact()).unwrap();
    let (m1, v1) = r.belief("Z").unwrap().moments().unwrap();
    let (m2, v2) = exact.belief("Z").unwrap().moments().unwrap();
    assert!((m1 - m2).abs() < 1e-9 && rel_err(v1, v2) < 1e-9);
}
