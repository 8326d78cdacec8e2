use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use gmbn::document::{load_network, prior_terms, to_json_string, PriorTerm};
use gmbn::example;
use gmbn::fitting::{uniform_grid_fit, FitConfig, TargetDensity, VarianceRule};
use gmbn::gaussian::linspace;
use gmbn::propagation::PropagationError;
use gmbn::{propagate, Evidence, GaussianMixture, InferenceOptions, ReductionPolicy};

#[derive(Parser)]
#[command(name = "gmbn", version, about = "Gaussian-sum belief propagation on polytrees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a network document parses and forms a polytree.
    Validate { file: PathBuf },
    /// Propagate evidence and print posterior densities as CSV.
    Infer {
        file: PathBuf,
        /// Observation NODE=VALUE; repeatable.
        #[arg(long = "evidence", value_name = "NODE=VALUE", allow_hyphen_values = true)]
        evidence: Vec<String>,
        /// Node to print; repeatable. Defaults to every node.
        #[arg(long = "query", value_name = "NODE")]
        query: Vec<String>,
        /// Evaluation grid lo:hi:n. Defaults to each belief's ±5σ envelope.
        #[arg(long, value_name = "LO:HI:N", allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long = "prune-eps", default_value_t = ReductionPolicy::DEFAULT_PRUNE_EPSILON)]
        prune_eps: f64,
        #[arg(long = "max-components", default_value_t = ReductionPolicy::DEFAULT_MAX_COMPONENTS)]
        max_components: usize,
    },
    /// Fit a Gaussian sum to a target density.
    Fit {
        /// uniform:LO:HI, triangular:LO:MODE:HI or gaussian:MEAN:VAR.
        #[arg(long, allow_hyphen_values = true)]
        target: String,
        #[arg(long = "M", value_name = "K")]
        components: usize,
        /// Defaults to the target's support.
        #[arg(long, value_name = "LO:HI", allow_hyphen_values = true)]
        support: Option<String>,
        #[arg(long, default_value_t = 0)]
        refine: usize,
        #[arg(long, default_value_t = FitConfig::DEFAULT_STEP_SIZE)]
        step: f64,
        /// Shared component variance.
        #[arg(long, conflicts_with = "spacing_multiple")]
        variance: Option<f64>,
        /// Component standard deviation as a multiple of the grid spacing.
        #[arg(long = "spacing-multiple")]
        spacing_multiple: Option<f64>,
    },
    /// Run the two-parent sum network and write its curves as CSV.
    Example {
        #[arg(long, default_value = "example_out")]
        out: PathBuf,
    },
}

enum Failure {
    Input(String),
    Contradiction(String),
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<PropagationError> for Failure {
    fn from(e: PropagationError) -> Self {
        match e {
            PropagationError::ContradictoryEvidence { .. } => Self::Contradiction(e.to_string()),
            other => Self::Input(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { file } => validate(&file),
        Command::Infer {
            file,
            evidence,
            query,
            grid,
            prune_eps,
            max_components,
        } => infer(&file, &evidence, &query, grid.as_deref(), prune_eps, max_components),
        Command::Fit {
            target,
            components,
            support,
            refine,
            step,
            variance,
            spacing_multiple,
        } => fit(&target, components, support.as_deref(), refine, step, variance, spacing_multiple),
        Command::Example { out } => run_example(&out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Contradiction(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn validate(file: &Path) -> Result<(), Failure> {
    let net = load_network(file).map_err(Failure::input)?;
    println!("{} nodes, {} edges, polytree: ok", net.len(), net.edge_count());
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64, Failure> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Failure::Input(format!("invalid {what} `{s}`")))
}

fn parse_fields(spec: &str, n: usize, what: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != n {
        return Err(Failure::Input(format!("{what} `{spec}` needs {n} colon-separated numbers")));
    }
    parts.iter().map(|p| parse_f64(p, what)).collect()
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Failure::Input(format!("grid `{spec}` must be lo:hi:n")));
    }
    let lo = parse_f64(parts[0], "grid bound")?;
    let hi = parse_f64(parts[1], "grid bound")?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| Failure::Input(format!("invalid grid size `{}`", parts[2])))?;
    linspace(lo, hi, n).map_err(Failure::input)
}

fn density_rows(out: &mut String, node: &str, m: &GaussianMixture, grid: &[f64]) -> Result<(), Failure> {
    for (x, d) in grid.iter().zip(m.eval_grid(grid).map_err(Failure::input)?) {
        writeln!(out, "{node},{x},{d}").expect("writing to a String cannot fail");
    }
    Ok(())
}

fn infer(
    file: &Path,
    evidence: &[String],
    query: &[String],
    grid: Option<&str>,
    prune_eps: f64,
    max_components: usize,
) -> Result<(), Failure> {
    let net = load_network(file).map_err(Failure::input)?;
    let mut ev = Evidence::new();
    for item in evidence {
        let (node, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("evidence `{item}` must be NODE=VALUE")))?;
        ev.set(node.trim(), parse_f64(value, "evidence value")?)
            .map_err(Failure::input)?;
    }
    let fixed_grid = grid.map(parse_grid).transpose()?;
    if !(0.0..1.0).contains(&prune_eps) || max_components == 0 {
        return Err(Failure::Input("need 0 <= prune-eps < 1 and max-components >= 1".into()));
    }
    let options = InferenceOptions {
        reduction: ReductionPolicy {
            prune_epsilon: prune_eps,
            max_components: Some(max_components),
        },
    };

    let started = Instant::now();
    let result = propagate(&net, &ev, &options)?;
    let elapsed = started.elapsed();

    let names: Vec<String> = if query.is_empty() {
        net.nodes().iter().map(|n| n.id.to_string()).collect()
    } else {
        query.to_vec()
    };
    let mut out = String::from("node,x,density\n");
    for name in &names {
        let belief = result
            .belief(name)
            .ok_or_else(|| Failure::Input(format!("unknown query node `{name}`")))?;
        if let Some(x0) = belief.as_point_mass() {
            writeln!(out, "{name},{x0},DIRAC").expect("writing to a String cannot fail");
            eprintln!("{name}: observed at {x0}");
            continue;
        }
        let points = match &fixed_grid {
            Some(g) => g.clone(),
            None => {
                let (lo, hi) = belief.envelope(5.0);
                linspace(lo, hi, 401).map_err(Failure::input)?
            }
        };
        density_rows(&mut out, name, belief, &points)?;
        let (mean, var) = belief.moments().map_err(Failure::input)?;
        eprintln!(
            "{name}: mean={mean:.6} std={:.6} components={}",
            var.sqrt(),
            belief.len()
        );
    }
    eprintln!("propagation time: {:.3} ms", elapsed.as_secs_f64() * 1e3);
    print!("{out}");
    Ok(())
}

fn parse_target(spec: &str) -> Result<TargetDensity, Failure> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Failure::Input(format!("target `{spec}` must be KIND:PARAMS")))?;
    let target = match kind {
        "uniform" => {
            let p = parse_fields(rest, 2, "uniform target")?;
            TargetDensity::uniform(p[0], p[1])
        }
        "triangular" => {
            let p = parse_fields(rest, 3, "triangular target")?;
            TargetDensity::triangular(p[0], p[1], p[2])
        }
        "gaussian" => {
            let p = parse_fields(rest, 2, "gaussian target")?;
            TargetDensity::mixture(GaussianMixture::single(p[0], p[1]).map_err(Failure::input)?)
        }
        other => return Err(Failure::Input(format!("unknown target kind `{other}`"))),
    };
    target.map_err(Failure::input)
}

#[derive(serde::Serialize)]
struct PriorFragment {
    prior: Vec<PriorTerm>,
}

fn fit(
    target_spec: &str,
    components: usize,
    support: Option<&str>,
    refine: usize,
    step: f64,
    variance: Option<f64>,
    spacing_multiple: Option<f64>,
) -> Result<(), Failure> {
    let target = parse_target(target_spec)?;
    let support = match support {
        Some(s) => {
            let p = parse_fields(s, 2, "support")?;
            (p[0], p[1])
        }
        None => target.support(),
    };
    let rule = match (variance, spacing_multiple, &target) {
        (Some(v), _, _) => VarianceRule::Shared(v),
        (None, Some(c), _) => VarianceRule::SpacingMultiple(c),
        // a single Gaussian target is representable exactly with its own variance
        (None, None, TargetDensity::Mixture(m)) if m.len() == 1 => {
            VarianceRule::Shared(m.components()[0].variance)
        }
        (None, None, _) => {
            VarianceRule::SpacingMultiple(example::prior_spacing_multiple().map_err(Failure::input)?)
        }
    };
    let config = FitConfig::new(components, support, rule).with_refinement(refine, step);
    let report = uniform_grid_fit(&target, &config).map_err(Failure::input)?;

    println!("metric,value");
    println!("l1_error,{}", report.l1_error);
    println!("l2_error,{}", report.l2_error);
    println!("iterations,{}", report.iterations_used);
    println!("components,{}", report.mixture.len());
    println!();
    print!(
        "{}",
        to_json_string(&PriorFragment {
            prior: prior_terms(&report.mixture)
        })
    );
    eprintln!("fit: M={components} l1={:.6} l2={:.6}", report.l1_error, report.l2_error);
    Ok(())
}

fn run_example(out_dir: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let run = example::run().map_err(Failure::input)?;
    let metrics = run.metrics().map_err(Failure::input)?;
    let elapsed = started.elapsed();

    fs::create_dir_all(out_dir).map_err(Failure::input)?;
    let grid = linspace(example::PLOT_RANGE.0, example::PLOT_RANGE.1, example::PLOT_POINTS)
        .map_err(Failure::input)?;
    for (stem, node, belief) in run.curves() {
        let mut out = String::from("node,x,density\n");
        density_rows(&mut out, node, belief, &grid)?;
        let path = out_dir.join(format!("{stem}.csv"));
        fs::write(&path, out).map_err(Failure::input)?;
        eprintln!("wrote {}", path.display());
    }

    println!("metric,value");
    println!("spacing_multiple,{}", run.spacing_multiple);
    println!("prior_l1,{}", metrics.prior_l1);
    println!("z_no_evidence_l1,{}", metrics.z_no_evidence_l1);
    println!("z_given_x_l1,{}", metrics.z_given_x_l1);
    println!("y_unchanged_given_x,{}", metrics.y_unchanged_given_x);
    println!("x_given_z_mean,{}", metrics.x_given_z_mean);
    println!("x_given_z_std,{}", metrics.x_given_z_std);
    println!("x_given_z_l1,{}", metrics.x_given_z_l1);
    eprintln!("example: {:.1} ms", elapsed.as_secs_f64() * 1e3);
    Ok(())
}
