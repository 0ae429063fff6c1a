use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use mdci::geometry::{HyperbolaGeometry, PolarQuadrature};
use mdci::invert::{self, InvertConfig};
use mdci::mc::{self, MCDesign, MCResult, Preset};
use mdci::{limitexp, Method, RngStream};

use crate::config::{self, AnalysisConfig, ConfigError};
use crate::report::{self, CiRow};
use crate::{CiArgs, GeometryArgs, LimitexpArgs, SimulateArgs, EXIT_CONFIG, EXIT_NUMERIC};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// A library failure; `context` names the module and operation.
    #[error("[{context}] {source}")]
    Numeric {
        context: String,
        #[source]
        source: mdci::Error,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Numeric { .. } => EXIT_NUMERIC,
        }
    }

    fn numeric(context: impl Into<String>) -> impl FnOnce(mdci::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Numeric { context, source }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_methods(list: &[String]) -> Result<Vec<Method>, ConfigError> {
    list.iter()
        .map(|m| {
            config::parse_method(m).map_err(|e| ConfigError {
                field: Some("--method".into()),
                ..e
            })
        })
        .collect()
}

fn flag_err(flag: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        field: Some(flag.to_string()),
        message: message.into(),
    }
}

fn check_levels(alpha: f64, eta: Option<f64>) -> Result<(), ConfigError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(flag_err("alpha", format!("{alpha} outside (0, 1)")));
    }
    if let Some(eta) = eta {
        if !(eta > 0.0 && eta < alpha) {
            return Err(flag_err("eta", format!("{eta} outside (0, alpha)")));
        }
    }
    Ok(())
}

/// Load the config named in `args` and apply the command-line overrides.
pub fn load_ci_config(args: &CiArgs) -> Result<AnalysisConfig, CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        ConfigError::new(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let mut cfg = config::parse_config(&text)?;
    if !args.methods.is_empty() {
        cfg.methods = parse_methods(&args.methods)?;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if args.eta.is_some() {
        cfg.eta = args.eta;
    }
    check_levels(cfg.alpha, cfg.eta)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    Ok(cfg)
}

/// Intervals for every (estimate, method) pair of the config.
pub fn compute_ci_rows(cfg: &AnalysisConfig) -> Result<Vec<CiRow>, CliError> {
    let defaults = InvertConfig::default();
    let inv = InvertConfig {
        eta: cfg.eta,
        seed: RngStream::new(cfg.seed),
        bn2_draws: cfg.bn2_draws.unwrap_or(defaults.bn2_draws),
        boot_draws: cfg.boot_draws.unwrap_or(defaults.boot_draws),
        ..defaults
    };
    let mut rows = Vec::new();
    for est in &cfg.estimates {
        let estimate = cfg.g.eval(est.input.theta_hat());
        for &m in &cfg.methods {
            let ci = invert::invert_test(&cfg.g, &est.input, m, cfg.alpha, &inv)
                .map_err(CliError::numeric(format!("invert {m} for '{}'", est.label)))?;
            rows.push(CiRow::new(&est.label, estimate, &ci));
        }
    }
    Ok(rows)
}

pub fn cmd_ci(args: &CiArgs, out: &mut dyn Write) -> Result<Vec<CiRow>, CliError> {
    let cfg = load_ci_config(args)?;
    let rows = compute_ci_rows(&cfg)?;
    let stdout = Path::new("<stdout>");
    write!(out, "{}", report::format_table(&rows)).map_err(io_err(stdout))?;
    if let Some(path) = &cfg.out {
        let file = fs::File::create(path).map_err(io_err(path))?;
        report::write_ci_csv(&rows, io::BufWriter::new(file)).map_err(|e| CliError::Io {
            path: path.clone(),
            source: io::Error::other(e),
        })?;
        writeln!(out, "wrote {}", path.display()).map_err(io_err(stdout))?;
    }
    Ok(rows)
}

/// Designs requested by the `simulate` flags.
pub fn simulate_designs(args: &SimulateArgs) -> Result<Vec<MCDesign>, ConfigError> {
    let mut designs = match (args.theta2, &args.preset) {
        (Some(_), Some(_)) => return Err(flag_err("--theta2", "use either --theta2 or --preset")),
        (Some(theta2), None) => {
            let s = args.reps.unwrap_or(if args.quick { 500 } else { 2000 });
            vec![MCDesign::new(theta2, args.r.unwrap_or(0.0), s, args.seed)]
        }
        (None, preset) => {
            if args.r.is_some() || args.reps.is_some() {
                return Err(flag_err("--r", "--r and --reps need --theta2"));
            }
            let preset: Preset = preset
                .as_deref()
                .unwrap_or("paper")
                .parse()
                .map_err(|e: mdci::Error| flag_err("--preset", e.to_string()))?;
            preset.designs(args.quick, args.seed)
        }
    };
    let methods = if args.methods.is_empty() { None } else { Some(parse_methods(&args.methods)?) };
    for d in &mut designs {
        if let Some(m) = &methods {
            d.methods = m.clone();
        }
        if let Some(a) = args.alpha {
            d.alpha = a;
            d.eta = a / 10.0;
        }
        if let Some(e) = args.eta {
            d.eta = e;
        }
        check_levels(d.alpha, Some(d.eta))?;
        d.validate().map_err(|e| flag_err("design", e.to_string()))?;
    }
    Ok(designs)
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<Vec<MCResult>, CliError> {
    let designs = simulate_designs(args)?;
    let stdout = Path::new("<stdout>");
    let mut results = Vec::with_capacity(designs.len());
    for d in &designs {
        let res = mc::run_design(d).map_err(CliError::numeric(format!("mc design {}", d.id)))?;
        writeln!(out, "design {} (S={}, {:.1}s)", d.id, d.s, res.runtime_secs).map_err(io_err(stdout))?;
        writeln!(
            out,
            "  {:>7}  {:<10}  {:>12}  {:>11}  {:>10}",
            "th1/th2", "method", "reject_truth", "reject_zero", "median_len"
        )
        .map_err(io_err(stdout))?;
        for c in &res.cells {
            writeln!(
                out,
                "  {:>7.1}  {:<10}  {:>12.4}  {:>11.4}  {:>10.4}",
                c.ratio,
                c.method.as_str(),
                c.reject_truth,
                c.reject_zero,
                c.median_len
            )
            .map_err(io_err(stdout))?;
        }
        results.push(res);
    }
    let written = match mc::emit_results(&results, &args.out) {
        Ok(w) => w,
        Err(mdci::Error::Io { context, source }) => return Err(CliError::Io { path: context, source }),
        Err(e) => return Err(CliError::numeric("mc emit")(e)),
    };
    for p in written {
        writeln!(out, "wrote {}", p.display()).map_err(io_err(stdout))?;
    }
    Ok(results)
}

pub fn cmd_geometry(args: &GeometryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_levels(args.alpha, None)?;
    let geom = HyperbolaGeometry::with_alpha(args.rho, args.tau, args.alpha)
        .map_err(|e| flag_err("geometry", e.to_string()))?;
    if args.n_draws < 100_000 {
        return Err(flag_err("--n-draws", "must be at least 100000").into());
    }
    let theta = [args.theta1, geom.x2_branch(args.theta1)];
    let cov = geom
        .coverage_probability(theta, args.n_draws, RngStream::new(args.seed))
        .map_err(CliError::numeric("geometry coverage"))?;
    let polar = geom
        .polar_coverage_integral(theta, &PolarQuadrature::default())
        .map_err(CliError::numeric("geometry polar integral"))?;

    let mut s = String::new();
    s.push_str(&format!(
        "rho = {:.4}, tau = {:.4}, alpha = {:.4}, c = {:.4}\n",
        geom.rho, geom.tau, args.alpha, geom.c
    ));
    s.push_str(&format!("x1* = {:.4}\n", geom.x1_star));
    match geom.kink {
        Some(k) => s.push_str(&format!("K = ({:.4}, {:.4})\n", k[0], k[1])),
        None => s.push_str(&format!(
            "K = none (tau above c^2(1-rho)^2/(1+rho) = {:.4})\n",
            mdci::geometry::kink_threshold(geom.rho, geom.c)
        )),
    }
    let holds = |b: bool| if b { "holds" } else { "fails" };
    s.push_str(&format!(
        "curvature (1-rho)/sqrt(tau(1+rho)) = {:.4} <= 1/c = {:.4}: {}\n",
        geom.max_curvature(),
        1.0 / geom.c,
        holds(geom.curvature_condition())
    ));
    s.push_str(&format!("rho >= 0: {}\n", holds(geom.branch_condition())));
    if !geom.in_proven_region() {
        s.push_str("*** outside proven region: coverage below is reported, not guaranteed ***\n");
    }
    s.push_str(&format!("theta = ({:.4}, {:.4})\n", theta[0], theta[1]));
    s.push_str(&format!(
        "coverage (MC, {} draws) = {:.4} +/- {:.4}\n",
        cov.n_draws, cov.estimate, cov.mc_se
    ));
    s.push_str(&format!(
        "polar integral = {:.4} (difference {:.2} SE)\n",
        polar,
        (polar - cov.estimate) / cov.mc_se.max(f64::MIN_POSITIVE)
    ));
    s.push_str(&format!(
        "coverage >= {:.4} - 3 SE: {}\n",
        1.0 - args.alpha,
        holds(cov.estimate >= 1.0 - args.alpha - 3.0 * cov.mc_se)
    ));
    out.write_all(s.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

pub fn cmd_limitexp(args: &LimitexpArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_levels(args.alpha, None)?;
    if !(args.eps > 0.0) {
        return Err(flag_err("--eps", "must be positive").into());
    }
    if args.n_draws < 2 {
        return Err(flag_err("--n-draws", "must be at least 2").into());
    }
    if args.ks_draws < 10_000 {
        return Err(flag_err("--ks-draws", "must be at least 10000").into());
    }
    let seed = RngStream::new(args.seed);
    let rows = limitexp::flatness_demo(args.alpha, args.n_draws, args.eps, seed.substream(0))
        .map_err(CliError::numeric("limitexp flatness"))?;
    let nonreg = limitexp::nonregularity_demo(args.ks_draws, seed.substream(1))
        .map_err(CliError::numeric("limitexp non-regularity"))?;

    let mut s = format!(
        "power slopes of the product test min(|Z1|,|Z2|)^2 > Q(chi2_1, {:.4}), eps = {:.4}, n = {}\n",
        1.0 - args.alpha,
        args.eps,
        args.n_draws
    );
    for r in &rows {
        s.push_str(&format!(
            "  {:<22} forward {:>8.4} +/- {:.4}   central {:>8.4} +/- {:.4}\n",
            r.label, r.slope.forward, r.slope.forward_se, r.slope.central, r.slope.central_se
        ));
    }
    s.push_str(&format!(
        "plug-in limit law, KS distance between h = ({}, {}) and h = ({}, {}) with n = {}: {:.4}\n",
        nonreg.h_a[0], nonreg.h_a[1], nonreg.h_b[0], nonreg.h_b[1], nonreg.n_draws, nonreg.ks
    ));
    out.write_all(s.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}
