//! Experiment configuration and the `cusp-response` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};

use crate::error::{CuspError, Result};
use crate::function_space::NormConfig;
use crate::map_family::{audit_assumptions, AssumptionAudit, CuspTentFamily};
use crate::response::{response_sweep, ResponseReport, SweepConfig};
use crate::spectral::{invariant_density, resolvent_bound_proxy, spectrum_csv, ulam_spectrum, SpectrumReport};
use crate::transfer_operator::OperatorContext;

/// Sample count per branch used by the `audit` command.
const AUDIT_GRID: usize = 4000;

/// Number of eigenvalues reported by `spectrum`.
const SPECTRUM_COUNT: usize = 6;

/// Exit status: success.
pub const EXIT_OK: u8 = 0;
/// Exit status: invalid configuration or arguments.
pub const EXIT_VALIDATION: u8 = 1;
/// Exit status: a computation did not converge or a threshold was missed.
pub const EXIT_CONVERGENCE: u8 = 2;
/// Exit status: reading or writing files failed.
pub const EXIT_IO: u8 = 3;

/// Parameters of one experiment, read from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub k: u32,
    pub p: f64,
    /// Strictly decreasing values in [0, 0.1).
    pub eps_list: Vec<f64>,
    pub mesh_panels: usize,
    pub grading_exponent: f64,
    pub quad_order: usize,
    pub tol_density: f64,
    pub tol_neumann: f64,
    pub max_iter: usize,
    pub corpus_size: usize,
    pub seed: u64,
    /// Run node loops on the rayon pool; `false` is the sequential reference path.
    pub parallel: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 4,
            p: 1.5,
            eps_list: vec![0.04, 0.02, 0.01, 0.005],
            mesh_panels: 4096,
            grading_exponent: 2.0,
            quad_order: 8,
            tol_density: 1e-10,
            tol_neumann: 1e-9,
            max_iter: 2000,
            corpus_size: 24,
            seed: 0,
            parallel: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults, unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| CuspError::Parse { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
            where
                T::Err: std::fmt::Display,
            {
                v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
            }
            let parsed: std::result::Result<(), String> = (|| {
                match key {
                    "k" => cfg.k = num(value)?,
                    "p" => cfg.p = num(value)?,
                    "eps_list" => {
                        cfg.eps_list = value
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(num)
                            .collect::<std::result::Result<_, _>>()?
                    }
                    "mesh_panels" => cfg.mesh_panels = num(value)?,
                    "grading_exponent" => cfg.grading_exponent = num(value)?,
                    "quad_order" => cfg.quad_order = num(value)?,
                    "tol_density" => cfg.tol_density = num(value)?,
                    "tol_neumann" => cfg.tol_neumann = num(value)?,
                    "max_iter" => cfg.max_iter = num(value)?,
                    "corpus_size" => cfg.corpus_size = num(value)?,
                    "seed" => cfg.seed = num(value)?,
                    "parallel" => cfg.parallel = num(value)?,
                    "output_dir" => cfg.output_dir = PathBuf::from(value),
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            })();
            parsed.map_err(err)?;
        }
        Ok(cfg)
    }

    /// Inverse of [`ExperimentConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let eps: Vec<String> = self.eps_list.iter().map(f64::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "eps_list = {}", eps.join(", "));
        let _ = writeln!(s, "mesh_panels = {}", self.mesh_panels);
        let _ = writeln!(s, "grading_exponent = {}", self.grading_exponent);
        let _ = writeln!(s, "quad_order = {}", self.quad_order);
        let _ = writeln!(s, "tol_density = {:e}", self.tol_density);
        let _ = writeln!(s, "tol_neumann = {:e}", self.tol_neumann);
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        let _ = writeln!(s, "corpus_size = {}", self.corpus_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "parallel = {}", self.parallel);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(CuspError::Config("eps_list is empty".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CuspError::Config("eps_list must be strictly decreasing".into()));
        }
        for &eps in &self.eps_list {
            CuspTentFamily::new(self.k, eps, self.p)?;
        }
        if self.mesh_panels < 32 {
            return Err(CuspError::Config(format!(
                "mesh_panels must be at least 32, got {}",
                self.mesh_panels
            )));
        }
        if !(self.grading_exponent >= 1.0 && self.grading_exponent.is_finite()) {
            return Err(CuspError::Config("grading_exponent must be at least 1".into()));
        }
        if !(self.tol_density > 0.0 && self.tol_neumann > 0.0) {
            return Err(CuspError::Config("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(CuspError::Config("max_iter must be positive".into()));
        }
        if self.corpus_size < 20 {
            return Err(CuspError::Config("corpus_size must be at least 20".into()));
        }
        self.norm_config()?;
        Ok(())
    }

    pub fn norm_config(&self) -> Result<NormConfig> {
        let cfg = NormConfig {
            quadrature_order: self.quad_order,
            ..NormConfig::new(self.p)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn family(&self, eps: f64) -> Result<CuspTentFamily> {
        CuspTentFamily::new(self.k, eps, self.p)
    }

    pub fn context(&self, eps: f64) -> Result<OperatorContext> {
        Ok(OperatorContext::for_family(
            self.family(eps)?,
            self.mesh_panels,
            self.grading_exponent,
            self.norm_config()?,
        )?
        .with_parallel(self.parallel))
    }

    /// Sweep settings for the `response` command; ε = 0 is the base point
    /// and is dropped from the list.
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            k: self.k,
            p: self.p,
            eps_list: self.eps_list.iter().copied().filter(|&e| e > 0.0).collect(),
            panels: self.mesh_panels,
            grading: self.grading_exponent,
            quad_order: self.quad_order,
            tol_density: self.tol_density,
            tol_neumann: self.tol_neumann,
            max_iter: self.max_iter,
            parallel: self.parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Audit,
    Density,
    Spectrum,
    Response,
}

#[derive(Clone, Debug, Parser)]
#[command(
    name = "cusp-response",
    version,
    about = "Invariant densities and linear response of cusp tent maps"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment configuration (key = value lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots where available.
    #[arg(long)]
    pub svg: bool,
}

/// What a command produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Whether every verdict and threshold of the command was met.
    pub passed: bool,
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &CuspError) -> u8 {
    match err {
        CuspError::Io(_) => EXIT_IO,
        CuspError::NotConverged { .. }
        | CuspError::Eigen(_)
        | CuspError::NonZeroMean(_)
        | CuspError::NonFinite { .. } => EXIT_CONVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

/// Runs a parsed command line and returns the exit status.
pub fn run(cli: &Cli) -> u8 {
    let result = fs::read_to_string(&cli.config)
        .map_err(CuspError::from)
        .and_then(|text| ExperimentConfig::parse(&text))
        .and_then(|mut cfg| {
            if let Some(out) = &cli.out {
                cfg.output_dir = out.clone();
            }
            cfg.validate()?;
            execute(cli.command, &cfg, cli.svg)
        });
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.passed {
                EXIT_OK
            } else {
                eprintln!("thresholds not met");
                EXIT_CONVERGENCE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command against a validated configuration.
pub fn execute(command: Command, cfg: &ExperimentConfig, svg: bool) -> Result<Outcome> {
    fs::create_dir_all(&cfg.output_dir)?;
    match command {
        Command::Audit => cmd_audit(cfg),
        Command::Density => cmd_density(cfg),
        Command::Spectrum => cmd_spectrum(cfg),
        Command::Response => cmd_response(cfg, svg),
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_audit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut rows = Vec::new();
    for &eps in &cfg.eps_list {
        let model = cfg.family(eps)?.shared();
        rows.push((eps, audit_assumptions(&model, cfg.p, AUDIT_GRID)?));
    }
    let passed = rows.iter().all(|(_, a)| a.verdicts.all());
    let path = cfg.output_dir.join("audit.csv");
    write_atomic(&path, &audit_csv(&rows))?;
    Ok(Outcome {
        files: vec![path],
        passed,
    })
}

pub fn audit_csv(rows: &[(f64, AssumptionAudit)]) -> String {
    let mut s = String::from(
        "eps,beta,theta_hat,lambda_hat,m_hat,c1_left,c1_right,c2_left,c2_right,c3_left,c3_right,\
         a8_sup,a8_inf,ulam_second_modulus,cover_iterations,a1,a2,a3,a4,a5,a6,a7,a8,all_pass\n",
    );
    for (eps, a) in rows {
        let _ = write!(
            s,
            "{eps:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            a.beta, a.theta_hat, a.lambda_hat, a.m_hat
        );
        for lim in &a.singular_limits {
            let _ = write!(s, ",{:.16e},{:.16e}", lim[0], lim[1]);
        }
        let _ = write!(
            s,
            ",{:.16e},{:.16e},{:.16e},{}",
            a.a8_sup,
            a.a8_inf,
            a.mixing.second_modulus,
            a.mixing
                .cover_iterations
                .map_or_else(|| "none".to_string(), |n| n.to_string())
        );
        for v in a.verdicts.as_array() {
            let _ = write!(s, ",{}", u8::from(v));
        }
        let _ = writeln!(s, ",{}", u8::from(a.verdicts.all()));
    }
    s
}

fn cmd_density(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut s = String::from("eps,x,h,status\n");
    let mut passed = true;
    for &eps in &cfg.eps_list {
        let ctx = cfg.context(eps)?;
        match invariant_density(&ctx, cfg.tol_density, cfg.max_iter) {
            Ok(d) => {
                for (x, h) in ctx.mesh().nodes().iter().zip(d.h.node_values()) {
                    let _ = writeln!(s, "{eps:.16e},{x:.16e},{h:.16e},ok");
                }
            }
            Err(e @ CuspError::NotConverged { .. }) => {
                passed = false;
                let _ = writeln!(s, "{eps:.16e},nan,nan,\"{e}\"");
            }
            Err(e) => return Err(e),
        }
    }
    let path = cfg.output_dir.join("density.csv");
    write_atomic(&path, &s)?;
    Ok(Outcome {
        files: vec![path],
        passed,
    })
}

fn spectrum_row(cfg: &ExperimentConfig, eps: f64) -> Result<SpectrumReport> {
    let ctx = cfg.context(eps)?;
    let mut rep = ulam_spectrum(&ctx.ulam_matrix()?, SPECTRUM_COUNT)?;
    rep.resolvent_bound_proxy = Some(resolvent_bound_proxy(&ctx, cfg.corpus_size, cfg.seed, cfg.tol_neumann)?);
    Ok(rep)
}

fn cmd_spectrum(cfg: &ExperimentConfig) -> Result<Outcome> {
    let rows: Vec<(f64, Result<SpectrumReport>)> = cfg.eps_list.iter().map(|&e| (e, spectrum_row(cfg, e))).collect();
    for (_, r) in &rows {
        if let Err(e) = r {
            if exit_code(e) != EXIT_CONVERGENCE {
                return Err(CuspError::Config(e.to_string()));
            }
        }
    }
    let ok: Vec<&SpectrumReport> = rows.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let gaps: Vec<f64> = ok.iter().map(|r| r.gap).collect();
    let gmax = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gmin = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let passed = ok.len() == rows.len()
        && ok
            .iter()
            .all(|r| (r.leading.re - 1.0).abs() < 1e-8 && r.leading.im.abs() < 1e-8 && r.second_modulus < 1.0 - 1e-3)
        && gmax < 3.0 * gmin;
    let path = cfg.output_dir.join("spectrum.csv");
    write_atomic(&path, &spectrum_csv(&rows))?;
    Ok(Outcome {
        files: vec![path],
        passed,
    })
}

/// Whether a response report meets the acceptance thresholds.
pub fn response_passes(rep: &ResponseReport) -> bool {
    rep.errors_decreasing() && rep.fitted_rate.is_some_and(|r| r > 0.5) && rep.kernel_route_gap < 1e-3
}

fn cmd_response(cfg: &ExperimentConfig, svg: bool) -> Result<Outcome> {
    let rep = response_sweep(&cfg.sweep_config())?;
    let mut files = Vec::new();
    let path = cfg.output_dir.join("response.csv");
    write_atomic(&path, &rep.to_csv())?;
    files.push(path);

    let mut funcs = String::from("x,h0,q_theorem,q_family,u\n");
    let nodes = rep.h0.h.mesh().nodes();
    let cols = [
        rep.h0.h.node_values(),
        rep.q_theorem.node_values(),
        rep.q_family.node_values(),
        rep.u.node_values(),
    ];
    for (j, x) in nodes.iter().enumerate() {
        let _ = writeln!(
            funcs,
            "{x:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            cols[0][j], cols[1][j], cols[2][j], cols[3][j]
        );
    }
    let path = cfg.output_dir.join("response_functions.csv");
    write_atomic(&path, &funcs)?;
    files.push(path);

    if svg {
        let path = cfg.output_dir.join("response.svg");
        write_atomic(&path, &rep.to_svg())?;
        files.push(path);
    }
    Ok(Outcome {
        files,
        passed: response_passes(&rep),
    })
}

/// Caps the rayon pool from `CUSP_RESPONSE_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CUSP_RESPONSE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CuspError::Config(format!("CUSP_RESPONSE_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(CuspError::Config("CUSP_RESPONSE_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CuspError::Config(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let text = "# experiment\nk = 5\np = 2.2\neps_list = 0.08, 0.04,0.02 # trailing\n\
                    mesh_panels = 128\nseed = 42\noutput_dir = results/a b\nparallel = false\ntol_density=1.5e-11\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.eps_list, vec![0.08, 0.04, 0.02]);
        assert_eq!(cfg.output_dir, PathBuf::from("results/a b"));
        assert_eq!(cfg.tol_density, 1.5e-11);
        let again = ExperimentConfig::parse(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(
            ExperimentConfig::parse(&ExperimentConfig::default().to_config_string()).unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(
            ExperimentConfig::parse("k = 4\nbogus = 1\n"),
            Err(CuspError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("k = four\n"),
            Err(CuspError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("k = 4\nk = 5\n"),
            Err(CuspError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("just text\n"),
            Err(CuspError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.k = 3;
        cfg.p = 2.0;
        assert!(matches!(cfg.validate(), Err(CuspError::Config(_))));
        let mut cfg = ExperimentConfig {
            eps_list: vec![0.01, 0.02],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.eps_list = vec![0.1];
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            tol_neumann: 0.0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&CuspError::Config("x".into())), EXIT_VALIDATION);
        assert_eq!(
            exit_code(&CuspError::NotConverged {
                what: "x",
                iterations: 1,
                residual: 1.0
            }),
            EXIT_CONVERGENCE
        );
        assert_eq!(exit_code(&CuspError::Io(std::io::Error::other("x"))), EXIT_IO);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, "x\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parse_serialize_parse_is_identity(
                k in 1u32..20,
                p in 1.0001..5.0f64,
                eps in prop::collection::vec(0.0..0.1f64, 1..6),
                panels in 1usize..100_000,
                grading in 1.0..4.0f64,
                tol in 1e-14..1e-2f64,
                seed in any::<u64>(),
                parallel in any::<bool>(),
                dir in "[a-z][a-z0-9_/]{0,20}",
            ) {
                let cfg = ExperimentConfig {
                    k,
                    p,
                    eps_list: eps,
                    mesh_panels: panels,
                    grading_exponent: grading,
                    tol_density: tol,
                    tol_neumann: tol / 3.0,
                    seed,
                    parallel,
                    output_dir: PathBuf::from(dir),
                    ..ExperimentConfig::default()
                };
                let once = ExperimentConfig::parse(&cfg.to_config_string()).unwrap();
                prop_assert_eq!(&once, &cfg);
                prop_assert_eq!(ExperimentConfig::parse(&once.to_config_string()).unwrap(), once);
            }
        }
    }
}
