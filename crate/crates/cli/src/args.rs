//! Command-line grammar and `key = value` config files.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "pdirac", version, about = "Numerical experiments for nonlinear Dirac operators")]
pub struct Cli {
    /// `key = value` file supplying defaults for the subcommand's flags;
    /// flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Randomized identity checks of the Clifford algebra.
    #[command(args_override_self = true)]
    AlgebraSelftest(AlgebraArgs),
    /// Strong residuals of the closed-form p-Dirac and p-harmonic fields.
    #[command(args_override_self = true)]
    KernelResidual(KernelArgs),
    /// Conformal covariance experiments and frame identities.
    #[command(args_override_self = true)]
    Covariance(CovarianceArgs),
    /// Lattice p-Dirichlet solver.
    #[command(args_override_self = true)]
    Solve(SolveArgs),
    /// Spherical Dirac operator checks.
    #[command(args_override_self = true)]
    SphereCheck(SphereArgs),
    /// p-Cauchy-Riemann checks in the plane.
    #[command(args_override_self = true)]
    CrCheck(CrArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::AlgebraSelftest(_) => "algebra-selftest",
            Command::KernelResidual(_) => "kernel-residual",
            Command::Covariance(_) => "covariance",
            Command::Solve(_) => "solve",
            Command::SphereCheck(_) => "sphere-check",
            Command::CrCheck(_) => "cr-check",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::AlgebraSelftest(a) => &a.common,
            Command::KernelResidual(a) => &a.common,
            Command::Covariance(a) => &a.common,
            Command::Solve(a) => &a.common,
            Command::SphereCheck(a) => &a.common,
            Command::CrCheck(a) => &a.common,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Dimension of the underlying space.
    #[arg(long)]
    pub n: Option<usize>,
    /// Exponent p > 1.
    #[arg(long, value_parser = parse_real)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AlgebraArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random cases per identity and dimension.
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sample points with |x| in [1, 3].
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Richardson step.
    #[arg(long, default_value_t = 1e-3, value_parser = parse_real)]
    pub h: f64,
    /// Steps of the plain central-difference sweep.
    #[arg(long, default_value = "0.2,0.1,0.05,0.025", value_parser = parse_list)]
    pub steps: RealList,
    /// Also run the weak-form checks of the closed-form fields.
    #[arg(long)]
    pub weak: bool,
    #[arg(long, default_value_t = 12)]
    pub quad_order: usize,
    /// Quadrature cells per axis over each bump's support box; 5 for n = 3
    /// and the dimension's default rule otherwise.
    #[arg(long)]
    pub cells: Option<usize>,
    /// Random test bumps for the weak checks.
    #[arg(long, default_value_t = 5)]
    pub bumps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[value(name = "1")]
    Theorem1,
    #[value(name = "2")]
    Theorem2,
    #[value(name = "3")]
    Theorem3,
    #[value(name = "4")]
    Theorem4,
    /// Dirac operator transfer rule and `D J_1 = 0`.
    Lemma1,
    /// Scalar-part and norm invariance of the twisted frame.
    Scalar,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CovarianceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub theorem: Experiment,
    /// Möbius expression, e.g. `inversion`, `dilate:2`, `translate:1,0,0`,
    /// `inversion*translate:1,0,0`.
    #[arg(long, default_value = "inversion")]
    pub mobius: String,
    #[arg(long, default_value_t = 12)]
    pub quad_order: usize,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub bumps: usize,
    /// Weight exponents for theorem 4; defaults to 2(p+2-n), 2(p-n), p-n, 0.
    #[arg(long, value_parser = parse_list)]
    pub scan: Option<RealList>,
    /// Sample points for the pointwise checks.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StencilArg {
    CellAveraged,
    Forward,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// `box`, `box:lo,hi` or `annulus:a,b`.
    #[arg(long, default_value = "annulus:1,2")]
    pub region: String,
    /// Lattice spacing; fractions such as `1/32` are accepted.
    #[arg(long, default_value = "1/32", value_parser = parse_real)]
    pub h: f64,
    /// `radial`, `linear`, `quadratic` (p = 2) or `file:<path>`.
    #[arg(long, default_value = "radial")]
    pub bc: String,
    /// Comma-separated regularization stages.
    #[arg(long, value_parser = parse_list)]
    pub eps_schedule: Option<RealList>,
    /// Final regularization; defaults to 1e-3 for p < 2 and 0 otherwise.
    #[arg(long, value_parser = parse_real)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = StencilArg::CellAveraged)]
    pub stencil: StencilArg,
    /// Solve for a full Cl_n-valued field instead of a scalar one.
    #[arg(long)]
    pub clifford: bool,
    /// Recovery tolerance (max relative error); 5e-2 for radial data and
    /// 1e-6 for polynomial data by default.
    #[arg(long, value_parser = parse_real)]
    pub recovery_tol: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SphereArgs {
    #[command(flatten)]
    pub common: Common,
    /// Kernel pole on S^n; normalized. Defaults to the north pole.
    #[arg(long, value_parser = parse_list)]
    pub y: Option<RealList>,
    /// Rotation angle of the rotational differences.
    #[arg(long, default_value_t = 1e-3, value_parser = parse_real)]
    pub theta: f64,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 3)]
    pub bumps: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CrArgs {
    #[command(flatten)]
    pub common: Common,
    /// Holomorphic map: `square-plus:c`, `identity`, `translate:a,b`, `scale:a,b`.
    #[arg(long, default_value = "square-plus:3")]
    pub f: String,
    /// `annulus:a,b` or `ball:x,y,r`.
    #[arg(long, default_value = "annulus:0.5,1.5")]
    pub domain: String,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 5)]
    pub bumps: usize,
    #[arg(long, default_value_t = 12)]
    pub quad_order: usize,
    #[arg(long, default_value_t = 8)]
    pub cells: usize,
}

/// Comma-separated reals.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RealList(pub Vec<f64>);

/// A real number or a fraction `a/b`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("not a number: '{s}'"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("not a number: '{s}'"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("not a number: '{s}'"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not a finite number: '{s}'"))
    }
}

pub fn parse_list(s: &str) -> Result<RealList, String> {
    s.split(',').map(parse_real).collect::<Result<Vec<_>, _>>().map(RealList)
}

/// Inserts the entries of a `--config` file as flags right after the
/// subcommand name, so that flags given explicitly (which come later) win.
///
/// Lines are `key = value`; `#` starts a comment; keys may use `_` or `-`.
/// `key = true` becomes a bare switch and `key = false` is dropped.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--config" {
            path = argv.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub)) = (path, sub) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config '{path}': {e}"))?;
    let mut extra = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected 'key = value'", k + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(format!("{path}:{}: invalid key", k + 1));
        }
        match value {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value.to_string());
            }
        }
    }
    let mut out = argv[..=sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_and_lists() {
        assert_eq!(parse_real("1/32").unwrap(), 0.03125);
        assert_eq!(parse_real(" 2.5 ").unwrap(), 2.5);
        assert!(parse_real("1/0").is_err());
        assert_eq!(parse_list("0.1,1/2").unwrap(), RealList(vec![0.1, 0.5]));
    }

    #[test]
    fn config_entries_are_overridden_by_flags() {
        let dir = std::env::temp_dir().join(format!("pdirac-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "# experiment\nn = 4\np = 3  # exponent\nweak = true\nquad_order = 6\n").unwrap();
        let argv: Vec<String> = ["pdirac", "kernel-residual", "--p", "2.5", "--config", path.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cli = Cli::try_parse_from(expand_config(argv).unwrap()).unwrap();
        let Command::KernelResidual(k) = cli.command else { panic!() };
        assert_eq!(k.common.n, Some(4));
        assert_eq!(k.common.p, Some(2.5));
        assert!(k.weak);
        assert_eq!(k.quad_order, 6);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        let err = Cli::try_parse_from(["pdirac", "solve", "--bogus", "1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
