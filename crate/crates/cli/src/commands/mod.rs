//! Subcommand implementations. Each returns an [`Outcome`] whose checks form
//! the subcommand's acceptance set.

pub mod algebra;
pub mod covariance;
pub mod cr;
pub mod kernel;
pub mod solve;
pub mod sphere;

use std::fmt;

use crate::args::Command;
use crate::output::Outcome;

/// Invalid user input; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// True for errors caused by the configuration rather than by a check.
pub fn is_usage_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<UsageError>().is_some() || matches!(e.downcast_ref::<pdirac::Error>(), Some(pdirac::Error::Parameter(_)))
}

pub fn run(command: &Command) -> anyhow::Result<Outcome> {
    match command {
        Command::AlgebraSelftest(a) => algebra::run(a),
        Command::KernelResidual(a) => kernel::run(a),
        Command::Covariance(a) => covariance::run(a),
        Command::Solve(a) => solve::run(a),
        Command::SphereCheck(a) => sphere::run(a),
        Command::CrCheck(a) => cr::run(a),
    }
}

/// `n` within the experiment range `2 ≤ n ≤ 6`.
pub(crate) fn dimension(n: Option<usize>, default: usize) -> anyhow::Result<usize> {
    let n = n.unwrap_or(default);
    if !(2..=6).contains(&n) {
        return Err(usage(format!("n must satisfy 2 <= n <= 6, got {n}")));
    }
    Ok(n)
}

pub(crate) fn exponent(p: Option<f64>, default: f64) -> anyhow::Result<f64> {
    let p = p.unwrap_or(default);
    if !(p > 1.0) {
        return Err(usage(format!("p must exceed 1, got {p}")));
    }
    Ok(p)
}

/// Coordinate column names `x_1 .. x_n`.
pub(crate) fn coordinate_columns(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("x_{j}")).collect()
}
