use pdirac::field::{convergence_order, p_dirac_residual, p_dirac_solution, p_harmonic_radial, p_harmonic_residual, shell_samples};
use pdirac::quadrature::QuadratureRule;
use pdirac::weak::{
    divergence_check, quadrature_convergence, test_family, weak_ap_dirac_pairing, weak_p_dirac_residual, weak_p_harmonic_residual,
    WeightFunction,
};
use pdirac::Domain;

use crate::args::KernelArgs;
use crate::commands::{coordinate_columns, dimension, exponent, usage};
use crate::output::{Cell, Check, Outcome, Table};

pub const STRONG_LIMIT: f64 = 1e-8;
pub const HARMONIC_LIMIT: f64 = 1e-6;
pub const ORDER_WINDOW: f64 = 0.3;
pub const DIVERGENCE_LIMIT: f64 = 1e-10;
pub const WEAK_LIMIT: f64 = 1e-6;
/// Cells per axis for the weak checks in three dimensions.
const THREE_DIM_CELLS: usize = 5;

fn row(kind: &str, index: Option<usize>, x: &[f64], h: f64, value: f64, order: Option<f64>) -> Vec<Cell> {
    let mut r = vec![kind.into(), index.into()];
    r.extend(x.iter().map(|&v| Cell::Num(v)));
    r.extend([h.into(), value.into(), order.into()]);
    r
}

/// `(2, 1/2, −1/2, 0, …)`, a point well away from the origin.
fn ball_center(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n];
    c[0] = 2.0;
    c[1] = 0.5;
    if n > 2 {
        c[2] = -0.5;
    }
    c
}

pub fn run(args: &KernelArgs) -> anyhow::Result<Outcome> {
    let n = dimension(args.common.n, 3)?;
    let p = exponent(args.common.p, 2.0)?;
    if args.points == 0 {
        return Err(usage("--points must be positive"));
    }
    if args.steps.0.len() < 3 {
        return Err(usage("--steps needs at least three step sizes"));
    }
    let seed = args.common.seed;
    let f = p_dirac_solution(n, p)?;
    let harmonic = p_harmonic_radial(n, p)?;
    let points = shell_samples(n, args.points, 1.0, 3.0, seed);

    let mut columns: Vec<String> = vec!["kind".into(), "index".into()];
    columns.extend(coordinate_columns(n));
    columns.extend(["h".into(), "residual".into(), "order".into()]);
    let mut table = Table::new(columns);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for (i, x) in points.iter().enumerate() {
        let r = p_dirac_residual(&f, p, x, args.h, true)?.norm();
        worst = worst.max(r);
        table.push(row("p-dirac-richardson", Some(i), x, args.h, r, None));
    }
    checks.push(Check::at_most("p-dirac strong residual", worst, STRONG_LIMIT));

    let mut sweep = Vec::new();
    for &s in &args.steps.0 {
        let mut m = 0.0f64;
        for (i, x) in points.iter().enumerate() {
            let r = p_dirac_residual(&f, p, x, s, false)?.norm();
            m = m.max(r);
            table.push(row("p-dirac-plain", Some(i), x, s, r, None));
        }
        sweep.push((s, m));
    }
    let order = convergence_order(&sweep)?;
    for &(s, m) in &sweep {
        let mut r = vec!["p-dirac-order".into(), Cell::Empty];
        r.extend((0..n).map(|_| Cell::Empty));
        r.extend([s.into(), m.into(), order.into()]);
        table.push(r);
    }
    checks.push(Check::at_most("p-dirac plain-difference order |q - 2|", (order - 2.0).abs(), ORDER_WINDOW));

    let kind = if (p - n as f64).abs() < 1e-14 { "log-harmonic-richardson" } else { "p-harmonic-richardson" };
    let mut worst = 0.0f64;
    for (i, x) in points.iter().enumerate() {
        let r = p_harmonic_residual(&harmonic, p, x, args.h, true)?.norm();
        worst = worst.max(r);
        table.push(row(kind, Some(i), x, args.h, r, None));
    }
    checks.push(Check::at_most(format!("{} strong residual", harmonic.label()), worst, HARMONIC_LIMIT));

    if args.weak {
        let cells = args.cells.unwrap_or(if n == 3 { THREE_DIM_CELLS } else { QuadratureRule::default_for(n).cells });
        let rule = QuadratureRule::new(args.quad_order, cells)?;
        let order = rule.order as f64;
        let ball = Domain::ball(ball_center(n), 1.0);
        let annulus = Domain::Annulus {
            center: vec![0.0; n],
            inner: 0.5,
            outer: 2.5,
        };
        let mut div = 0.0f64;
        let mut dirac = 0.0f64;
        let mut harm = 0.0f64;
        let mut all_converge = true;
        for (k, eta) in test_family(&ball, args.bumps, seed)?.iter().enumerate() {
            let d = divergence_check(eta, &rule)?;
            div = div.max(d);
            table.push(row("divergence", Some(k), &eta.center, order, d, None));
            let pairing = weak_ap_dirac_pairing(&f, p, &WeightFunction::unit(), &ball, eta, &rule)?;
            let r = pairing.blade_residuals().iter().map(|r| r.normalized).fold(0.0, f64::max);
            dirac = dirac.max(r);
            table.push(row("weak-p-dirac", Some(k), &eta.center, order, r, None));
            let conv = quadrature_convergence(&rule, |q| weak_p_dirac_residual(&f, p, &ball, eta, q))?;
            all_converge &= conv.converging;
            table.push(row("weak-p-dirac-doubled", Some(k), &eta.center, conv.doubled_order as f64, conv.doubled_residual, None));
        }
        for (k, eta) in test_family(&annulus, args.bumps, seed.wrapping_add(1))?.iter().enumerate() {
            let d = divergence_check(eta, &rule)?;
            div = div.max(d);
            table.push(row("divergence", Some(args.bumps + k), &eta.center, order, d, None));
            let conv = quadrature_convergence(&rule, |q| weak_p_harmonic_residual(&harmonic, p, &annulus, eta, q))?;
            harm = harm.max(conv.residual);
            all_converge &= conv.converging;
            table.push(row("weak-p-harmonic", Some(k), &eta.center, order, conv.residual, None));
            table.push(row("weak-p-harmonic-doubled", Some(k), &eta.center, conv.doubled_order as f64, conv.doubled_residual, None));
        }
        checks.push(Check::at_most("integral of D eta (normalized)", div, DIVERGENCE_LIMIT));
        checks.push(Check::at_most("weak p-Dirac residual", dirac, WEAK_LIMIT));
        checks.push(Check::at_most("weak p-harmonic residual", harm, WEAK_LIMIT));
        checks.push(Check::holds("weak residuals drop 10x under order doubling", all_converge));
    }

    let mut out = Outcome::new("kernel-residual", args, table)?;
    out.checks = checks;
    out.report("fitted_order", &order)?;
    Ok(out)
}
