use pdirac::sphere::{
    cap_test_family, cayley_ratio_check, lr_identity_check, p_spherical_dirac_residual, sphere_samples, spherical_p_harmonic_check,
    weak_spherical_residual, CapRule, SpherePoint, SphericalCap, SphericalField,
};

use crate::args::SphereArgs;
use crate::commands::{coordinate_columns, dimension, exponent, usage};
use crate::output::{Cell, Check, Outcome, Table};

pub const KERNEL_LIMIT: f64 = 1e-6;
pub const WEAK_LIMIT: f64 = 1e-5;
pub const CAYLEY_LIMIT: f64 = 1e-6;

/// Samples used for the lr identity and p-spherical-harmonic reports.
const REPORT_POINTS: usize = 5;

fn row(kind: &str, index: usize, x: &[f64], value: f64) -> Vec<Cell> {
    let mut r = vec![kind.into(), index.into()];
    r.extend(x.iter().map(|&v| Cell::Num(v)));
    r.push(value.into());
    r
}

/// A cap of angle 0.8 centred roughly 1.9 rad away from `y`.
fn cap_away_from(y: &SpherePoint) -> anyhow::Result<SphericalCap> {
    let c = y.coords();
    let k = (0..c.len())
        .min_by(|a, b| c[*a].abs().partial_cmp(&c[*b].abs()).expect("finite"))
        .expect("nonempty");
    let mut u = vec![0.0; c.len()];
    u[k] = 1.0;
    let proj = c[k];
    let dir: Vec<f64> = u.iter().zip(c).map(|(a, b)| a - proj * b - 0.3 * b).collect();
    Ok(SphericalCap::new(SpherePoint::new(&dir)?, 0.8)?)
}

pub fn run(args: &SphereArgs) -> anyhow::Result<Outcome> {
    let n = dimension(args.common.n, 2)?;
    let p = exponent(args.common.p, n as f64)?;
    let theta = args.theta;
    if !(theta > 0.0 && theta < 0.1) {
        return Err(usage("--theta must lie in (0, 0.1)"));
    }
    if args.points == 0 || args.bumps == 0 {
        return Err(usage("--points and --bumps must be positive"));
    }
    let y = match &args.y {
        Some(v) if v.0.len() == n + 1 => SpherePoint::new(&v.0)?,
        Some(v) => return Err(usage(format!("--y needs {} coordinates, got {}", n + 1, v.0.len()))),
        None => {
            let mut north = vec![0.0; n + 1];
            north[n] = 1.0;
            SpherePoint::from_unit(north)?
        }
    };
    let seed = args.common.seed;
    let samples = sphere_samples(n, args.points, std::slice::from_ref(&y), 0.5, seed);
    let cap = cap_away_from(&y)?;
    let bumps = cap_test_family(&cap, args.bumps, seed)?;
    let rule = CapRule::default_rule();

    let mut columns: Vec<String> = vec!["kind".into(), "index".into()];
    columns.extend(coordinate_columns(n + 1));
    columns.push("value".into());
    let mut table = Table::new(columns);
    let mut checks = Vec::new();

    let mut exponents = vec![2.0];
    if (p - 2.0).abs() > 1e-14 {
        exponents.push(p);
    }
    for &q in &exponents {
        let f = SphericalField::kernel(&y, q)?;
        let mut worst = 0.0f64;
        for (i, x) in samples.iter().enumerate() {
            let r = p_spherical_dirac_residual(&f, q, x, theta)?.norm();
            worst = worst.max(r);
            table.push(row(&format!("kernel-residual p={q}"), i, x.coords(), r));
        }
        checks.push(Check::at_most(format!("spherical kernel residual p={q}"), worst, KERNEL_LIMIT));
        let mut weak = 0.0f64;
        for (k, eta) in bumps.iter().enumerate() {
            let r = weak_spherical_residual(&f, q, &cap, eta, &rule)?.normalized;
            weak = weak.max(r);
            table.push(row(&format!("weak-residual p={q}"), k, eta.center.coords(), r));
        }
        checks.push(Check::at_most(format!("weak spherical residual p={q}"), weak, WEAK_LIMIT));
    }

    let report_points = &samples[..samples.len().min(REPORT_POINTS)];
    let lr = report_points
        .iter()
        .map(|x| lr_identity_check(x, &y, p, theta))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, r) in lr.iter().enumerate() {
        table.push(row("lr-identity-discrepancy", i, &r.x, r.discrepancy));
    }
    let harmonic = spherical_p_harmonic_check(&y, p, report_points, theta)?;
    for (i, s) in harmonic.samples.iter().enumerate() {
        table.push(row("p-spherical-harmonic-residual", i, &s.x, s.residual_norm));
    }
    checks.push(Check::holds(
        "lr identity report with componentwise ratios",
        !lr.is_empty() && lr.iter().all(|r| r.ratios.len() == 1 << (n + 1)),
    ));
    checks.push(Check::holds("p-spherical-harmonic report", harmonic.samples.len() == report_points.len()));

    let cayley = cayley_ratio_check(n, args.points, seed)?;
    checks.push(Check::at_most("Cayley kernel ratio constancy", cayley.max_relative_deviation, CAYLEY_LIMIT));

    let mut out = Outcome::new("sphere-check", args, table)?;
    out.checks = checks;
    out.report("lr_identity", &lr)?;
    out.report("p_spherical_harmonic", &harmonic)?;
    out.report("cayley", &cayley)?;
    Ok(out)
}
