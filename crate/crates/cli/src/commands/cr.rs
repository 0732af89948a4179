use num_complex::Complex64;
use pdirac::complex::{cl2_consistency_check, p_cr_solution, p_cr_sweep, theorem5_check, transfer_identity_check, HolomorphicMap};
use pdirac::quadrature::QuadratureRule;
use pdirac::weak::{test_family, BumpTestFunction};
use pdirac::Domain;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{parse_list, CrArgs};
use crate::commands::{exponent, usage};
use crate::output::{Cell, Check, Outcome, Table};

pub const STRONG_LIMIT: f64 = 1e-8;
pub const CL2_LIMIT: f64 = 1e-10;
pub const TRANSFER_LIMIT: f64 = 1e-6;
pub const WEAK_LIMIT: f64 = 1e-6;

fn complex_arg(s: &str) -> anyhow::Result<Complex64> {
    let v = parse_list(s).map_err(usage)?.0;
    match v.as_slice() {
        [re] => Ok(Complex64::new(*re, 0.0)),
        [re, im] => Ok(Complex64::new(*re, *im)),
        _ => Err(usage(format!("expected a complex number 're' or 're,im', got '{s}'"))),
    }
}

/// `square-plus:c`, `identity`, `translate:a,b` or `scale:a,b`.
pub fn parse_map(s: &str) -> anyhow::Result<HolomorphicMap> {
    let (head, arg) = match s.split_once(':') {
        Some((h, a)) => (h.trim(), Some(a)),
        None => (s.trim(), None),
    };
    match (head, arg) {
        ("identity", None) => Ok(HolomorphicMap::identity()),
        ("square-plus", Some(a)) => Ok(HolomorphicMap::square_plus(complex_arg(a)?)),
        ("translate", Some(a)) => Ok(HolomorphicMap::translation(complex_arg(a)?)),
        ("scale", Some(a)) => {
            let c = complex_arg(a)?;
            if c.norm() == 0.0 {
                return Err(usage("scale factor must be nonzero"));
            }
            Ok(HolomorphicMap::scaling(c))
        }
        _ => Err(usage(format!("unknown holomorphic map '{s}'"))),
    }
}

/// `annulus:a,b` about the origin or `ball:x,y,r`.
pub fn parse_domain(s: &str) -> anyhow::Result<Domain> {
    let bad = || usage(format!("cannot parse domain '{s}'"));
    let (head, arg) = s.split_once(':').ok_or_else(bad)?;
    let v = parse_list(arg).map_err(|_| bad())?.0;
    match (head.trim(), v.as_slice()) {
        ("annulus", [a, b]) if *a > 0.0 && b > a => Ok(Domain::Annulus {
            center: vec![0.0, 0.0],
            inner: *a,
            outer: *b,
        }),
        ("ball", [x, y, r]) if *r > 0.0 => Ok(Domain::ball(vec![*x, *y], *r)),
        _ => Err(bad()),
    }
}

fn row(kind: &str, index: usize, z: Complex64, value: f64) -> Vec<Cell> {
    vec![kind.into(), index.into(), z.re.into(), z.im.into(), value.into()]
}

pub fn run(args: &CrArgs) -> anyhow::Result<Outcome> {
    let p = exponent(args.common.p, 1.5)?;
    if let Some(n) = args.common.n {
        if n != 2 {
            return Err(usage("cr-check works in the plane; n must be 2"));
        }
    }
    if args.points == 0 || args.bumps == 0 {
        return Err(usage("--points and --bumps must be positive"));
    }
    let f = parse_map(&args.f)?;
    let domain = parse_domain(&args.domain)?;
    let rule = QuadratureRule::new(args.quad_order, args.cells)?;
    let g = p_cr_solution(p)?;
    let seed = args.common.seed;
    let mut table = Table::new(["kind", "index", "re", "im", "value"]);
    let mut checks = Vec::new();

    let sweep = p_cr_sweep(&g, p, 0.5, 2.0, args.points)?;
    let mut strong = 0.0f64;
    let mut cl2 = 0.0f64;
    for (i, s) in sweep.iter().enumerate() {
        let z = Complex64::new(s.z[0], s.z[1]);
        strong = strong.max(s.residual);
        table.push(row("p-cr-residual", i, z, s.residual));
        let c = cl2_consistency_check(&g, z, 1e-3)? / (1.0 + g.value(z).norm());
        cl2 = cl2.max(c);
        table.push(row("cl2-consistency", i, z, c));
    }
    checks.push(Check::at_most("p-CR residual of the derived solution", strong, STRONG_LIMIT));
    checks.push(Check::at_most("Cl_2 Dirac operator matches the Wirtinger derivative", cl2, CL2_LIMIT));

    let (lo, hi) = domain.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transfer = 0.0f64;
    let mut literal = Vec::new();
    let mut k = 0;
    while k < args.points {
        let x = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if !domain.contains(&x) {
            continue;
        }
        let zeta = Complex64::new(x[0], x[1]);
        let w = f.value(zeta);
        let eta = BumpTestFunction::scalar(vec![w.re + 0.05, w.im - 0.05], 1.0)?;
        let r = transfer_identity_check(&f, &eta, zeta, 1e-3)?;
        transfer = transfer.max(r.discrepancy);
        literal.push(r.literal_discrepancy);
        table.push(row("transfer-identity", k, zeta, r.discrepancy));
        k += 1;
    }
    checks.push(Check::at_most("chain rule for d/dw-bar", transfer, TRANSFER_LIMIT));

    let mut weak = 0.0f64;
    let mut conjugate = Vec::new();
    for (k, eta) in test_family(&domain, args.bumps, seed)?.iter().enumerate() {
        let r = theorem5_check(&g, &f, p, &domain, eta, &rule)?;
        weak = weak.max(r.normalized);
        conjugate.push(r.conjugate_pairing);
        table.push(row("theorem5-weak-residual", k, Complex64::new(eta.center[0], eta.center[1]), r.normalized));
    }
    checks.push(Check::at_most(format!("theorem 5 weak residual ({})", f.label()), weak, WEAK_LIMIT));

    let mut out = Outcome::new("cr-check", args, table)?;
    out.checks = checks;
    out.report("transfer_literal_discrepancy", &literal)?;
    out.report("theorem5_conjugate_pairing", &conjugate)?;
    Ok(out)
}
