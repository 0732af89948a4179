use std::collections::HashMap;

use pdirac::field::p_harmonic_exponent;
use pdirac::solver::{
    energy_difference, energy_gradient, recovery_error, solve_dirichlet, LatticeDomain, LatticeField, Region, SolverConfig, Stencil,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{SolveArgs, StencilArg};
use crate::commands::{coordinate_columns, dimension, exponent, usage};
use crate::output::{Cell, Check, Outcome, Table};

pub const GRADIENT_LIMIT: f64 = 1e-6;
pub const RADIAL_LIMIT: f64 = 5e-2;
pub const POLYNOMIAL_LIMIT: f64 = 1e-6;

type Exact = Box<dyn Fn(&[f64]) -> f64>;

enum Boundary {
    Exact { name: &'static str, f: Exact },
    File(HashMap<Vec<i64>, f64>),
}

fn lattice_key(x: &[f64], h: f64) -> Vec<i64> {
    x.iter().map(|v| (v / h).round() as i64).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Reads `x_1,…,x_n,u` rows; a non-numeric first row is taken as a header
/// and `#` starts a comment.
fn read_boundary_file(path: &str, n: usize, h: f64) -> anyhow::Result<HashMap<Vec<i64>, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(format!("cannot read boundary file '{path}': {e}")))?;
    let mut values = HashMap::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| usage(format!("{path}: {e}")))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if k == 0 => continue,
            Err(_) => return Err(usage(format!("{path}: row {} is not numeric", k + 1))),
        };
        if row.len() != n + 1 {
            return Err(usage(format!("{path}: row {} has {} fields, expected {}", k + 1, row.len(), n + 1)));
        }
        values.insert(lattice_key(&row[..n], h), row[n]);
    }
    Ok(values)
}

fn boundary(args: &SolveArgs, n: usize, p: f64, h: f64) -> anyhow::Result<Boundary> {
    let nf = n as f64;
    Ok(match args.bc.as_str() {
        "radial" if (p - nf).abs() < 1e-14 => Boundary::Exact {
            name: "radial",
            f: Box::new(|x| norm(x).ln()),
        },
        "radial" => {
            let a = p_harmonic_exponent(n, p);
            Boundary::Exact {
                name: "radial",
                f: Box::new(move |x| norm(x).powf(a)),
            }
        }
        "linear" => Boundary::Exact {
            name: "linear",
            f: Box::new(|x| 1.0 + x.iter().enumerate().map(|(j, v)| v * (-0.5f64).powi(j as i32)).sum::<f64>()),
        },
        "quadratic" if p == 2.0 => Boundary::Exact {
            name: "quadratic",
            f: Box::new(|x| x[0] * x[0] - x[1] * x[1]),
        },
        "quadratic" => return Err(usage("quadratic boundary data is p-harmonic only for p = 2")),
        other => match other.strip_prefix("file:") {
            Some(path) => Boundary::File(read_boundary_file(path, n, h)?),
            None => return Err(usage(format!("unknown boundary data '{other}'"))),
        },
    })
}

/// Largest relative mismatch between the energy gradient and central
/// differences of the energy at seeded coordinates of a perturbed field.
fn gradient_check(domain: &LatticeDomain, u: &LatticeField, p: f64, eps: f64, seed: u64) -> anyhow::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = u.width();
    let free = domain.free_nodes();
    let mut perturbed = u.clone();
    for &i in free {
        for v in perturbed.node_mut(i) {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let g = energy_gradient(domain, &perturbed, p, eps)?;
    let scale = g.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = free[rng.gen_range(0..free.len())];
        let m = rng.gen_range(0..w);
        let mut e = LatticeField::zeros(domain, w)?;
        e.node_mut(i)[m] = 1.0;
        let s = 1e-5;
        let plus = energy_difference(domain, &perturbed, &e, s, p, eps)?;
        let minus = energy_difference(domain, &perturbed, &e, -s, p, eps)?;
        let fd = (plus - minus) / (2.0 * s);
        let exact = g.node(i)[m];
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3 * scale));
    }
    Ok(worst)
}

#[derive(Serialize)]
struct Recovery {
    data: &'static str,
    max_abs: f64,
    max_rel: f64,
}

pub fn run(args: &SolveArgs) -> anyhow::Result<Outcome> {
    let n = dimension(args.common.n, 2)?;
    let p = exponent(args.common.p, 1.5)?;
    let h = args.h;
    if !(h > 0.0) {
        return Err(usage("--h must be positive"));
    }
    let region = Region::parse(&args.region, n)?;
    let stencil = match args.stencil {
        StencilArg::CellAveraged => Stencil::CellAveraged,
        StencilArg::Forward => Stencil::Forward,
    };
    let domain = LatticeDomain::new(region, h, stencil)?;
    let width = if args.clifford { 1 << n } else { 1 };
    let bc = boundary(args, n, p, h)?;
    if let Boundary::Exact { name: "radial", .. } = bc {
        if (0..domain.node_count()).any(|i| domain.in_region(i) && norm(&domain.coords(i)) < 0.5 * h) {
            return Err(usage("radial data is singular at the origin, which lies in the region"));
        }
    }
    let data = match &bc {
        Boundary::Exact { f, .. } => LatticeField::from_fn(&domain, width, |x| {
            let mut v = vec![0.0; width];
            v[0] = f(x);
            v
        })?,
        Boundary::File(values) => {
            for i in domain.boundary_nodes() {
                let x = domain.coords(i);
                if !values.contains_key(&lattice_key(&x, h)) {
                    return Err(usage(format!("boundary file has no value at node {x:?}")));
                }
            }
            LatticeField::from_fn(&domain, width, |x| {
                let mut v = vec![0.0; width];
                v[0] = values.get(&lattice_key(x, h)).copied().unwrap_or(0.0);
                v
            })?
        }
    };
    let initial = LatticeField::dirichlet(&domain, &data, &vec![0.0; width])?;

    let mut config = SolverConfig::new(p);
    if let Some(e) = args.eps {
        config.epsilon = e;
    }
    config.eps_schedule = args.eps_schedule.as_ref().map(|s| s.0.clone());
    config.max_iterations = args.max_iter;
    config.validate()?;
    let grad_err = gradient_check(&domain, &initial, p, *config.schedule().last().expect("stage"), args.common.seed)?;
    let (u, diag) = solve_dirichlet(&domain, &initial, &config)?;

    let mut columns: Vec<String> = coordinate_columns(n);
    columns.extend((0..width).map(|m| format!("u_{m}")));
    columns.extend(["exact".into(), "free".into()]);
    let mut table = Table::new(columns);
    for i in 0..domain.node_count() {
        if !domain.in_region(i) {
            continue;
        }
        let x = domain.coords(i);
        let mut row: Vec<Cell> = x.iter().map(|&v| Cell::Num(v)).collect();
        row.extend(u.node(i).iter().map(|&v| Cell::Num(v)));
        row.push(match &bc {
            Boundary::Exact { f, .. } => f(&x).into(),
            Boundary::File(_) => Cell::Empty,
        });
        row.push(domain.is_free(i).into());
        table.push(row);
    }

    let mut out = Outcome::new("solve", args, table)?;
    out.check(Check::holds("solver converged", diag.converged));
    out.check(Check::holds("monotone energy descent", diag.monotone));
    out.check(Check::at_most("energy gradient vs finite differences", grad_err, GRADIENT_LIMIT));
    if let Boundary::Exact { name, f } = &bc {
        let err = recovery_error(&domain, &u, f);
        if *name == "radial" {
            let limit = args.recovery_tol.unwrap_or(RADIAL_LIMIT);
            out.check(Check::at_most("radial recovery (max relative error)", err.max_rel, limit));
        } else {
            let limit = args.recovery_tol.unwrap_or(POLYNOMIAL_LIMIT);
            out.check(Check::at_most(format!("{name} recovery (max abs error)"), err.max_abs, limit));
        }
        out.report(
            "recovery",
            &Recovery {
                data: name,
                max_abs: err.max_abs,
                max_rel: err.max_rel,
            },
        )?;
    }
    out.report("diagnostics", &diag)?;
    let diagnostics = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "params": out.params,
        "checks": out.checks,
        "recovery": out.reports.get("recovery"),
        "diagnostics": diag,
    });
    out.attachments.push((".diagnostics.json".into(), serde_json::to_string_pretty(&diagnostics)? + "\n"));
    Ok(out)
}
