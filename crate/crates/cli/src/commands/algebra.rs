use pdirac::clifford::{pin_action, reflect};
use pdirac::{Multivector, VectorFactorList};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::AlgebraArgs;
use crate::commands::usage;
use crate::output::{Check, Outcome, Table};

const RELATIVE: f64 = 1e-12;

/// Sign and mask of `e_A e_B` from sorting the concatenated index list by
/// adjacent swaps; equal neighbours cancel to −1.
pub fn swap_sort_product(a: usize, b: usize) -> (usize, f64) {
    let bits = |m: usize| (0..usize::BITS as usize).filter(move |i| m >> i & 1 == 1);
    let mut idx: Vec<usize> = bits(a).chain(bits(b)).collect();
    let mut sign = 1.0;
    let mut i = 0;
    while i + 1 < idx.len() {
        if idx[i] > idx[i + 1] {
            idx.swap(i, i + 1);
            sign = -sign;
            i = i.saturating_sub(1);
        } else if idx[i] == idx[i + 1] {
            idx.drain(i..i + 2);
            sign = -sign;
            i = i.saturating_sub(1);
        } else {
            i += 1;
        }
    }
    (idx.iter().fold(0, |m, k| m | 1 << k), sign)
}

fn random_mv(rng: &mut ChaCha8Rng, n: usize) -> Multivector {
    Multivector::from_coeffs(n, (0..1 << n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|c| c * c).sum::<f64>() > 1e-2 {
            return v;
        }
    }
}

fn lipschitz(rng: &mut ChaCha8Rng, n: usize) -> VectorFactorList {
    let j = rng.gen_range(1..=4);
    let vs: Vec<Vec<f64>> = (0..j).map(|_| random_vec(rng, n)).collect();
    VectorFactorList::from_vectors(&vs).expect("nonzero factors")
}

/// Largest error of each identity over `cases` seeded samples in `Cl_n`.
fn identity_errors(n: usize, cases: usize, seed: u64) -> anyhow::Result<Vec<(&'static str, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 32);
    let mut worst = [0.0f64; 7];
    for _ in 0..cases {
        let (a, b, c) = (random_mv(&mut rng, n), random_mv(&mut rng, n), random_mv(&mut rng, n));
        let assoc = (&(&(&a * &b) * &c) - &(&a * &(&b * &c))).norm() / (1.0 + a.norm() * b.norm() * c.norm());
        let ab = &a * &b;
        let scale = 1.0 + a.norm() * b.norm();
        let rev = (&ab.reversion() - &(&b.reversion() * &a.reversion())).norm() / scale;
        let conj = (&ab.conjugation() - &(&b.conjugation() * &a.conjugation())).norm() / scale;
        let sc = ((&a.conjugation() * &a).scalar_part() - a.norm_sq()).abs() / a.norm_sq();

        let l = lipschitz(&mut rng, n).product();
        let mult = ((&l * &a).norm() - l.norm() * a.norm()).abs() / (l.norm() * a.norm());

        let pin = lipschitz(&mut rng, n).normalized();
        let x = Multivector::vector(&random_vec(&mut rng, n));
        let y = Multivector::vector(&random_vec(&mut rng, n));
        let (px, py) = (pin_action(&pin, &x)?, pin_action(&pin, &y)?);
        let dot = (px.dot(&py) - x.dot(&y)).abs() / (1.0 + x.norm() * y.norm());

        let m = pin.factors()[0].clone();
        let r = reflect(&m, &x)?;
        let (mv, xv) = (m.vector_part(), x.vector_part());
        let d: f64 = mv.iter().zip(&xv).map(|(s, t)| s * t).sum();
        let householder: Vec<f64> = xv.iter().zip(&mv).map(|(xi, mi)| xi - 2.0 * d * mi).collect();
        let refl = (&r - &Multivector::vector(&householder)).norm() / (1.0 + x.norm());

        for (w, e) in worst.iter_mut().zip([assoc, rev, conj, sc, mult, dot, refl]) {
            *w = w.max(e);
        }
    }
    Ok(vec![
        ("associativity", worst[0], RELATIVE),
        ("reversion-anti-automorphism", worst[1], RELATIVE),
        ("conjugation-anti-automorphism", worst[2], RELATIVE),
        ("conjugate-pairing-norm", worst[3], RELATIVE),
        ("lipschitz-norm-multiplicative", worst[4], RELATIVE),
        ("pin-action-dot-product", worst[5], RELATIVE),
        // the product y x y rounds differently from x − 2(x·y)y by a few ulps
        ("reflection-formula", worst[6], 1e-14),
    ])
}

/// Number of blade pairs where the product disagrees with the swap-sort oracle.
fn blade_mismatches(n: usize) -> anyhow::Result<usize> {
    let mut bad = 0;
    for a in 0..1usize << n {
        for b in 0..1usize << n {
            let (mask, sign) = swap_sort_product(a, b);
            let mut expected = Multivector::zero(n);
            expected.set(mask, sign);
            if Multivector::blade(n, a).geometric_product(&Multivector::blade(n, b))? != expected {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Pairs `(i, j)` where `e_i e_j + e_j e_i ≠ −2δ_ij` exactly.
fn anticommutation_failures(n: usize) -> usize {
    let mut bad = 0;
    for i in 1..=n {
        for j in 1..=n {
            let (ei, ej) = (Multivector::e(n, i), Multivector::e(n, j));
            let s = &(&ei * &ej) + &(&ej * &ei);
            let expected = Multivector::scalar(n, if i == j { -2.0 } else { 0.0 });
            if s != expected {
                bad += 1;
            }
        }
    }
    bad
}

pub fn run(args: &AlgebraArgs) -> anyhow::Result<Outcome> {
    let dims: Vec<usize> = match args.common.n {
        Some(n) if (1..=6).contains(&n) => vec![n],
        Some(n) => return Err(usage(format!("algebra-selftest supports 1 <= n <= 6, got {n}"))),
        None => (2..=6).collect(),
    };
    if args.cases == 0 {
        return Err(usage("--cases must be positive"));
    }
    let mut table = Table::new(["n", "check", "cases", "max_error", "limit", "pass"]);
    let mut checks = Vec::new();
    for &n in &dims {
        for (name, err, limit) in identity_errors(n, args.cases, args.common.seed)? {
            let c = Check::at_most(format!("{name} n={n}"), err, limit);
            table.push(vec![n.into(), name.into(), args.cases.into(), err.into(), limit.into(), c.pass.into()]);
            checks.push(c);
        }
        for (name, bad, cases) in [
            ("swap-sort-oracle", blade_mismatches(n)?, 1usize << (2 * n)),
            ("anticommutation", anticommutation_failures(n), n * n),
        ] {
            let c = Check::at_most(format!("{name} n={n}"), bad as f64, 0.0);
            table.push(vec![n.into(), name.into(), cases.into(), (bad as f64).into(), 0.0.into(), c.pass.into()]);
            checks.push(c);
        }
    }
    let mut out = Outcome::new("algebra-selftest", args, table)?;
    out.checks = checks;
    Ok(out)
}
