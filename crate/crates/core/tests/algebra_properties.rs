use pdirac::clifford::{pin_action, reflect};
use pdirac::{Multivector, VectorFactorList};
use proptest::prelude::*;

// Sign and mask of e_A e_B by sorting the concatenated index list with
// adjacent swaps and cancelling equal neighbours (e_i e_i = -1).
fn swap_sort_product(a: usize, b: usize) -> (usize, f64) {
    let mut idx: Vec<usize> = (0..usize::BITS as usize).filter(|i| a >> i & 1 == 1).collect();
    idx.extend((0..usize::BITS as usize).filter(|i| b >> i & 1 == 1));
    let mut sign = 1.0;
    loop {
        let mut changed = false;
        let mut i = 0;
        while i + 1 < idx.len() {
            if idx[i] > idx[i + 1] {
                idx.swap(i, i + 1);
                sign = -sign;
                changed = true;
            } else if idx[i] == idx[i + 1] {
                idx.drain(i..i + 2);
                sign = -sign;
                changed = true;
                continue;
            }
            i += 1;
        }
        if !changed {
            break;
        }
    }
    (idx.iter().fold(0, |m, i| m | 1 << i), sign)
}

fn mv(n: usize) -> impl Strategy<Value = Multivector> {
    prop::collection::vec(-2.0..2.0f64, 1 << n).prop_map(move |c| Multivector::from_coeffs(n, c).unwrap())
}

fn vec_mv(n: usize) -> impl Strategy<Value = Multivector> {
    prop::collection::vec(-2.0..2.0f64, n).prop_map(|c| Multivector::vector(&c))
}

fn unit_vec(n: usize) -> impl Strategy<Value = Multivector> {
    vec_mv(n)
        .prop_filter("nonzero", |v| v.norm() > 1e-3)
        .prop_map(|v| {
            let s = 1.0 / v.norm();
            v.scale(s)
        })
}

fn dim_and<T: std::fmt::Debug>(f: fn(usize) -> BoxedStrategy<T>) -> impl Strategy<Value = (usize, T)> {
    (2usize..=6).prop_flat_map(move |n| (Just(n), f(n)))
}

#[test]
fn geometric_product_matches_swap_sort_oracle_on_all_blade_pairs() {
    for n in 1..=6 {
        for a in 0..1usize << n {
            for b in 0..1usize << n {
                let (mask, sign) = swap_sort_product(a, b);
                let p = Multivector::blade(n, a).geometric_product(&Multivector::blade(n, b)).unwrap();
                let mut expected = Multivector::zero(n);
                expected.set(mask, sign);
                assert_eq!(p, expected, "n={n} a={a:b} b={b:b}");
            }
        }
    }
}

#[test]
fn basis_vectors_anticommute_and_square_to_minus_one() {
    for n in 1..=6 {
        for i in 1..=n {
            let ei = Multivector::e(n, i);
            assert_eq!(&ei * &ei, Multivector::scalar(n, -1.0));
            for j in (i + 1)..=n {
                let ej = Multivector::e(n, j);
                assert_eq!(&ei * &ej, -(&ej * &ei));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn product_is_associative((_n, (a, b, c)) in dim_and(|n| (mv(n), mv(n), mv(n)).boxed())) {
        let lhs = &(&a * &b) * &c;
        let rhs = &a * &(&b * &c);
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * (1.0 + a.norm() * b.norm() * c.norm()));
    }

    #[test]
    fn reversion_and_conjugation_are_anti_automorphisms((_n, (a, b)) in dim_and(|n| (mv(n), mv(n)).boxed())) {
        let ab = &a * &b;
        let scale = 1.0 + a.norm() * b.norm();
        let rev = &b.reversion() * &a.reversion();
        prop_assert!((&ab.reversion() - &rev).norm() <= 1e-12 * scale);
        let conj = &b.conjugation() * &a.conjugation();
        prop_assert!((&ab.conjugation() - &conj).norm() <= 1e-12 * scale);
    }

    #[test]
    fn conjugate_pairing_gives_squared_norm((_n, a) in dim_and(|n| mv(n).boxed())) {
        let s = (&a.conjugation() * &a).scalar_part();
        prop_assert!((s - a.norm_sq()).abs() <= 1e-12 * a.norm_sq().max(1e-300));
    }

    #[test]
    fn norm_is_multiplicative_for_vector_products(
        (_n, (factors, a)) in dim_and(|n| (prop::collection::vec(vec_mv(n), 1..=4), mv(n)).boxed())
    ) {
        let x = factors.iter().skip(1).fold(factors[0].clone(), |acc, v| &acc * v);
        let lhs = (&x * &a).norm();
        let rhs = x.norm() * a.norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn pin_action_preserves_dot_products(
        (_n, (factors, x, y)) in dim_and(|n| (prop::collection::vec(unit_vec(n), 1..=4), vec_mv(n), vec_mv(n)).boxed())
    ) {
        let a = VectorFactorList::new(factors).unwrap();
        let ax = pin_action(&a, &x).unwrap();
        let ay = pin_action(&a, &y).unwrap();
        prop_assert!(ax.is_grade(1, 1e-12 * (1.0 + x.norm())));
        prop_assert!((ax.dot(&ay) - x.dot(&y)).abs() <= 1e-12 * (1.0 + x.norm() * y.norm()));
    }

    #[test]
    fn reflection_matches_the_householder_formula((_n, (y, x)) in dim_and(|n| (unit_vec(n), vec_mv(n)).boxed())) {
        let r = reflect(&y, &x).unwrap();
        let yv = y.vector_part();
        let xv = x.vector_part();
        let d: f64 = yv.iter().zip(&xv).map(|(a, b)| a * b).sum();
        let expected: Vec<f64> = xv.iter().zip(&yv).map(|(xi, yi)| xi - 2.0 * d * yi).collect();
        let diff = &r - &Multivector::vector(&expected);
        prop_assert!(diff.norm() <= 1e-12 * (1.0 + x.norm()));
    }
}
