use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, Zero};
use proptest::prelude::*;
use tor_core::ddreal::{two_prod, two_prod_dekker, two_sum};
use tor_core::{DDComplex, DDReal};

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn qd(x: DDReal) -> BigRational {
    q(x.hi) + q(x.lo)
}

fn pow2(e: i32) -> BigRational {
    let one = BigInt::from(1);
    if e >= 0 {
        BigRational::from_integer(one << e as usize)
    } else {
        BigRational::new(one.clone(), one << (-e) as usize)
    }
}

/// `|got - exact| <= 2^-e * |scale|`.
fn within(got: &BigRational, exact: &BigRational, scale: &BigRational, e: i32) -> bool {
    (got - exact).abs() <= pow2(-e) * scale.abs()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3..1e3f64,
        (-1.0..1.0f64, -300i32..300).prop_map(|(m, e)| m * 2f64.powi(e)),
    ]
}

fn dd() -> impl Strategy<Value = DDReal> {
    (finite(), -1.0..1.0f64).prop_map(|(h, l)| DDReal::from_sum(h, l * h.abs() * 2f64.powi(-54)))
}

fn ulp(x: f64) -> f64 {
    let b = x.abs().to_bits();
    f64::from_bits(b + 1) - x.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn two_sum_is_error_free(a in finite(), b in finite()) {
        let (s, e) = two_sum(a, b);
        prop_assert_eq!(q(s) + q(e), q(a) + q(b));
        let x = DDReal::from(a) + DDReal::from(b);
        prop_assert_eq!(qd(x), q(a) + q(b));
    }

    #[test]
    fn two_prod_is_error_free(a in -1e150..1e150f64, b in -1e150..1e150f64) {
        let (p, e) = two_prod(a, b);
        prop_assert_eq!(q(p) + q(e), q(a) * q(b));
        let (p2, e2) = two_prod_dekker(a, b);
        prop_assert_eq!(q(p2) + q(e2), q(a) * q(b));
    }

    #[test]
    fn results_are_normalized(a in dd(), b in dd()) {
        for x in [a + b, a - b, a * b, a / b] {
            prop_assert_eq!(x.hi, x.hi + x.lo);
            prop_assert!(x.lo.abs() <= ulp(x.hi) / 2.0);
            prop_assert_eq!(DDReal::normalized(x.hi, x.lo), x);
        }
    }

    #[test]
    fn renormalization_is_idempotent(h in finite(), l in finite()) {
        let once = DDReal::normalized(h, l);
        prop_assert_eq!(DDReal::normalized(once.hi, once.lo), once);
    }

    #[test]
    fn arithmetic_error_bounds(a in dd(), b in dd()) {
        let (qa, qb) = (qd(a), qd(b));
        let mag = qa.abs() + qb.abs();
        prop_assert!(within(&qd(a + b), &(&qa + &qb), &mag, 104));
        let prod = &qa * &qb;
        prop_assert!(within(&qd(a * b), &prod, &prod, 103));
        if !qb.is_zero() {
            let quot = &qa / &qb;
            prop_assert!(within(&qd(a / b), &quot, &quot, 102));
        }
    }

    #[test]
    fn associativity_defect(a in dd(), b in dd(), c in dd()) {
        let l = qd((a + b) + c);
        let r = qd(a + (b + c));
        let mag = qd(a).abs() + qd(b).abs() + qd(c).abs();
        prop_assert!(within(&l, &r, &mag, 100));
    }

    #[test]
    fn sqrt_squares_back(x in 1e-200..1e200f64) {
        let s = DDReal::from(x).sqrt().unwrap();
        let back = qd(s.sqr());
        prop_assert!(within(&back, &q(x), &q(x), 101));
    }
}

#[test]
fn sqrt2_to_31_digits() {
    let s = DDReal::from(2.0).sqrt().unwrap();
    let reference: BigRational = {
        let digits = "14142135623730950488016887242096980785696718753769";
        let num: BigInt = digits.parse().unwrap();
        BigRational::new(num, BigInt::from(10).pow(49))
    };
    let tol = BigRational::new(BigInt::from(1), BigInt::from(10).pow(31));
    assert!((qd(s) - reference).abs() < tol);
    assert_eq!(s.to_sci_string(31), "1.414213562373095048801688724210e0");
}

#[test]
fn million_tenths() {
    let tenth = DDReal::from_ratio(1, 10);
    let mut acc = DDReal::ZERO;
    for _ in 0..1_000_000 {
        acc += tenth;
    }
    let expect = BigRational::from_integer(BigInt::from(100_000));
    let err = (qd(acc) - &expect).abs() / &expect;
    assert!(err < BigRational::new(BigInt::from(1), BigInt::from(10).pow(25)));

    // The binary64 literal 0.1 accumulates to 10^6 * fl(0.1), also to 25 digits.
    let mut acc = DDReal::ZERO;
    for _ in 0..1_000_000 {
        acc = acc.add_f64(0.1);
    }
    let exact = q(0.1) * BigRational::from_integer(BigInt::from(1_000_000));
    let err = (qd(acc) - &exact).abs() / &exact;
    assert!(err < BigRational::new(BigInt::from(1), BigInt::from(10).pow(25)));
}

#[test]
fn examples() {
    assert_eq!(DDReal::ONE + DDReal::ZERO, DDReal::ONE);
    let tiny = 2f64.powi(-60);
    let s = DDReal::ONE + DDReal::from(tiny);
    assert_eq!((s.hi, s.lo), (1.0, tiny));
    assert_eq!(DDReal::from(3.0) * DDReal::from(4.0), DDReal::from(12.0));
    let third = DDReal::ONE / DDReal::from(3.0);
    let back = qd(third * DDReal::from(3.0));
    assert!(within(
        &back,
        &BigRational::from_u8(1).unwrap(),
        &BigRational::from_u8(1).unwrap(),
        103
    ));
}

#[test]
fn complex_examples() {
    let z = DDComplex::from_f64(3.0, 4.0);
    assert_eq!(z.abs2(), DDReal::from(25.0));
    assert_eq!(z.conj(), DDComplex::from_f64(3.0, -4.0));
    let s = DDComplex::from(DDReal::from(7.0)).sqrt().unwrap();
    assert_eq!(s.re, DDReal::from(7.0).sqrt().unwrap());
    assert_eq!(s.im, DDReal::ZERO);
    let w = DDComplex::from_f64(-3.0, 4.0).sqrt().unwrap();
    assert!(((w * w) - DDComplex::from_f64(-3.0, 4.0)).abs2().to_f64() < 1e-60);
}

#[test]
fn inf_and_nan_propagate() {
    let inf = DDReal::from(f64::MAX) * DDReal::from(4.0);
    assert!(inf.hi.is_infinite());
    let nan = inf - inf;
    assert!(nan.hi.is_nan());
    assert!(DDReal::from(f64::NAN).sqrt().is_err());
}
