//! Extended-precision reference computations shared by the integration tests.
#![allow(dead_code)]

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

pub type F = FBig<HalfEven, 2>;

/// Working precision in bits (about 77 decimal digits).
pub const PREC: usize = 256;

pub fn hp(v: f64) -> F {
    F::try_from(v).expect("finite").with_precision(PREC).value()
}

pub fn hp_int(v: usize) -> F {
    F::from(v).with_precision(PREC).value()
}

pub fn to_f64(v: &F) -> f64 {
    v.to_f64().value()
}

/// `b_i = e^{-2/γ} (2/γ)^i / i!` for `i = 0..=i_max`.
pub fn gaussian_dot_coefficients(gamma: f64, i_max: usize) -> Vec<F> {
    let ratio = hp(2.0) / hp(gamma);
    let mut b = vec![(-ratio.clone()).exp()];
    for i in 1..=i_max {
        let next = &b[i - 1] * &ratio / hp_int(i);
        b.push(next);
    }
    b
}

/// `Σ_i s_i c_i h_i(x)` with the normalized probabilists' Hermite recurrence,
/// where `c_i = sqrt(b_i)` (`ntk = false`) or `sqrt(b_i / (i+1))` (`ntk = true`).
pub fn activation(b: &[F], signs: &[i8], ntk: bool, x: f64) -> f64 {
    let x = hp(x);
    let mut prev = hp(0.0);
    let mut cur = hp(1.0);
    let mut sum = hp(0.0);
    for (i, bi) in b.iter().enumerate() {
        let c = if ntk { (bi / hp_int(i + 1)).sqrt() } else { bi.sqrt() };
        let term = &c * &cur;
        sum = if signs[i] > 0 { sum + term } else { sum - term };
        let next = (&x * &cur - hp_int(i).sqrt() * &prev) / hp_int(i + 1).sqrt();
        prev = cur;
        cur = next;
    }
    to_f64(&sum)
}

pub fn all_plus(len: usize) -> Vec<i8> {
    vec![1; len]
}

/// `+ + - - + + - - ...`
pub fn bi_alternating(len: usize) -> Vec<i8> {
    (0..len).map(|i| if i % 4 < 2 { 1 } else { -1 }).collect()
}
