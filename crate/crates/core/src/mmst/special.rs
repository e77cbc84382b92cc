use statrs::function::gamma::digamma;

/// Trigamma function ψ'(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))))
}

pub const ALPHA_MIN: f64 = 0.05;
pub const ALPHA_MAX: f64 = 100.0;

/// Solves `ln a + 1 - ψ(a) = c` for the Gamma shape `a` (rate tied to
/// shape), clamped to `[ALPHA_MIN, ALPHA_MAX]`. `c` is `E[W] - E[ln W]`,
/// which is >= 1 for any distribution of `W`.
pub fn solve_shape(c: f64) -> f64 {
    // h(u) = u + 1 - ψ(e^u) - c is strictly decreasing in u = ln a.
    let h = |u: f64| u + 1.0 - digamma(u.exp()) - c;
    let (mut lo, mut hi) = (ALPHA_MIN.ln(), ALPHA_MAX.ln());
    if h(hi) >= 0.0 {
        return ALPHA_MAX;
    }
    if h(lo) <= 0.0 {
        return ALPHA_MIN;
    }
    let mut u = if c > 1.0 {
        (0.5 / (c - 1.0)).ln().clamp(lo, hi)
    } else {
        hi
    };
    for _ in 0..100 {
        let v = h(u);
        if v.abs() < 1e-13 {
            break;
        }
        if v > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let a = u.exp();
        let dh = 1.0 - a * trigamma(a);
        let mut next = u - v / dh;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() < 1e-14 {
            u = next;
            break;
        }
        u = next;
    }
    u.exp()
}
