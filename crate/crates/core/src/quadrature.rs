//! One-dimensional quadrature helpers: adaptive Simpson integration for
//! smooth integrands and the trapezoid rule on tabulated values.

/// Adaptive Simpson integration of `f` over `[a, b]` to the given absolute
/// tolerance (with a small relative-error floor so huge integrands still
/// terminate). Non-finite integrand values stop refinement immediately and
/// propagate, so callers see `inf`/`NaN` instead of a runaway recursion.
/// Panics only on non-finite bounds; a zero-length interval integrates to
/// zero.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    assert!(a.is_finite() && b.is_finite(), "integration bounds must be finite");
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, abs_tol.max(1e-300), 30)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let refined = left + right;
    if !refined.is_finite() {
        return refined;
    }
    let delta = refined - whole;
    let limit = 15.0 * tol.max(1e-13 * refined.abs());
    if depth == 0 || delta.abs() <= limit {
        refined + delta / 15.0
    } else {
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Trapezoid rule over tabulated, strictly increasing abscissae.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}
