//! Simpson quadrature used by the density checks.

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Iterated adaptive Simpson over the rectangle `[ax, bx] × [ay, by]`.
pub fn adaptive_simpson_2d<F: Fn(f64, f64) -> f64>(
    f: &F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    tol: f64,
) -> f64 {
    let width = (bx - ax).abs().max(f64::MIN_POSITIVE);
    let inner = |x: f64| adaptive_simpson(&|y| f(x, y), ay, by, tol / width);
    adaptive_simpson(&inner, ax, bx, tol)
}

/// Composite Simpson on a fixed `nx × ny` grid (both rounded up to even).
pub fn simpson_2d<F: Fn(f64, f64) -> f64>(
    f: &F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    nx: usize,
    ny: usize,
) -> f64 {
    let nx = (nx.max(2) + 1) & !1;
    let ny = (ny.max(2) + 1) & !1;
    let hx = (bx - ax) / nx as f64;
    let hy = (by - ay) / ny as f64;
    let w = |i: usize, n: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut total = 0.0;
    for i in 0..=nx {
        let x = ax + i as f64 * hx;
        let mut row = 0.0;
        for j in 0..=ny {
            row += w(j, ny) * f(x, ay + j as f64 * hy);
        }
        total += w(i, nx) * row;
    }
    total * hx * hy / 9.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_and_gaussians() {
        let v = adaptive_simpson(&|x: f64| x.powi(4), 0.0, 2.0, 1e-12);
        assert!((v - 32.0 / 5.0).abs() < 1e-10);
        let g = adaptive_simpson(&|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-12);
        assert!((g - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        let s = simpson_2d(&|x, y| x * y * y, (0.0, 1.0), (0.0, 3.0), 10, 10);
        assert!((s - 0.5 * 9.0).abs() < 1e-12);
        let a = adaptive_simpson_2d(&|x: f64, y: f64| (x + y).exp(), (0.0, 1.0), (0.0, 1.0), 1e-10);
        let e1 = std::f64::consts::E - 1.0;
        assert!((a - e1 * e1).abs() < 1e-9);
    }
}
