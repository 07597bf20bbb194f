//! Univariate basis expansions used by the spline and Chebyshev layers.

/// Uniform knot vector on `[lo, hi]` with `intervals` cells, extended by
/// `degree` knots on each side so that the `intervals + degree` basis
/// functions form a partition of unity on `[lo, hi]`.
pub fn uniform_knots(lo: f64, hi: f64, intervals: usize, degree: usize) -> Vec<f64> {
    let h = (hi - lo) / intervals as f64;
    let first = -(degree as isize);
    let last = (intervals + degree) as isize;
    (first..=last).map(|i| lo + i as f64 * h).collect()
}

/// Cox-de Boor recursion. Writes `knots.len() - degree - 1` values into `out`.
/// Cells are half-open `[t_i, t_{i+1})`.
pub fn bspline_basis(knots: &[f64], degree: usize, x: f64, out: &mut [f64]) {
    let n_cells = knots.len() - 1;
    let mut work = vec![0.0; n_cells];
    for (i, w) in work.iter_mut().enumerate() {
        *w = if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
    }
    for p in 1..=degree {
        for i in 0..(n_cells - p) {
            work[i] = cox_de_boor_step(knots, p, i, x, work[i], work[i + 1]);
        }
    }
    let k = knots.len() - degree - 1;
    out[..k].copy_from_slice(&work[..k]);
}

/// Derivative of every degree-`degree` basis function at `x`.
pub fn bspline_basis_derivative(knots: &[f64], degree: usize, x: f64, out: &mut [f64]) {
    let k = knots.len() - degree - 1;
    if degree == 0 {
        out[..k].iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut lower = vec![0.0; k + 1];
    bspline_basis(knots, degree - 1, x, &mut lower);
    let p = degree as f64;
    for i in 0..k {
        let left = knots[i + degree] - knots[i];
        let right = knots[i + degree + 1] - knots[i + 1];
        let a = if left > 0.0 { p / left * lower[i] } else { 0.0 };
        let b = if right > 0.0 { p / right * lower[i + 1] } else { 0.0 };
        out[i] = a - b;
    }
}

#[inline]
fn cox_de_boor_step(knots: &[f64], p: usize, i: usize, x: f64, lo: f64, hi: f64) -> f64 {
    let left = knots[i + p] - knots[i];
    let right = knots[i + p + 1] - knots[i + 1];
    let a = if left > 0.0 { (x - knots[i]) / left * lo } else { 0.0 };
    let b = if right > 0.0 { (knots[i + p + 1] - x) / right * hi } else { 0.0 };
    a + b
}

/// Chebyshev polynomials of the first kind `T_0..=T_degree` at `u`, and
/// their derivatives when `deriv` is given.
pub fn chebyshev_basis(u: f64, degree: usize, out: &mut [f64], deriv: Option<&mut [f64]>) {
    out[0] = 1.0;
    if degree >= 1 {
        out[1] = u;
    }
    for d in 1..degree {
        out[d + 1] = 2.0 * u * out[d] - out[d - 1];
    }
    if let Some(dv) = deriv {
        dv[0] = 0.0;
        if degree >= 1 {
            dv[1] = 1.0;
        }
        // T'_{d+1} = 2 T_d + 2u T'_d - T'_{d-1}
        for d in 1..degree {
            dv[d + 1] = 2.0 * out[d] + 2.0 * u * dv[d] - dv[d - 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_inside_grid() {
        let knots = uniform_knots(-1.0, 1.0, 5, 3);
        let mut b = vec![0.0; 8];
        for j in 0..=40 {
            let x = -1.0 + 2.0 * j as f64 / 41.0;
            bspline_basis(&knots, 3, x, &mut b);
            let s: f64 = b.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "x={x} sum={s}");
        }
    }

    #[test]
    fn chebyshev_matches_cosine_form() {
        let mut t = vec![0.0; 6];
        for &u in &[-0.9, -0.3, 0.0, 0.4, 0.99] {
            chebyshev_basis(u, 5, &mut t, None);
            let th = f64::acos(u);
            for (d, v) in t.iter().enumerate() {
                assert!((v - (d as f64 * th).cos()).abs() < 1e-12);
            }
        }
    }
}
