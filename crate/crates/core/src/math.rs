//! Small dense-vector kernels shared by the model, the losses and the
//! baselines. Matrices are row-major `&[f64]` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Log-softmax, written into `out`.
pub fn log_softmax(values: &[f64], out: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = libm::log(values.iter().map(|v| libm::exp(v - max)).sum::<f64>()) + max;
    for (o, v) in out.iter_mut().zip(values) {
        *o = v - log_total;
    }
}

/// `out = M^T x` for a row-major `rows x cols` matrix `m`.
pub fn mat_t_vec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, &xr) in x.iter().enumerate().take(rows) {
        if xr != 0.0 {
            axpy(xr, &m[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `out = M x` for a row-major `rows x cols` matrix `m`.
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&m[r * cols..(r + 1) * cols], x);
    }
}

/// Scales `row` back onto the unit ball if it lies outside it.
#[inline]
pub fn clip_to_unit_ball(row: &mut [f64]) {
    let n = norm(row);
    if n > 1.0 {
        row.iter_mut().for_each(|v| *v /= n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let mut a = [1.0, 2.0, 3.0];
        let mut b = [101.0, 102.0, 103.0];
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        assert_relative_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let v = [0.3, -1.2, 2.5, 0.0];
        let mut s = v;
        softmax_in_place(&mut s);
        let mut l = [0.0; 4];
        log_softmax(&v, &mut l);
        for (x, y) in s.iter().zip(&l) {
            assert_relative_eq!(libm::log(*x), *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_products() {
        // [[1, 2, 3], [4, 5, 6]]
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut o3 = [0.0; 3];
        mat_t_vec(&m, 2, 3, &[1.0, -1.0], &mut o3);
        assert_eq!(o3, [-3.0, -3.0, -3.0]);
        let mut o2 = [0.0; 2];
        mat_vec(&m, 2, 3, &[1.0, 0.0, 1.0], &mut o2);
        assert_eq!(o2, [4.0, 10.0]);
    }

    #[test]
    fn clipping_only_shrinks() {
        let mut inside = [0.3, 0.4];
        clip_to_unit_ball(&mut inside);
        assert_eq!(inside, [0.3, 0.4]);
        let mut outside = [3.0, 4.0];
        clip_to_unit_ball(&mut outside);
        assert_relative_eq!(norm(&outside), 1.0, epsilon = 1e-15);
    }
}
