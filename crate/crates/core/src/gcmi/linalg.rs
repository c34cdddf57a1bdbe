//! Small dense symmetric kernels for subset log-determinants.

/// Copies the principal submatrix of the row-major `dim x dim` matrix `full`
/// selected by `idx` into `out` (row-major, `idx.len()` square).
pub fn gather_principal(full: &[f64], dim: usize, idx: &[usize], out: &mut Vec<f64>) {
    let k = idx.len();
    out.clear();
    out.reserve(k * k);
    for &i in idx {
        let row = &full[i * dim..(i + 1) * dim];
        out.extend(idx.iter().map(|&j| row[j]));
    }
}

/// In-place lower Cholesky factorization of a row-major `k x k` symmetric
/// matrix. Returns `ln det`, or `None` when a pivot is not strictly positive.
pub fn cholesky_logdet(a: &mut [f64], k: usize) -> Option<f64> {
    debug_assert_eq!(a.len(), k * k);
    let mut logdet = 0.0;
    for j in 0..k {
        let mut diag = a[j * k + j];
        for p in 0..j {
            diag -= a[j * k + p] * a[j * k + p];
        }
        if !diag.is_finite() || diag <= 0.0 {
            return None;
        }
        let l = diag.sqrt();
        a[j * k + j] = l;
        logdet += l.ln();
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / l;
        }
    }
    Some(2.0 * logdet)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Laplace expansion; exponential but exact enough for tiny matrices.
    fn det_laplace(a: &[f64], k: usize) -> f64 {
        if k == 1 {
            return a[0];
        }
        let mut total = 0.0;
        for c in 0..k {
            let minor: Vec<f64> = (1..k)
                .flat_map(|r| (0..k).filter(move |&cc| cc != c).map(move |cc| (r, cc)))
                .map(|(r, cc)| a[r * k + cc])
                .collect();
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * a[c] * det_laplace(&minor, k - 1);
        }
        total
    }

    #[test]
    fn matches_laplace_expansion() {
        // A = B B^T + I is SPD
        let b = [
            0.3, -1.2, 0.5, 0.0, 0.9, 0.1, 0.4, -0.3, 1.1, 0.2, -0.7, 0.6, 0.0, 0.8, 0.3, -0.5,
        ];
        let k = 4;
        let mut a = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                a[i * k + j] = (0..k).map(|p| b[i * k + p] * b[j * k + p]).sum::<f64>()
                    + if i == j { 1.0 } else { 0.0 };
            }
        }
        let expected = det_laplace(&a, k).ln();
        let got = cholesky_logdet(&mut a.clone(), k).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn singular_and_indefinite_fail() {
        let mut ones = vec![1.0; 4];
        assert!(cholesky_logdet(&mut ones, 2).is_none());
        let mut indef = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_logdet(&mut indef, 2).is_none());
    }

    #[test]
    fn gather_picks_principal_submatrix() {
        let full: Vec<f64> = (0..9).map(f64::from).collect();
        let mut out = Vec::new();
        gather_principal(&full, 3, &[2, 0], &mut out);
        assert_eq!(out, vec![8.0, 6.0, 2.0, 0.0]);
    }
}
