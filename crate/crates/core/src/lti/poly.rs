//! Real polynomials stored with ascending powers of `s`.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Drops trailing (highest-power) zero coefficients. The zero polynomial is `[0.0]`.
pub fn trim(mut p: Vec<f64>) -> Vec<f64> {
    while p.len() > 1 && *p.last().unwrap() == 0.0 {
        p.pop();
    }
    if p.is_empty() {
        p.push(0.0);
    }
    p
}

pub fn degree(p: &[f64]) -> usize {
    p.iter().rposition(|&c| c != 0.0).unwrap_or(0)
}

pub fn is_zero(p: &[f64]) -> bool {
    p.iter().all(|&c| c == 0.0)
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    trim(out)
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let out = (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect();
    trim(out)
}

pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
    trim(a.iter().map(|&c| c * k).collect())
}

/// Horner evaluation at a complex point.
pub fn eval(p: &[f64], s: Complex64) -> Complex64 {
    p.iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Number of leading (lowest-power) exactly-zero coefficients, i.e. the multiplicity of the root at 0.
pub fn zero_root_multiplicity(p: &[f64]) -> usize {
    if is_zero(p) {
        return 0;
    }
    p.iter().take_while(|&&c| c == 0.0).count()
}

/// Roots via eigenvalues of the companion matrix.
///
/// `s` is rescaled by `|c0/cn|^(1/n)` first; the coefficient spread of the loop
/// polynomials (leading 1, constant ~1e16) otherwise wrecks the Schur iteration.
pub fn roots(p: &[f64]) -> Vec<Complex64> {
    let p = trim(p.to_vec());
    let zeros_at_origin = zero_root_multiplicity(&p);
    let reduced = &p[zeros_at_origin..];
    let n = reduced.len() - 1;
    let mut out = vec![Complex64::new(0.0, 0.0); zeros_at_origin];
    if n == 0 {
        return out;
    }
    let lead = reduced[n];
    let alpha = (reduced[0] / lead).abs().powf(1.0 / n as f64);
    let alpha = if alpha.is_finite() && alpha > 0.0 { alpha } else { 1.0 };
    // monic polynomial in t = s / alpha
    let scaled: Vec<f64> = (0..n)
        .map(|k| reduced[k] / lead / alpha.powi((n - k) as i32))
        .collect();
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        companion[(i, n - 1)] = -scaled[i];
    }
    out.extend(
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| Complex64::new(z.re * alpha, z.im * alpha)),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_linear_factors() {
        // (1 + 2s)(3 - s) = 3 + 5s - 2s^2
        assert_eq!(mul(&[1.0, 2.0], &[3.0, -1.0]), vec![3.0, 5.0, -2.0]);
    }

    #[test]
    fn trim_keeps_zero_polynomial() {
        assert_eq!(trim(vec![0.0, 0.0]), vec![0.0]);
        assert_eq!(trim(vec![1.0, 0.0, 0.0]), vec![1.0]);
        assert_eq!(degree(&[1.0, 2.0, 0.0]), 1);
    }

    #[test]
    fn roots_of_cubic() {
        // (s+1)(s+2)(s+3)
        let p = mul(&mul(&[1.0, 1.0], &[2.0, 1.0]), &[3.0, 1.0]);
        let mut r: Vec<f64> = roots(&p).iter().map(|z| z.re).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in r.iter().zip([-3.0, -2.0, -1.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn roots_with_origin_and_wide_spread() {
        // s (s + 0.1) (s + 1e5)
        let p = mul(&mul(&[0.0, 1.0], &[0.1, 1.0]), &[1e5, 1.0]);
        let r = roots(&p);
        assert_eq!(r.len(), 3);
        assert!(r.iter().any(|z| z.norm() == 0.0));
        assert!(r.iter().any(|z| (z.re + 0.1).abs() < 1e-9));
        assert!(r.iter().any(|z| (z.re + 1e5).abs() < 1e-4));
    }
}
