//! Thin wrappers over `libm` plus a few dense vector helpers.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n {
        acc *= x;
    }
    acc
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    sqrt(norm_sq(v))
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Spectral norm of a row-major `rows x cols` matrix by power iteration on AᵀA.
pub fn operator_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    use alloc::vec;
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    // Irregular start so the iterate is not orthogonal to the top singular vector.
    let mut v: alloc::vec::Vec<f64> = (0..cols).map(|c| 1.0 + ((c as f64) * 0.618_033_988_75) % 1.0).collect();
    let mut av = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..100 {
        for r in 0..rows {
            av[r] = (0..cols).map(|c| a[r * cols + c] * v[c]).sum();
        }
        let mut w = vec![0.0; cols];
        for (c, wc) in w.iter_mut().enumerate() {
            *wc = (0..rows).map(|r| a[r * cols + c] * av[r]).sum();
        }
        let wn = norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        let next = sqrt(wn);
        for (vc, wc) in v.iter_mut().zip(&w) {
            *vc = wc / wn;
        }
        if abs(next - sigma) <= 1e-14 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}
