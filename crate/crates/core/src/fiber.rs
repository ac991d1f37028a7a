//! Functions on the circle held as truncated Fourier series.
//!
//! A [`FiberFunction`] with truncation `N` stores the coefficients
//! `c_{-N}, …, c_N` of `u(x) = Σ c_k exp(2πikx)`. Real functions satisfy
//! `c_{-k} = conj(c_k)`; nothing here requires it, but all constructors that
//! take real data produce Hermitian coefficient vectors.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest grid used for sup-norm estimates regardless of truncation.
const MIN_NORM_GRID: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FiberFunction<T: Scalar> {
    coeffs: Vec<Complex<T>>,
}

impl<T: Scalar> FiberFunction<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![Complex::new(T::zero(), T::zero()); 2 * n + 1],
        }
    }

    pub fn constant(value: T, n: usize) -> Self {
        let mut f = Self::zeros(n);
        f.coeffs[n] = Complex::new(value, T::zero());
        f
    }

    /// The exponential mode `e_k(x) = exp(2πikx)`.
    pub fn mode(k: i64, n: usize) -> Self {
        assert!(k.unsigned_abs() as usize <= n, "mode {k} outside truncation {n}");
        let mut f = Self::zeros(n);
        f.coeffs[(k + n as i64) as usize] = Complex::new(T::one(), T::zero());
        f
    }

    /// Real trigonometric polynomial `Σ a sin(2πkx) + b cos(2πkx)` from
    /// `(k, a, b)` triples; `k = 0` contributes the constant `b`.
    pub fn from_trig(n: usize, terms: &[(usize, T, T)]) -> Self {
        let mut f = Self::zeros(n);
        let half = T::lit(0.5);
        for &(k, a, b) in terms {
            assert!(k <= n, "trig term {k} outside truncation {n}");
            if k == 0 {
                f.coeffs[n].re = f.coeffs[n].re + b;
                continue;
            }
            // sin = (e_k - e_{-k}) / 2i, cos = (e_k + e_{-k}) / 2
            let pos = Complex::new(b * half, -a * half);
            let neg = Complex::new(b * half, a * half);
            f.coeffs[n + k] = f.coeffs[n + k] + pos;
            f.coeffs[n - k] = f.coeffs[n - k] + neg;
        }
        f
    }

    /// Builds from a full coefficient vector of odd length `2N+1`.
    pub fn from_coeffs(coeffs: Vec<Complex<T>>) -> Result<Self> {
        if coeffs.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "coefficient vector must have odd length, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { coeffs })
    }

    /// Projects samples on the uniform grid `x_p = p/M` onto modes `|k| ≤ n`.
    pub fn from_samples(samples: &[Complex<T>], n: usize) -> Self {
        let m = samples.len();
        assert!(m > 2 * n, "need more than 2N samples ({m} for N={n})");
        let mut buf = samples.to_vec();
        fft_in_place(&mut buf, false);
        let inv_m = T::one() / T::from_usize_lossy(m);
        let coeffs = (-(n as i64)..=n as i64)
            .map(|k| buf[k.rem_euclid(m as i64) as usize] * inv_m)
            .collect();
        Self { coeffs }
    }

    /// Samples a real-valued callable on `m` points and projects.
    pub fn interpolate(f: impl Fn(T) -> T, n: usize, m: usize) -> Self {
        let samples: Vec<_> = (0..m)
            .map(|p| Complex::new(f(grid_point(p, m)), T::zero()))
            .collect();
        Self::from_samples(&samples, n)
    }

    pub fn truncation(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex<T>> {
        self.coeffs
    }

    /// Coefficient `c_k`, zero outside the truncation.
    pub fn coeff(&self, k: i64) -> Complex<T> {
        let n = self.truncation() as i64;
        if k.abs() > n {
            Complex::new(T::zero(), T::zero())
        } else {
            self.coeffs[(k + n) as usize]
        }
    }

    /// `∫ u dm`, which is exactly `c_0`.
    pub fn integral(&self) -> Complex<T> {
        self.coeffs[self.truncation()]
    }

    pub fn eval(&self, x: T) -> Complex<T> {
        self.eval_jet(x).0
    }

    pub fn eval_derivative(&self, x: T) -> Complex<T> {
        self.eval_jet(x).1
    }

    /// `(u(x), u′(x), u″(x))` by Horner evaluation on the unit circle.
    pub fn eval_jet(&self, x: T) -> (Complex<T>, Complex<T>, Complex<T>) {
        let n = self.truncation();
        let tp = T::two_pi();
        let z = Complex::from_polar(T::one(), tp * x);
        let zero = Complex::new(T::zero(), T::zero());
        let (mut a0, mut a1, mut a2) = (zero, zero, zero);
        for j in (0..self.coeffs.len()).rev() {
            let k = T::from_i64((j as i64) - n as i64).unwrap();
            let c = self.coeffs[j];
            a0 = a0 * z + c;
            a1 = a1 * z + c * k;
            a2 = a2 * z + c * (k * k);
        }
        let shift = Complex::from_polar(T::one(), -tp * T::from_usize_lossy(n) * x);
        let i_tp = Complex::new(T::zero(), tp);
        (a0 * shift, a1 * shift * i_tp, a2 * shift * (i_tp * i_tp))
    }

    /// Values on the uniform grid `x_p = p/m`, `m ≥ 2N+1`.
    pub fn samples(&self, m: usize) -> Vec<Complex<T>> {
        let n = self.truncation();
        assert!(m > 2 * n, "grid of {m} points cannot resolve truncation {n}");
        let mut buf = vec![Complex::new(T::zero(), T::zero()); m];
        for (j, c) in self.coeffs.iter().enumerate() {
            let k = j as i64 - n as i64;
            buf[k.rem_euclid(m as i64) as usize] = *c;
        }
        fft_in_place(&mut buf, true);
        buf
    }

    pub fn derivative(&self) -> Self {
        let n = self.truncation() as i64;
        let tp = T::two_pi();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let k = T::from_i64(j as i64 - n).unwrap();
                *c * Complex::new(T::zero(), tp * k)
            })
            .collect();
        Self { coeffs }
    }

    fn norm_grid(&self) -> usize {
        (4 * self.truncation()).max(MIN_NORM_GRID)
    }

    /// `sup |u|` over the `4N`-point grid.
    pub fn sup_norm(&self) -> T {
        self.samples(self.norm_grid())
            .iter()
            .fold(T::zero(), |m, v| m.max(v.norm()))
    }

    /// `sup |u| + sup |u′|` over the `4N`-point grid.
    pub fn c1_norm(&self) -> T {
        self.sup_norm() + self.derivative().sup_norm()
    }

    /// `sup |u|` with every grid local maximum polished by Newton's method,
    /// accurate to rounding rather than to grid resolution.
    pub fn sup_norm_sharp(&self) -> T {
        let m = self.norm_grid();
        let vals: Vec<T> = self.samples(m).iter().map(|v| v.norm_sqr()).collect();
        let h = T::one() / T::from_usize_lossy(m);
        let mut best = vals.iter().fold(T::zero(), |a, &b| a.max(b));
        for p in 0..m {
            let prev = vals[(p + m - 1) % m];
            let next = vals[(p + 1) % m];
            if vals[p] < prev || vals[p] < next || vals[p] <= T::zero() {
                continue;
            }
            let x0 = grid_point::<T>(p, m);
            let mut x = x0;
            for _ in 0..30 {
                let (u, du, d2u) = self.eval_jet(x);
                // d/dx |u|²/2 and its derivative
                let g = (u.conj() * du).re;
                let dg = du.norm_sqr() + (u.conj() * d2u).re;
                if dg >= T::zero() {
                    break;
                }
                let step = -g / dg;
                let step = step.max(-h).min(h);
                x = x + step;
                if (x - x0).abs() > h + h || step.abs() < T::epsilon() {
                    break;
                }
            }
            if (x - x0).abs() <= h + h {
                best = best.max(self.eval(x).norm_sqr());
            }
        }
        best.sqrt()
    }

    /// C¹ norm with sharpened suprema.
    pub fn c1_norm_sharp(&self) -> T {
        self.sup_norm_sharp() + self.derivative().sup_norm_sharp()
    }

    /// `∫ self · other dm = Σ a_k b_{-k}`.
    pub fn inner(&self, other: &Self) -> Complex<T> {
        let n = self.truncation().min(other.truncation()) as i64;
        (-n..=n).fold(Complex::new(T::zero(), T::zero()), |acc, k| {
            acc + self.coeff(k) * other.coeff(-k)
        })
    }

    /// `Σ |c_k|`, an upper bound for the sup norm.
    pub fn coeff_l1(&self) -> T {
        self.coeffs.iter().fold(T::zero(), |a, c| a + c.norm())
    }

    /// Largest `|c_k − conj(c_{−k})|`; zero for real functions.
    pub fn hermitian_defect(&self) -> T {
        let n = self.truncation() as i64;
        (0..=n).fold(T::zero(), |m, k| {
            m.max((self.coeff(k) - self.coeff(-k).conj()).norm())
        })
    }

    /// Zero-padded or truncated copy with truncation `n`.
    pub fn resized(&self, n: usize) -> Self {
        let coeffs = (-(n as i64)..=n as i64).map(|k| self.coeff(k)).collect();
        Self { coeffs }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| *c * s).collect(),
        }
    }

    pub fn scale_complex(&self, s: Complex<T>) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| *c * s).collect(),
        }
    }

    /// `self += a · x`.
    pub fn axpy(&mut self, a: T, x: &Self) {
        assert_eq!(self.coeffs.len(), x.coeffs.len(), "truncation mismatch");
        for (s, v) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *s = *s + *v * a;
        }
    }

    /// `self += a · x` with a complex weight.
    pub fn axpy_complex(&mut self, a: Complex<T>, x: &Self) {
        assert_eq!(self.coeffs.len(), x.coeffs.len(), "truncation mismatch");
        for (s, v) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *s = *s + *v * a;
        }
    }

    /// Drops imaginary round-off by symmetrizing the coefficients.
    pub fn real_part(&self) -> Self {
        let n = self.truncation() as i64;
        let half = T::lit(0.5);
        let coeffs = (-n..=n)
            .map(|k| (self.coeff(k) + self.coeff(-k).conj()) * half)
            .collect();
        Self { coeffs }
    }

    /// `sup |u − v|` in C¹ over the norm grid.
    pub fn c1_distance(&self, other: &Self) -> T {
        (self - other).c1_norm()
    }
}

/// Sums and differences pad the shorter operand with zero modes.
impl<T: Scalar> Add for &FiberFunction<T> {
    type Output = FiberFunction<T>;

    fn add(self, rhs: Self) -> FiberFunction<T> {
        let n = self.truncation().max(rhs.truncation()) as i64;
        FiberFunction {
            coeffs: (-n..=n).map(|k| self.coeff(k) + rhs.coeff(k)).collect(),
        }
    }
}

impl<T: Scalar> Sub for &FiberFunction<T> {
    type Output = FiberFunction<T>;

    fn sub(self, rhs: Self) -> FiberFunction<T> {
        let n = self.truncation().max(rhs.truncation()) as i64;
        FiberFunction {
            coeffs: (-n..=n).map(|k| self.coeff(k) - rhs.coeff(k)).collect(),
        }
    }
}

impl<T: Scalar> Mul<T> for &FiberFunction<T> {
    type Output = FiberFunction<T>;

    fn mul(self, s: T) -> FiberFunction<T> {
        self.scale(s)
    }
}

/// `p / m`.
#[inline]
pub fn grid_point<T: Scalar>(p: usize, m: usize) -> T {
    T::from_usize_lossy(p) / T::from_usize_lossy(m)
}

/// In-place unnormalized DFT; `inverse` selects the `exp(+2πi…)` kernel.
pub fn fft_in_place<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

/// Periodic trapezoid rule on `m` equispaced nodes of `[0, 1)`.
pub fn trapezoid<T: Scalar>(m: usize, f: impl Fn(T) -> T) -> T {
    let sum = (0..m).fold(T::zero(), |acc, p| acc + f(grid_point(p, m)));
    sum / T::from_usize_lossy(m)
}

/// Complex-valued periodic trapezoid rule.
pub fn trapezoid_complex<T: Scalar>(m: usize, f: impl Fn(T) -> Complex<T>) -> Complex<T> {
    let sum = (0..m).fold(Complex::new(T::zero(), T::zero()), |acc, p| {
        acc + f(grid_point(p, m))
    });
    sum / T::from_usize_lossy(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    #[test]
    fn trig_constructor_evaluates_pointwise() {
        let f = FiberFunction::<f64>::from_trig(8, &[(0, 0.0, 0.5), (1, 2.0, 0.0), (3, 0.0, -1.0)]);
        for &x in &[0.0, 0.1, 0.37, 0.9] {
            let expect = 0.5 + 2.0 * (TAU * x).sin() - (3.0 * TAU * x).cos();
            assert_abs_diff_eq!(f.eval(x).re, expect, epsilon = 1e-13);
            assert_abs_diff_eq!(f.eval(x).im, 0.0, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(f.integral().re, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(f.hermitian_defect(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn derivative_jet_matches_closed_form() {
        let f = FiberFunction::<f64>::from_trig(4, &[(2, 1.0, 0.0)]);
        let x = 0.13;
        let (u, du, d2u) = f.eval_jet(x);
        assert_abs_diff_eq!(u.re, (2.0 * TAU * x).sin(), epsilon = 1e-13);
        assert_abs_diff_eq!(du.re, 2.0 * TAU * (2.0 * TAU * x).cos(), epsilon = 1e-11);
        assert_abs_diff_eq!(d2u.re, -(2.0 * TAU).powi(2) * (2.0 * TAU * x).sin(), epsilon = 1e-9);
        assert_abs_diff_eq!(f.derivative().eval(x).re, du.re, epsilon = 1e-11);
    }

    #[test]
    fn samples_round_trip() {
        let f = FiberFunction::<f64>::from_trig(6, &[(1, 0.3, -0.2), (5, 0.0, 0.7)]);
        let s = f.samples(32);
        for (p, v) in s.iter().enumerate() {
            let x = p as f64 / 32.0;
            assert_abs_diff_eq!(v.re, f.eval(x).re, epsilon = 1e-13);
        }
        let g = FiberFunction::from_samples(&s, 6);
        for (a, b) in f.coeffs().iter().zip(g.coeffs()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn c1_norm_of_cosine() {
        let f = FiberFunction::<f64>::from_trig(16, &[(1, 0.0, 1.0)]);
        assert_abs_diff_eq!(f.c1_norm(), 1.0 + TAU, epsilon = 1e-12);
        assert_abs_diff_eq!(f.c1_norm_sharp(), 1.0 + TAU, epsilon = 1e-12);
    }

    #[test]
    fn sharp_sup_finds_off_grid_peak() {
        // peak of cos(2π·3(x − δ)) sits between grid nodes
        let delta = 0.0071;
        let f = FiberFunction::<f64>::interpolate(|x| (3.0 * TAU * (x - delta)).cos(), 4, 64);
        assert!(f.sup_norm() < 1.0 - 1e-6);
        assert_abs_diff_eq!(f.sup_norm_sharp(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inner_product_matches_quadrature() {
        let a = FiberFunction::<f64>::from_trig(5, &[(1, 1.0, 0.5), (2, 0.0, 0.25)]);
        let b = FiberFunction::<f64>::from_trig(5, &[(1, -0.5, 2.0), (4, 1.0, 0.0)]);
        let quad = trapezoid(64, |x| a.eval(x).re * b.eval(x).re);
        assert_abs_diff_eq!(a.inner(&b).re, quad, epsilon = 1e-14);
    }

    #[test]
    fn resize_preserves_values() {
        let a = FiberFunction::<f64>::from_trig(3, &[(2, 1.0, 0.5)]);
        let b = a.resized(10);
        assert_abs_diff_eq!(a.eval(0.3).re, b.eval(0.3).re, epsilon = 1e-14);
        assert_eq!(b.truncation(), 10);
        assert_eq!(b.resized(3), a);
    }

    #[test]
    fn from_coeffs_rejects_even_length() {
        assert!(FiberFunction::<f64>::from_coeffs(vec![Complex::new(0.0, 0.0); 4]).is_err());
    }

    #[test]
    fn single_precision_evaluation() {
        let f = FiberFunction::<f32>::from_trig(4, &[(1, 0.0, 1.0)]);
        assert!((f.eval(0.25).re).abs() < 1e-5);
        assert!((f.c1_norm() - (1.0 + std::f32::consts::TAU)).abs() < 1e-4);
    }
}
