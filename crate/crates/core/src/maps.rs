//! Expanding circle maps given by a degree-`d` lift plus a trigonometric
//! perturbation, their compositions, and the expanding constant `Λ_r`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_unit, Scalar};

/// Grid used to certify `inf F′ > 1`.
pub const EXPANSION_CHECK_GRID: usize = 4096;
/// Residual target for inverse-branch solves.
pub const BRANCH_TOLERANCE: f64 = 1e-13;
pub const BRANCH_MAX_ITERATIONS: usize = 60;
/// Refuse compositions with more branches than this.
pub const MAX_BRANCHES: u128 = 1 << 20;

/// Anything the fiber transfer operator can be built from.
pub trait FiberMap<T: Scalar>: Sync {
    /// Number of preimages of every point.
    fn branch_count(&self) -> usize;
    /// The map on `[0, 1)`.
    fn eval(&self, x: T) -> T;
    fn derivative(&self, x: T) -> T;
    /// All preimages of `x`, each in `[0, 1)`.
    fn inverse_branches(&self, x: T) -> Result<Vec<T>>;
}

/// One Fourier term `(k, a_k, b_k)` of the lift perturbation
/// `g(x) = Σ [a_k sin(2πkx) + b_k cos(2πkx)] / (2πk)`.
pub type TrigTerm<T> = (usize, T, T);

fn default_r<T: Scalar>() -> T {
    T::lit(2.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
struct CircleMapRepr<T: Scalar> {
    degree: usize,
    #[serde(default)]
    coeffs: Vec<TrigTerm<T>>,
    #[serde(default = "default_r")]
    r: T,
    #[serde(default, skip_serializing_if = "is_zero")]
    shift: T,
}

fn is_zero<T: Scalar>(x: &T) -> bool {
    x.is_zero()
}

/// Expanding map of the circle with lift `F(x) = d·x + c + g(x)`.
///
/// `c` is a constant rotation of the image (zero unless the map was produced
/// by additive noise); it changes neither the degree nor the derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircleMapRepr<T>", into = "CircleMapRepr<T>", bound = "")]
pub struct CircleMap<T: Scalar> {
    degree: usize,
    coeffs: Vec<TrigTerm<T>>,
    r: T,
    shift: T,
    min_derivative: T,
}

impl<T: Scalar> TryFrom<CircleMapRepr<T>> for CircleMap<T> {
    type Error = Error;

    fn try_from(repr: CircleMapRepr<T>) -> Result<Self> {
        Self::new(repr.degree, repr.coeffs, repr.r)?.with_shift(repr.shift)
    }
}

impl<T: Scalar> From<CircleMap<T>> for CircleMapRepr<T> {
    fn from(m: CircleMap<T>) -> Self {
        Self {
            degree: m.degree,
            coeffs: m.coeffs,
            r: m.r,
            shift: m.shift,
        }
    }
}

impl<T: Scalar> CircleMap<T> {
    pub fn new(degree: usize, coeffs: Vec<TrigTerm<T>>, r: T) -> Result<Self> {
        if degree < 2 {
            return Err(Error::InvalidMap(format!("degree must be at least 2, got {degree}")));
        }
        if coeffs.iter().any(|&(k, _, _)| k == 0) {
            return Err(Error::InvalidMap("Fourier terms must have k ≥ 1".into()));
        }
        if coeffs.iter().any(|&(_, a, b)| !a.is_finite() || !b.is_finite()) || !r.is_finite() {
            return Err(Error::InvalidMap("non-finite coefficient".into()));
        }
        if r <= T::one() {
            return Err(Error::InvalidMap(format!("smoothness r must exceed 1, got {r}")));
        }
        let mut map = Self {
            degree,
            coeffs,
            r,
            shift: T::zero(),
            min_derivative: T::zero(),
        };
        map.min_derivative = (0..EXPANSION_CHECK_GRID)
            .map(|p| map.derivative(T::from_usize_lossy(p) / T::from_usize_lossy(EXPANSION_CHECK_GRID)))
            .fold(T::infinity(), T::min);
        if map.min_derivative <= T::one() {
            return Err(Error::InvalidMap(format!(
                "not expanding: min F′ = {} ≤ 1",
                map.min_derivative
            )));
        }
        Ok(map)
    }

    /// The linear map `x ↦ d·x mod 1`.
    pub fn linear(degree: usize) -> Result<Self> {
        Self::new(degree, Vec::new(), T::lit(2.0))
    }

    /// Same map with the lift offset by the constant `c`.
    pub fn with_shift(mut self, c: T) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidMap("non-finite shift".into()));
        }
        self.shift = c;
        Ok(self)
    }

    /// Copy with `δ` added to `a_k` (`sine = true`) or `b_k`.
    pub fn with_coefficient_offset(&self, k: usize, sine: bool, delta: T) -> Result<Self> {
        let mut coeffs = self.coeffs.clone();
        match coeffs.iter_mut().find(|t| t.0 == k) {
            Some(term) if sine => term.1 = term.1 + delta,
            Some(term) => term.2 = term.2 + delta,
            None if sine => coeffs.push((k, delta, T::zero())),
            None => coeffs.push((k, T::zero(), delta)),
        }
        Self::new(self.degree, coeffs, self.r)?.with_shift(self.shift)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[TrigTerm<T>] {
        &self.coeffs
    }

    pub fn r(&self) -> T {
        self.r
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    /// `inf F′` over the certification grid; the effective expansion rate.
    pub fn min_derivative(&self) -> T {
        self.min_derivative
    }

    pub fn max_derivative(&self) -> T {
        (0..EXPANSION_CHECK_GRID)
            .map(|p| self.derivative(T::from_usize_lossy(p) / T::from_usize_lossy(EXPANSION_CHECK_GRID)))
            .fold(T::zero(), T::max)
    }

    /// The lift `F(x)`, valid for any real `x`.
    pub fn lift(&self, x: T) -> T {
        let tp = T::two_pi();
        let g = self.coeffs.iter().fold(T::zero(), |acc, &(k, a, b)| {
            let kk = T::from_usize_lossy(k);
            let (s, c) = (tp * kk * x).sin_cos();
            acc + (a * s + b * c) / (tp * kk)
        });
        T::from_usize_lossy(self.degree) * x + self.shift + g
    }

    pub fn second_derivative(&self, x: T) -> T {
        let tp = T::two_pi();
        self.coeffs.iter().fold(T::zero(), |acc, &(k, a, b)| {
            let kk = T::from_usize_lossy(k);
            let (s, c) = (tp * kk * x).sin_cos();
            acc - tp * kk * (a * s + b * c)
        })
    }

    /// Solves `F(y) = t` for `y ∈ [0, 1]` by Newton's method safeguarded by
    /// bisection. Requires `F(0) ≤ t ≤ F(1)`.
    pub fn solve_lift(&self, t: T) -> Result<T> {
        let tol = T::tol(BRANCH_TOLERANCE);
        let f0 = self.lift(T::zero());
        let d = T::from_usize_lossy(self.degree);
        let (mut lo, mut hi) = (T::zero(), T::one());
        let mut y = ((t - f0) / d).max(T::zero()).min(T::one());
        let mut residual = T::infinity();
        for _ in 0..BRANCH_MAX_ITERATIONS {
            residual = self.lift(y) - t;
            if residual.abs() < tol {
                return Ok(y);
            }
            if residual > T::zero() {
                hi = y;
            } else {
                lo = y;
            }
            let next = y - residual / self.derivative(y);
            y = if next > lo && next < hi {
                next
            } else {
                (lo + hi) * T::lit(0.5)
            };
        }
        Err(Error::BranchNotConverged {
            target: t.to_f64_lossy(),
            iterations: BRANCH_MAX_ITERATIONS,
            residual: residual.abs().to_f64_lossy(),
        })
    }

    /// Integer offsets `j` such that the preimages of `x` solve `F(y) = x + j`.
    fn branch_offsets(&self, x: T) -> std::ops::Range<i64> {
        let f0 = self.lift(T::zero());
        let start = (f0 - x).ceil().to_i64().expect("finite lift");
        start..start + self.degree as i64
    }
}

impl<T: Scalar> FiberMap<T> for CircleMap<T> {
    fn branch_count(&self) -> usize {
        self.degree
    }

    fn eval(&self, x: T) -> T {
        wrap_unit(self.lift(x))
    }

    fn derivative(&self, x: T) -> T {
        let tp = T::two_pi();
        let g = self.coeffs.iter().fold(T::zero(), |acc, &(k, a, b)| {
            let (s, c) = (tp * T::from_usize_lossy(k) * x).sin_cos();
            acc + a * c - b * s
        });
        T::from_usize_lossy(self.degree) + g
    }

    fn inverse_branches(&self, x: T) -> Result<Vec<T>> {
        let x = wrap_unit(x);
        self.branch_offsets(x)
            .map(|j| self.solve_lift(x + T::from_i64(j).unwrap()).map(wrap_unit))
            .collect()
    }
}

/// `f_n ∘ … ∘ f_1` for the list `[f_1, …, f_n]`: the first element acts first.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedMap<T: Scalar> {
    maps: Vec<CircleMap<T>>,
}

/// Composes in orbit order; see [`ComposedMap`].
pub fn compose<T: Scalar>(maps: Vec<CircleMap<T>>) -> Result<ComposedMap<T>> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("cannot compose an empty list of maps".into()));
    }
    let count = maps
        .iter()
        .try_fold(1u128, |acc, m| acc.checked_mul(m.degree() as u128))
        .unwrap_or(u128::MAX);
    if count > MAX_BRANCHES {
        return Err(Error::BranchOverflow {
            count,
            limit: MAX_BRANCHES,
        });
    }
    Ok(ComposedMap { maps })
}

impl<T: Scalar> ComposedMap<T> {
    pub fn maps(&self) -> &[CircleMap<T>] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

impl<T: Scalar> FiberMap<T> for ComposedMap<T> {
    fn branch_count(&self) -> usize {
        self.maps.iter().map(|m| m.degree()).product()
    }

    fn eval(&self, x: T) -> T {
        self.maps.iter().fold(x, |y, m| m.eval(y))
    }

    fn derivative(&self, x: T) -> T {
        let mut y = x;
        let mut d = T::one();
        for m in &self.maps {
            d = d * m.derivative(y);
            y = m.eval(y);
        }
        d
    }

    fn inverse_branches(&self, x: T) -> Result<Vec<T>> {
        let mut points = vec![wrap_unit(x)];
        for m in self.maps.iter().rev() {
            let mut next = Vec::with_capacity(points.len() * m.degree());
            for p in points {
                next.extend(m.inverse_branches(p)?);
            }
            points = next;
        }
        Ok(points)
    }
}

/// Estimate of `Λ_r(f)` together with the per-`m` growth rates it was
/// taken from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpandingConstant<T: Scalar> {
    pub value: T,
    /// `S_m^{1/m}` for `m = 1..=m_max`.
    pub rates: Vec<T>,
    /// Set when the estimate is not below 1: the map is too weakly expanding
    /// for `m_max` iterates to resolve the limsup.
    pub warning: bool,
}

/// `S_m = max_x Σ_{f^m(y)=x} |(f^m)′(y)|^{−r} / |(f^m)′(y)|` for
/// `m = 1..=m_max`; the limsup of `S_m^{1/m}` is replaced by its maximum
/// over `m ∈ [⌈m_max/2⌉, m_max]`.
pub fn expanding_constant<T: Scalar>(
    map: &CircleMap<T>,
    r: T,
    m_max: usize,
    grid_n: usize,
) -> Result<ExpandingConstant<T>> {
    if m_max < 1 {
        return Err(Error::InvalidArgument("m_max must be at least 1".into()));
    }
    if grid_n < 64 {
        return Err(Error::InvalidArgument(format!("grid_n must be at least 64, got {grid_n}")));
    }
    let total = (map.degree() as u128).checked_pow(m_max as u32).unwrap_or(u128::MAX);
    if total > MAX_BRANCHES {
        return Err(Error::BranchOverflow {
            count: total,
            limit: MAX_BRANCHES,
        });
    }
    let exponent = -(r + T::one());
    let per_point: Vec<Vec<T>> = (0..grid_n)
        .into_par_iter()
        .map(|p| -> Result<Vec<T>> {
            let x = T::from_usize_lossy(p) / T::from_usize_lossy(grid_n);
            // (preimage, |(f^m)′(preimage)|)
            let mut level = vec![(x, T::one())];
            let mut sums = Vec::with_capacity(m_max);
            for _ in 0..m_max {
                let mut next = Vec::with_capacity(level.len() * map.degree());
                for &(y, d) in &level {
                    for z in map.inverse_branches(y)? {
                        next.push((z, d * map.derivative(z).abs()));
                    }
                }
                sums.push(next.iter().fold(T::zero(), |acc, &(_, d)| acc + d.powf(exponent)));
                level = next;
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;

    let rates: Vec<T> = (0..m_max)
        .map(|i| {
            let s = per_point.iter().fold(T::zero(), |acc, sums| acc.max(sums[i]));
            s.powf(T::one() / T::from_usize_lossy(i + 1))
        })
        .collect();
    let first = m_max.div_ceil(2).max(1);
    let value = rates[first - 1..].iter().fold(T::zero(), |a, &b| a.max(b));
    Ok(ExpandingConstant {
        value,
        rates,
        warning: value >= T::one(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn perturbed() -> CircleMap<f64> {
        CircleMap::new(2, vec![(1, 0.5, 0.0)], 2.0).unwrap()
    }

    #[test]
    fn doubling_evaluation() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        assert_abs_diff_eq!(f.eval(0.3), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(0.75), 0.5, epsilon = 1e-15);
        assert_eq!(f.derivative(0.123), 2.0);
    }

    #[test]
    fn perturbed_map_values() {
        let f = perturbed();
        // 0.5 + 0.5·sin(π/2)/(2π)
        assert_abs_diff_eq!(f.eval(0.25), 0.579_577_471_545_947_7, epsilon = 1e-15);
        assert_abs_diff_eq!(f.derivative(0.0), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(f.min_derivative(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn rejects_invalid_maps() {
        assert!(CircleMap::<f64>::linear(1).is_err());
        assert!(CircleMap::new(2, vec![(1, 1.2, 0.0)], 2.0f64).is_err());
        assert!(CircleMap::new(2, vec![(0, 0.1, 0.0)], 2.0f64).is_err());
        assert!(CircleMap::new(2, vec![], 1.0f64).is_err());
    }

    #[test]
    fn doubling_branches() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let mut b = f.inverse_branches(0.5).unwrap();
        b.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(b[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.75, epsilon = 1e-15);
        let mut b = f.inverse_branches(0.0).unwrap();
        b.sort_by(f64::total_cmp);
        assert_eq!(b, vec![0.0, 0.5]);
    }

    #[test]
    fn shifted_map_branches_wrap() {
        let f = CircleMap::<f64>::linear(3).unwrap().with_shift(0.7).unwrap();
        for &x in &[0.0, 0.05, 0.69, 0.71, 0.999] {
            let b = f.inverse_branches(x).unwrap();
            assert_eq!(b.len(), 3);
            for y in b {
                assert!((0.0..1.0).contains(&y));
                let d = (f.eval(y) - x).abs();
                assert!(d.min(1.0 - d) < 1e-13);
            }
        }
    }

    #[test]
    fn composition_order_and_guard() {
        let d = CircleMap::<f64>::linear(2).unwrap();
        let c = compose(vec![d.clone(), d.clone()]).unwrap();
        assert_abs_diff_eq!(c.eval(0.3), 0.2, epsilon = 1e-15);
        assert_eq!(c.derivative(0.77), 4.0);
        assert_eq!(c.inverse_branches(0.1).unwrap().len(), 4);
        assert!(compose::<f64>(vec![]).is_err());
        let many = vec![d; 21];
        assert!(matches!(compose(many), Err(Error::BranchOverflow { .. })));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let f = perturbed();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"degree":2,"coeffs":[[1,0.5,0.0]],"r":2.0}"#);
        let g: CircleMap<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        let h: CircleMap<f64> = serde_json::from_str(r#"{"degree":3}"#).unwrap();
        assert_eq!(h.r(), 2.0);
        assert!(serde_json::from_str::<CircleMap<f64>>(r#"{"degree":2,"coeffs":[[1,3.0,0.0]]}"#).is_err());
    }

    #[test]
    fn expanding_constant_rejects_bad_arguments() {
        let f = perturbed();
        assert!(expanding_constant(&f, 2.0, 0, 64).is_err());
        assert!(expanding_constant(&f, 2.0, 4, 32).is_err());
        assert!(expanding_constant(&f, 2.0, 21, 64).is_err());
    }

    #[test]
    fn expanding_constant_linear_closed_form() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let e = expanding_constant(&f, 2.0, 6, 64).unwrap();
        assert_abs_diff_eq!(e.value, 0.25, epsilon = 1e-12);
        assert!(!e.warning);
    }

    #[test]
    fn coefficient_offset_adds_missing_mode() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let g = f.with_coefficient_offset(2, false, 0.1).unwrap();
        assert_eq!(g.coeffs(), &[(2, 0.0, 0.1)]);
        assert!(f.with_coefficient_offset(1, true, 1.5).is_err());
    }
}
