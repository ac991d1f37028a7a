//! Base dynamics `θ : Ω → Ω`, its transfer operator `ℓ_θ` on scalar
//! observables, and the lift `ℓ̃_θ` to fiber-function-valued observables.
//!
//! Three classes of base are supported: rotations of `[0, 1)`, full-branch
//! piecewise affine expanding maps of `[0, 1)` (the doubling map by default),
//! and the one-sided shift on `K` symbols with a Bernoulli measure.
//! Observables on `[0, 1)` live on an equispaced grid; observables on the
//! shift are cylinder tables of fixed depth.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::FiberFunction;
use crate::scalar::{wrap_unit, Scalar};

pub const DEFAULT_GRID: usize = 256;
pub const DEFAULT_DEPTH: usize = 6;
/// Largest cylinder table accepted.
pub const MAX_CYLINDER_ENTRIES: usize = 1 << 20;
/// Smallest admissible base density or symbol weight.
pub const MIN_DENSITY: f64 = 1e-6;

/// A point of `Ω`: a number in `[0, 1)` or a finite word over the shift alphabet.
#[derive(Clone, Debug, PartialEq)]
pub enum BasePoint<T: Scalar> {
    Real(T),
    Word(Vec<usize>),
}

/// Layout of an [`Observable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Constant,
    Grid(usize),
    Cylinder { alphabet: usize, depth: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Constant => 1,
            Shape::Grid(g) => g,
            Shape::Cylinder { alphabet, depth } => alphabet.pow(depth as u32),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The base point stored at index `i`.
    pub fn point<T: Scalar>(&self, i: usize) -> BasePoint<T> {
        match *self {
            Shape::Constant => BasePoint::Real(T::zero()),
            Shape::Grid(g) => BasePoint::Real(T::from_usize_lossy(i) / T::from_usize_lossy(g)),
            Shape::Cylinder { alphabet, depth } => {
                let mut word = vec![0; depth];
                let mut rest = i;
                for slot in word.iter_mut().rev() {
                    *slot = rest % alphabet;
                    rest /= alphabet;
                }
                BasePoint::Word(word)
            }
        }
    }

    /// Index of the representation point nearest `ω`: the closest grid node,
    /// or the cylinder containing the word (which must be at least `depth` long).
    pub fn nearest_index<T: Scalar>(&self, omega: &BasePoint<T>) -> Result<usize> {
        match (*self, omega) {
            (Shape::Constant, _) => Ok(0),
            (Shape::Grid(g), BasePoint::Real(x)) => {
                let i = (wrap_unit(*x) * T::from_usize_lossy(g)).round().to_usize().unwrap_or(0);
                Ok(i % g)
            }
            (Shape::Cylinder { alphabet, depth }, BasePoint::Word(w)) => {
                if w.len() < depth {
                    return Err(Error::Representation(format!(
                        "word of length {} is shorter than the cylinder depth {depth}",
                        w.len()
                    )));
                }
                w[..depth].iter().try_fold(0usize, |acc, &a| {
                    if a >= alphabet {
                        Err(Error::Representation(format!("symbol {a} outside alphabet of size {alphabet}")))
                    } else {
                        Ok(acc * alphabet + a)
                    }
                })
            }
            _ => Err(Error::Representation("base point does not match the observable layout".into())),
        }
    }

    /// Index of the point matching `x ∈ [0, 1)`; for cylinders `x` is read as
    /// a base-`K` expansion.
    pub fn index_of_unit<T: Scalar>(&self, x: T) -> usize {
        let len = self.len();
        match self {
            Shape::Constant => 0,
            Shape::Grid(_) => (wrap_unit(x) * T::from_usize_lossy(len)).round().to_usize().unwrap_or(0) % len,
            Shape::Cylinder { .. } => (wrap_unit(x) * T::from_usize_lossy(len)).floor().to_usize().unwrap_or(0).min(len - 1),
        }
    }

    /// `count` deterministic, evenly spread representation indices.
    pub fn sample_indices(&self, count: usize) -> Vec<usize> {
        let len = self.len();
        (0..count).map(|j| j * len / count.max(1)).collect()
    }
}

/// A measurable family `ω ↦ v(ω)`, stored on the layout matching its base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[serde(bound(serialize = "V: Serialize", deserialize = "V: DeserializeOwned"))]
pub enum Observable<V> {
    Constant(V),
    OmegaGrid(Vec<V>),
    Cylinder {
        alphabet: usize,
        depth: usize,
        table: Vec<V>,
    },
}

/// `ω ↦ u(ω) ∈ C^{r−1}(S¹)`.
pub type RandomObservable<T> = Observable<FiberFunction<T>>;
/// `ω ↦ u(ω) ∈ ℝ`.
pub type ScalarObservable<T> = Observable<T>;

impl<V> Observable<V> {
    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> V) -> Self {
        let mut f = f;
        match shape {
            Shape::Constant => Observable::Constant(f(0)),
            Shape::Grid(g) => Observable::OmegaGrid((0..g).map(f).collect()),
            Shape::Cylinder { alphabet, depth } => Observable::Cylinder {
                alphabet,
                depth,
                table: (0..shape.len()).map(f).collect(),
            },
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Observable::Constant(_) => Shape::Constant,
            Observable::OmegaGrid(v) => Shape::Grid(v.len()),
            Observable::Cylinder { alphabet, depth, .. } => Shape::Cylinder {
                alphabet: *alphabet,
                depth: *depth,
            },
        }
    }

    pub fn values(&self) -> &[V] {
        match self {
            Observable::Constant(v) => std::slice::from_ref(v),
            Observable::OmegaGrid(v) => v,
            Observable::Cylinder { table, .. } => table,
        }
    }

    pub fn values_mut(&mut self) -> &mut [V] {
        match self {
            Observable::Constant(v) => std::slice::from_mut(v),
            Observable::OmegaGrid(v) => v,
            Observable::Cylinder { table, .. } => table,
        }
    }

    pub fn into_values(self) -> Vec<V> {
        match self {
            Observable::Constant(v) => vec![v],
            Observable::OmegaGrid(v) => v,
            Observable::Cylinder { table, .. } => table,
        }
    }

    /// Rebuilds an observable of this layout from new values.
    pub fn with_values<W>(&self, values: Vec<W>) -> Observable<W> {
        assert_eq!(values.len(), self.values().len(), "value count does not match layout");
        let mut it = values.into_iter();
        Observable::from_fn(self.shape(), |_| it.next().expect("length checked"))
    }

    pub fn map<W>(&self, f: impl FnMut(&V) -> W) -> Observable<W> {
        self.with_values(self.values().iter().map(f).collect())
    }

    pub fn value_at<T: Scalar>(&self, omega: &BasePoint<T>) -> Result<&V> {
        Ok(&self.values()[self.shape().nearest_index(omega)?])
    }
}

impl<V: Clone> Observable<V> {
    /// Re-lays the observable out on `shape`: constants are broadcast and
    /// cylinder tables are padded to a larger depth (the extra symbols are
    /// ignored). Anything else is a representation mismatch.
    pub fn broadcast(&self, shape: Shape) -> Result<Self> {
        match (self, shape) {
            (_, s) if s == self.shape() => Ok(self.clone()),
            (Observable::Constant(v), s) => Ok(Observable::from_fn(s, |_| v.clone())),
            (Observable::Cylinder { alphabet, depth, table }, Shape::Cylinder { alphabet: k, depth: d })
                if *alphabet == k && d >= *depth =>
            {
                let extra = k.pow((d - depth) as u32);
                Ok(Observable::Cylinder {
                    alphabet: k,
                    depth: d,
                    table: (0..shape.len()).map(|i| table[i / extra].clone()).collect(),
                })
            }
            _ => Err(Error::Representation(format!(
                "cannot lay {:?} out as {:?}",
                self.shape(),
                shape
            ))),
        }
    }
}

/// The smallest layout both arguments broadcast to.
pub fn common_shape(a: Shape, b: Shape) -> Result<Shape> {
    match (a, b) {
        (x, y) if x == y => Ok(x),
        (Shape::Constant, y) => Ok(y),
        (x, Shape::Constant) => Ok(x),
        (Shape::Cylinder { alphabet: k1, depth: d1 }, Shape::Cylinder { alphabet: k2, depth: d2 }) if k1 == k2 => {
            Ok(Shape::Cylinder {
                alphabet: k1,
                depth: d1.max(d2),
            })
        }
        _ => Err(Error::Representation(format!("layouts {a:?} and {b:?} are incompatible"))),
    }
}

/// Values that can be combined linearly by a [`Stencil`].
pub trait Linear<T: Scalar>: Clone {
    fn zero_like(&self) -> Self;
    /// `self += w · x`.
    fn add_scaled(&mut self, w: T, x: &Self);
}

impl<T: Scalar> Linear<T> for T {
    fn zero_like(&self) -> Self {
        T::zero()
    }

    fn add_scaled(&mut self, w: T, x: &Self) {
        *self = *self + w * *x;
    }
}

impl<T: Scalar> Linear<T> for FiberFunction<T> {
    fn zero_like(&self) -> Self {
        FiberFunction::zeros(self.truncation())
    }

    fn add_scaled(&mut self, w: T, x: &Self) {
        self.axpy(w, x);
    }
}

/// A linear map between observable layouts: output `i` is
/// `Σ w · input[j]` over `rows[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil<T: Scalar> {
    input: Shape,
    output: Shape,
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> Stencil<T> {
    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn output(&self) -> Shape {
        self.output
    }

    pub fn rows(&self) -> &[Vec<(usize, T)>] {
        &self.rows
    }

    pub fn apply<V: Linear<T>>(&self, u: &Observable<V>) -> Result<Observable<V>> {
        if u.shape() != self.input {
            return Err(Error::Representation(format!(
                "stencil expects {:?}, got {:?}",
                self.input,
                u.shape()
            )));
        }
        let values = u.values();
        let zero = values[0].zero_like();
        let mut row_iter = self.rows.iter();
        Ok(Observable::from_fn(self.output, |_| {
            let row = row_iter.next().expect("one row per output point");
            let mut acc = zero.clone();
            for &(j, w) in row {
                acc.add_scaled(w, &values[j]);
            }
            acc
        }))
    }
}

fn golden_mean<T: Scalar>() -> T {
    T::lit((5f64.sqrt() - 1.0) / 2.0)
}

fn halves<T: Scalar>() -> Vec<T> {
    vec![T::zero(), T::lit(0.5), T::one()]
}

/// Base dynamics. Serialized as `{"variant": "rotation", "alpha": …}`,
/// `{"variant": "piecewise_doubling"}` (optionally with `"cuts"`) or
/// `{"variant": "shift", "p": […]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", bound = "")]
pub enum BaseSystem<T: Scalar> {
    /// `ω ↦ ω + α mod 1`, preserving Lebesgue measure.
    Rotation {
        #[serde(default = "golden_mean")]
        alpha: T,
    },
    /// Full-branch affine map: `[c_j, c_{j+1})` is stretched onto `[0, 1)`.
    /// Lebesgue measure is invariant, so the base density is `p ≡ 1`.
    PiecewiseDoubling {
        #[serde(default = "halves")]
        cuts: Vec<T>,
    },
    /// One-sided shift with Bernoulli weights `p`.
    Shift { p: Vec<T> },
}

impl<T: Scalar> BaseSystem<T> {
    pub fn rotation(alpha: T) -> Result<Self> {
        let base = BaseSystem::Rotation { alpha };
        base.validate()?;
        Ok(base)
    }

    /// Rotation by the golden mean `(√5 − 1)/2`: ergodic but not mixing.
    pub fn golden_rotation() -> Self {
        BaseSystem::Rotation { alpha: golden_mean() }
    }

    pub fn doubling() -> Self {
        BaseSystem::PiecewiseDoubling { cuts: halves() }
    }

    pub fn piecewise(cuts: Vec<T>) -> Result<Self> {
        let base = BaseSystem::PiecewiseDoubling { cuts };
        base.validate()?;
        Ok(base)
    }

    pub fn shift(p: Vec<T>) -> Result<Self> {
        let base = BaseSystem::Shift { p };
        base.validate()?;
        Ok(base)
    }

    pub fn validate(&self) -> Result<()> {
        let min = T::lit(MIN_DENSITY);
        match self {
            BaseSystem::Rotation { alpha } if !alpha.is_finite() => {
                Err(Error::InvalidBase("rotation angle must be finite".into()))
            }
            BaseSystem::Rotation { .. } => Ok(()),
            BaseSystem::PiecewiseDoubling { cuts } => {
                if cuts.len() < 3 {
                    return Err(Error::InvalidBase("piecewise base needs at least two branches".into()));
                }
                if cuts[0] != T::zero() || cuts[cuts.len() - 1] != T::one() {
                    return Err(Error::InvalidBase("cut points must start at 0 and end at 1".into()));
                }
                if cuts.windows(2).any(|w| !(w[1] - w[0] > min)) {
                    return Err(Error::InvalidBase("cut points must be strictly increasing".into()));
                }
                Ok(())
            }
            BaseSystem::Shift { p } => {
                if p.len() < 2 {
                    return Err(Error::InvalidBase("shift alphabet needs at least two symbols".into()));
                }
                if p.iter().any(|&w| !(w > min)) {
                    return Err(Error::InvalidBase(format!("symbol weights must exceed {MIN_DENSITY}")));
                }
                let total = p.iter().fold(T::zero(), |s, &w| s + w);
                if (total - T::one()).abs() > T::tol(1e-12) {
                    return Err(Error::InvalidBase(format!("symbol weights sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Layout used for random observables over this base.
    pub fn default_shape(&self, grid: usize, depth: usize) -> Shape {
        match self {
            BaseSystem::Shift { p } => Shape::Cylinder {
                alphabet: p.len(),
                depth,
            },
            _ => Shape::Grid(grid),
        }
    }

    /// Checks that `shape` can represent observables over this base.
    pub fn check_shape(&self, shape: Shape) -> Result<()> {
        match (self, shape) {
            (_, Shape::Constant) => Ok(()),
            (BaseSystem::Shift { p }, Shape::Cylinder { alphabet, .. }) if alphabet == p.len() => {
                if shape.len() > MAX_CYLINDER_ENTRIES {
                    Err(Error::Representation(format!(
                        "cylinder table of {} entries exceeds {MAX_CYLINDER_ENTRIES}",
                        shape.len()
                    )))
                } else {
                    Ok(())
                }
            }
            (BaseSystem::Rotation { .. } | BaseSystem::PiecewiseDoubling { .. }, Shape::Grid(g)) if g >= 2 => Ok(()),
            _ => Err(Error::Representation(format!("{shape:?} does not fit this base"))),
        }
    }

    /// Grid index offset realizing the rotation on `Shape::Grid(g)`.
    fn grid_offset(alpha: T, g: usize) -> usize {
        let s = (wrap_unit(alpha) * T::from_usize_lossy(g)).round().to_usize().unwrap_or(0);
        s % g
    }

    /// The base as seen by a `g`-point grid. A rotation moves grid nodes by
    /// whole cells, so its angle is rounded to the nearest multiple of `1/g`;
    /// other bases are returned unchanged.
    pub fn on_grid(&self, g: usize) -> Self {
        match self {
            BaseSystem::Rotation { alpha } if g > 0 => BaseSystem::Rotation {
                alpha: T::from_usize_lossy(Self::grid_offset(*alpha, g)) / T::from_usize_lossy(g),
            },
            other => other.clone(),
        }
    }

    /// Invariant density of the base on `[0, 1)`.
    pub fn density(&self, _omega: T) -> T {
        T::one()
    }

    /// Weights of the representation points under `P`.
    pub fn weights(&self, shape: Shape) -> Result<Vec<T>> {
        self.check_shape(shape)?;
        Ok(match (self, shape) {
            (_, Shape::Constant) => vec![T::one()],
            (BaseSystem::Shift { p }, Shape::Cylinder { .. }) => (0..shape.len())
                .map(|i| match shape.point::<T>(i) {
                    BasePoint::Word(w) => w.iter().fold(T::one(), |acc, &a| acc * p[a]),
                    BasePoint::Real(_) => unreachable!("cylinder points are words"),
                })
                .collect(),
            (_, Shape::Grid(g)) => {
                let raw: Vec<T> = (0..g)
                    .map(|i| self.density(T::from_usize_lossy(i) / T::from_usize_lossy(g)))
                    .collect();
                let total = raw.iter().fold(T::zero(), |s, &v| s + v);
                raw.into_iter().map(|v| v / total).collect()
            }
            _ => unreachable!("shape checked"),
        })
    }

    /// `ℓ_θ` as a stencil on `shape`. Cylinder outputs lose one symbol of depth.
    pub fn transfer_stencil(&self, shape: Shape) -> Result<Stencil<T>> {
        self.check_shape(shape)?;
        let one = T::one();
        let (output, rows) = match (self, shape) {
            (_, Shape::Constant) => (Shape::Constant, vec![vec![(0, one)]]),
            (BaseSystem::Rotation { alpha }, Shape::Grid(g)) => {
                let s = Self::grid_offset(*alpha, g);
                (shape, (0..g).map(|i| vec![((i + g - s) % g, one)]).collect())
            }
            (BaseSystem::PiecewiseDoubling { cuts }, Shape::Grid(g)) => {
                let rows = (0..g)
                    .map(|i| {
                        let omega = T::from_usize_lossy(i) / T::from_usize_lossy(g);
                        let p_here = self.density(omega);
                        let mut row = Vec::with_capacity(4 * (cuts.len() - 1));
                        for w in cuts.windows(2) {
                            let len = w[1] - w[0];
                            if i == 0 {
                                // ℓu jumps at 0 unless the branches line up; take the mean
                                // of both one-sided limits
                                let half = T::lit(0.5) * len / p_here;
                                push_interpolated(&mut row, w[0], g, half * self.density(w[0]));
                                push_interpolated(&mut row, w[1], g, half * self.density(w[1]));
                            } else {
                                let y = w[0] + omega * len;
                                let weight = len * self.density(y) / p_here;
                                push_interpolated(&mut row, y, g, weight);
                            }
                        }
                        row
                    })
                    .collect();
                (shape, rows)
            }
            (BaseSystem::Shift { p }, Shape::Cylinder { alphabet, depth }) => {
                if depth == 0 {
                    return Err(Error::DepthExhausted);
                }
                let out = Shape::Cylinder {
                    alphabet,
                    depth: depth - 1,
                };
                let stride = out.len();
                let rows = (0..stride)
                    .map(|v| p.iter().enumerate().map(|(a, &pa)| (a * stride + v, pa)).collect())
                    .collect();
                (out, rows)
            }
            _ => unreachable!("shape checked"),
        };
        Ok(Stencil {
            input: shape,
            output,
            rows,
        })
    }

    /// Composition `φ ↦ φ ∘ θ` on `shape`, the adjoint of [`Self::transfer_stencil`].
    /// Cylinder outputs gain one symbol of depth.
    pub fn koopman_stencil(&self, shape: Shape) -> Result<Stencil<T>> {
        self.check_shape(shape)?;
        let one = T::one();
        let (output, rows) = match (self, shape) {
            (_, Shape::Constant) => (Shape::Constant, vec![vec![(0, one)]]),
            (BaseSystem::Rotation { alpha }, Shape::Grid(g)) => {
                let s = Self::grid_offset(*alpha, g);
                (shape, (0..g).map(|i| vec![((i + s) % g, one)]).collect())
            }
            (BaseSystem::PiecewiseDoubling { .. }, Shape::Grid(g)) => {
                let rows = (0..g)
                    .map(|i| {
                        let omega = T::from_usize_lossy(i) / T::from_usize_lossy(g);
                        let image = match self.apply(&BasePoint::Real(omega)) {
                            Ok(BasePoint::Real(x)) => x,
                            _ => unreachable!("real base maps to reals"),
                        };
                        let mut row = Vec::with_capacity(2);
                        push_interpolated(&mut row, image, g, one);
                        row
                    })
                    .collect();
                (shape, rows)
            }
            (BaseSystem::Shift { .. }, Shape::Cylinder { alphabet, depth }) => {
                let out = Shape::Cylinder {
                    alphabet,
                    depth: depth + 1,
                };
                self.check_shape(out)?;
                let stride = shape.len();
                (out, (0..out.len()).map(|w| vec![(w % stride, one)]).collect())
            }
            _ => unreachable!("shape checked"),
        };
        Ok(Stencil {
            input: shape,
            output,
            rows,
        })
    }

    /// `θω`.
    pub fn apply(&self, omega: &BasePoint<T>) -> Result<BasePoint<T>> {
        match (self, omega) {
            (BaseSystem::Rotation { alpha }, BasePoint::Real(x)) => Ok(BasePoint::Real(wrap_unit(*x + *alpha))),
            (BaseSystem::PiecewiseDoubling { cuts }, BasePoint::Real(x)) => {
                let x = wrap_unit(*x);
                let j = cuts.partition_point(|&c| c <= x).clamp(1, cuts.len() - 1) - 1;
                Ok(BasePoint::Real(wrap_unit((x - cuts[j]) / (cuts[j + 1] - cuts[j]))))
            }
            (BaseSystem::Shift { p }, BasePoint::Word(w)) => {
                if w.is_empty() {
                    return Err(Error::DepthExhausted);
                }
                if let Some(&a) = w.iter().find(|&&a| a >= p.len()) {
                    return Err(Error::Representation(format!("symbol {a} outside alphabet")));
                }
                Ok(BasePoint::Word(w[1..].to_vec()))
            }
            _ => Err(Error::Representation("base point does not match the base variant".into())),
        }
    }
}

/// Linear interpolation of a periodic `g`-point grid at `y`, scaled by `weight`.
fn push_interpolated<T: Scalar>(row: &mut Vec<(usize, T)>, y: T, g: usize, weight: T) {
    let pos = wrap_unit(y) * T::from_usize_lossy(g);
    let k = pos.floor();
    let frac = pos - k;
    let k = k.to_usize().unwrap_or(0) % g;
    row.push((k, weight * (T::one() - frac)));
    if frac > T::zero() {
        row.push(((k + 1) % g, weight * frac));
    }
}

/// `θω`.
pub fn base_apply<T: Scalar>(base: &BaseSystem<T>, omega: &BasePoint<T>) -> Result<BasePoint<T>> {
    base.apply(omega)
}

/// `ℓ_θ u` for a scalar observable.
pub fn base_transfer<T: Scalar>(base: &BaseSystem<T>, u: &ScalarObservable<T>) -> Result<ScalarObservable<T>> {
    base.transfer_stencil(u.shape())?.apply(u)
}

/// `ℓ̃_θ U`: the stencil of `ℓ_θ` applied coefficientwise.
pub fn base_lift_transfer<T: Scalar>(base: &BaseSystem<T>, u: &RandomObservable<T>) -> Result<RandomObservable<T>> {
    base.transfer_stencil(u.shape())?.apply(u)
}

/// `φ ∘ θ`.
pub fn base_compose<T: Scalar, V: Linear<T>>(base: &BaseSystem<T>, phi: &Observable<V>) -> Result<Observable<V>> {
    base.koopman_stencil(phi.shape())?.apply(phi)
}

/// `⟨u, φ⟩_P = ∫ u φ dP` over the representation.
pub fn pairing<T: Scalar>(base: &BaseSystem<T>, u: &ScalarObservable<T>, phi: &ScalarObservable<T>) -> Result<T> {
    let shape = common_shape(u.shape(), phi.shape())?;
    let w = base.weights(shape)?;
    let u = u.broadcast(shape)?;
    let phi = phi.broadcast(shape)?;
    Ok(w.iter()
        .zip(u.values().iter().zip(phi.values()))
        .fold(T::zero(), |s, (&w, (&a, &b))| s + w * a * b))
}

/// Fiber integrals `ω ↦ ∫U(ω) dm` (real parts).
pub fn fiber_integrals<T: Scalar>(u: &RandomObservable<T>) -> ScalarObservable<T> {
    u.map(|f| f.integral().re)
}

/// Distance of `U` from the space of observables with constant fiber
/// integral: the largest deviation of `∫U(ω) dm` from its mean over the
/// representation points.
pub fn kp_defect<T: Scalar>(u: &RandomObservable<T>) -> T {
    let integrals: Vec<_> = u.values().iter().map(|f| f.integral()).collect();
    let count = T::from_usize_lossy(integrals.len());
    let mean = integrals.iter().fold(num_complex::Complex::new(T::zero(), T::zero()), |s, c| s + c) / count;
    integrals.iter().fold(T::zero(), |m, c| m.max((c - mean).norm()))
}

/// `‖U‖_{L∞}`: the largest C¹ norm over the representation points.
pub fn linf_norm<T: Scalar>(u: &RandomObservable<T>) -> T {
    u.values().iter().fold(T::zero(), |m, f| m.max(f.c1_norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn word(w: &[usize]) -> BasePoint<f64> {
        BasePoint::Word(w.to_vec())
    }

    #[test]
    fn base_maps() {
        let rot = BaseSystem::rotation(0.25).unwrap();
        match rot.apply(&BasePoint::Real(0.9)).unwrap() {
            BasePoint::Real(x) => assert_abs_diff_eq!(x, 0.15, epsilon = 1e-15),
            _ => panic!(),
        }
        assert_eq!(BaseSystem::doubling().apply(&BasePoint::Real(0.3)).unwrap(), BasePoint::Real(0.6));
        let shift = BaseSystem::shift(vec![0.5, 0.5]).unwrap();
        assert_eq!(shift.apply(&word(&[0, 1, 1])).unwrap(), word(&[1, 1]));
        assert!(matches!(shift.apply(&word(&[])), Err(Error::DepthExhausted)));
        assert!(rot.apply(&word(&[0])).is_err());
    }

    #[test]
    fn rotation_transfer_is_inverse_composition() {
        let rot = BaseSystem::rotation(0.25).unwrap();
        let g = 64;
        let u = ScalarObservable::from_fn(Shape::Grid(g), |i| i as f64 / g as f64);
        let lu = base_transfer(&rot, &u).unwrap();
        assert_abs_diff_eq!(*lu.value_at(&BasePoint::Real(0.5)).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn doubling_transfer_kills_first_cosine() {
        let base = BaseSystem::<f64>::doubling();
        let g = 256;
        let u = ScalarObservable::from_fn(Shape::Grid(g), |i| (std::f64::consts::TAU * i as f64 / g as f64).cos());
        let lu = base_transfer(&base, &u).unwrap();
        // odd nodes use interpolated midpoints; the error is second order in 1/g
        assert!(lu.values().iter().all(|v| v.abs() < 1e-3));
        for (i, v) in lu.values().iter().enumerate().step_by(2) {
            assert!(v.abs() < 1e-14, "node {i}: {v}");
        }
    }

    #[test]
    fn shift_transfer_averages_first_symbol() {
        let base = BaseSystem::shift(vec![0.5, 0.5]).unwrap();
        let u = ScalarObservable::Cylinder {
            alphabet: 2,
            depth: 1,
            table: vec![1.0, 3.0],
        };
        let lu = base_transfer(&base, &u).unwrap();
        assert_eq!(lu.shape(), Shape::Cylinder { alphabet: 2, depth: 0 });
        assert_eq!(lu.values(), &[2.0]);
        assert!(matches!(base_transfer(&base, &lu), Err(Error::DepthExhausted)));
    }

    #[test]
    fn lifted_shift_transfer_is_weighted_average() {
        let base = BaseSystem::shift(vec![0.25, 0.75]).unwrap();
        let u = RandomObservable::from_fn(Shape::Cylinder { alphabet: 2, depth: 2 }, |i| {
            FiberFunction::from_trig(4, &[(0, 0.0, 1.0 + i as f64), (1, i as f64, 0.0)])
        });
        let lu = base_lift_transfer(&base, &u).unwrap();
        assert_eq!(lu.shape(), Shape::Cylinder { alphabet: 2, depth: 1 });
        for v in 0..2 {
            let expect = &(&u.values()[v] * 0.25) + &(&u.values()[2 + v] * 0.75);
            assert_eq!(lu.values()[v], expect);
        }
    }

    #[test]
    fn constants_are_preserved() {
        let c = RandomObservable::Constant(FiberFunction::from_trig(4, &[(0, 0.0, 1.0), (2, 0.3, 0.1)]));
        for base in [
            BaseSystem::golden_rotation(),
            BaseSystem::doubling(),
            BaseSystem::shift(vec![0.3, 0.7]).unwrap(),
        ] {
            assert_eq!(base_lift_transfer(&base, &c).unwrap(), c);
        }
    }

    #[test]
    fn kp_defect_examples() {
        let g = 128;
        let rho0 = FiberFunction::from_trig(8, &[(0, 0.0, 1.0), (1, 0.2, 0.0)]);
        let zero_mean = FiberFunction::from_trig(8, &[(3, 1.0, 0.5)]);
        let u = RandomObservable::from_fn(Shape::Grid(g), |i| {
            let s = (std::f64::consts::TAU * i as f64 / g as f64).sin();
            &rho0 + &(&zero_mean * s)
        });
        assert!(kp_defect(&u) < 1e-15);
        assert_eq!(kp_defect(&RandomObservable::Constant(rho0)), 0.0);
        let ramp = RandomObservable::from_fn(Shape::Grid(g), |i| FiberFunction::constant(i as f64 / g as f64, 2));
        // mean of i/g is (g−1)/(2g); the largest deviation sits at i = 0
        assert_abs_diff_eq!(kp_defect(&ramp), (g - 1) as f64 / (2 * g) as f64, epsilon = 1e-15);
        assert!((kp_defect(&ramp) - 0.5).abs() < 1e-2);
    }

    #[test]
    fn serde_variants() {
        let rot: BaseSystem<f64> = serde_json::from_str(r#"{"variant": "rotation", "alpha": 0.1}"#).unwrap();
        assert_eq!(rot, BaseSystem::Rotation { alpha: 0.1 });
        let dbl: BaseSystem<f64> = serde_json::from_str(r#"{"variant": "piecewise_doubling"}"#).unwrap();
        assert_eq!(dbl, BaseSystem::doubling());
        let sh: BaseSystem<f64> = serde_json::from_str(r#"{"variant": "shift", "p": [0.5, 0.5]}"#).unwrap();
        assert_eq!(sh, BaseSystem::Shift { p: vec![0.5, 0.5] });
        let golden: BaseSystem<f64> = serde_json::from_str(r#"{"variant": "rotation"}"#).unwrap();
        assert_eq!(golden, BaseSystem::golden_rotation());
    }

    #[test]
    fn invalid_bases() {
        assert!(BaseSystem::shift(vec![1.0]).is_err());
        assert!(BaseSystem::shift(vec![0.5, 0.6]).is_err());
        assert!(BaseSystem::shift(vec![1.0, 0.0]).is_err());
        assert!(BaseSystem::piecewise(vec![0.0, 1.0]).is_err());
        assert!(BaseSystem::piecewise(vec![0.0, 0.7, 0.6, 1.0]).is_err());
        assert!(BaseSystem::rotation(f64::NAN).is_err());
        let sh = BaseSystem::shift(vec![0.5, 0.5]).unwrap();
        assert!(sh.transfer_stencil(Shape::Grid(8)).is_err());
        assert!(BaseSystem::<f64>::doubling().transfer_stencil(Shape::Cylinder { alphabet: 2, depth: 2 }).is_err());
    }

    #[test]
    fn representation_helpers() {
        let s = Shape::Cylinder { alphabet: 3, depth: 2 };
        assert_eq!(s.point::<f64>(5), word(&[1, 2]));
        assert_eq!(s.nearest_index(&word(&[1, 2, 0, 0])).unwrap(), 5);
        assert!(s.nearest_index(&word(&[1])).is_err());
        assert_eq!(Shape::Grid(10).nearest_index(&BasePoint::Real(0.96)).unwrap(), 0);
        let u = ScalarObservable::Cylinder { alphabet: 2, depth: 1, table: vec![1.0, 2.0] };
        let padded = u.broadcast(Shape::Cylinder { alphabet: 2, depth: 3 }).unwrap();
        assert_eq!(padded.values(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert!(u.broadcast(Shape::Grid(2)).is_err());
    }

    #[test]
    fn asymmetric_piecewise_duality_is_second_order() {
        let base = BaseSystem::piecewise(vec![0.0, 0.3, 1.0]).unwrap();
        let residual = |g: usize| {
            let shape = Shape::Grid(g);
            let at = |i: usize| std::f64::consts::TAU * i as f64 / g as f64;
            let u = ScalarObservable::from_fn(shape, |i| at(i).cos() + 0.3);
            let phi = ScalarObservable::from_fn(shape, |i| (2.0 * at(i)).sin() + 0.5);
            let lhs = pairing(&base, &base_transfer(&base, &u).unwrap(), &phi).unwrap();
            let rhs = pairing(&base, &u, &base_compose(&base, &phi).unwrap()).unwrap();
            (lhs - rhs).abs()
        };
        let (coarse, fine) = (residual(1024), residual(4096));
        assert!(fine < 1e-6);
        assert!(coarse / fine > 12.0, "{coarse} {fine}");
    }

    #[test]
    fn snapped_rotation_matches_stencil() {
        let base = BaseSystem::<f64>::golden_rotation().on_grid(256);
        match base {
            BaseSystem::Rotation { alpha } => assert_eq!(alpha, 158.0 / 256.0),
            _ => panic!(),
        }
    }

    fn bases() -> Vec<(BaseSystem<f64>, Shape)> {
        vec![
            (BaseSystem::golden_rotation(), Shape::Grid(64)),
            (BaseSystem::doubling(), Shape::Grid(64)),
            (BaseSystem::piecewise(vec![0.0, 0.3, 1.0]).unwrap(), Shape::Grid(64)),
            (BaseSystem::shift(vec![0.2, 0.3, 0.5]).unwrap(), Shape::Cylinder { alphabet: 3, depth: 3 }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn constant_one_is_fixed(c in -5.0f64..5.0) {
            for (base, shape) in bases() {
                let one = ScalarObservable::from_fn(shape, |_| c);
                let l1 = base_transfer(&base, &one).unwrap();
                for v in l1.values() {
                    prop_assert!((v - c).abs() <= 1e-14 * c.abs().max(1.0));
                }
            }
        }

        #[test]
        fn lift_does_not_increase_linf(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for (base, shape) in bases() {
                let u = RandomObservable::from_fn(shape, |_| {
                    let terms: Vec<_> = (0..4).map(|k| (k, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                    FiberFunction::from_trig(6, &terms)
                });
                let lu = base_lift_transfer(&base, &u).unwrap();
                prop_assert!(linf_norm(&lu) <= linf_norm(&u) + 1e-12);
            }
        }

        #[test]
        fn lift_commutes_with_evaluation_and_integrals(seed in any::<u64>(), x in 0.0f64..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for (base, shape) in bases() {
                let u = RandomObservable::from_fn(shape, |_| {
                    let terms: Vec<_> = (0..4).map(|k| (k, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                    FiberFunction::from_trig(6, &terms)
                });
                let lu = base_lift_transfer(&base, &u).unwrap();
                let at_x = base_transfer(&base, &u.map(|f| f.eval(x).re)).unwrap();
                for (a, b) in lu.values().iter().zip(at_x.values()) {
                    prop_assert!((a.eval(x).re - b).abs() < 1e-12);
                }
                let integrals = base_transfer(&base, &fiber_integrals(&u)).unwrap();
                for (a, b) in fiber_integrals(&lu).values().iter().zip(integrals.values()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn duality_on_representation(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for (base, shape) in bases() {
                let u = ScalarObservable::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
                let phi_shape = match shape {
                    Shape::Cylinder { alphabet, depth } => Shape::Cylinder { alphabet, depth: depth - 1 },
                    s => s,
                };
                let phi = ScalarObservable::from_fn(phi_shape, |_| rng.gen_range(-1.0..1.0));
                let lhs = pairing(&base, &base_transfer(&base, &u).unwrap(), &phi).unwrap();
                let rhs = pairing(&base, &u, &base_compose(&base, &phi).unwrap()).unwrap();
                let exact = !matches!(base, BaseSystem::PiecewiseDoubling { .. });
                if exact {
                    prop_assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
                }
            }
        }

        #[test]
        fn kp_is_preserved(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for (base, shape) in bases() {
                let u = RandomObservable::from_fn(shape, |_| {
                    let terms: Vec<_> = (1..4).map(|k| (k, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                    let mut f = FiberFunction::from_trig(6, &terms);
                    f.coeffs_mut()[6].re = 0.7;
                    f
                });
                prop_assert!(kp_defect(&u) < 1e-12);
                prop_assert!(kp_defect(&base_lift_transfer(&base, &u).unwrap()) < 1e-10);
            }
        }
    }
}
