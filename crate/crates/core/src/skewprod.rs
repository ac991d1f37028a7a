//! Random fiber maps `f_ε(ω)`, the skew-product transfer operator
//! `ℒ_ε = ℓ̃_θ ∘ ℒ̃_ε` on random observables, and its invariant density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{BasePoint, BaseSystem, RandomObservable, Shape, Stencil};
use crate::error::{Error, Result};
use crate::fiber::{trapezoid_complex, FiberFunction};
use crate::maps::{compose, CircleMap, ComposedMap, FiberMap};
use crate::scalar::{wrap_unit, Scalar};
use crate::transfer::{FiberTransfer, QUADRATURE_NODES};

pub const FIXED_POINT_MAX_ITERATIONS: usize = 10_000;
/// Most negative density value tolerated before the discretization is rejected.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Sine,
    Cosine,
}

fn default_component() -> Component {
    Component::Sine
}

/// How the noise level `ε·s(ω)` enters the fiber map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `f_ε(ω, x) = f₀(x) + ε s(ω) mod 1`.
    Additive,
    /// Offsets the sine or cosine coefficient of mode `mode` by `ε s(ω)`.
    Parametric {
        mode: usize,
        #[serde(default = "default_component")]
        component: Component,
    },
}

/// `s : Ω → [−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", bound = "")]
pub enum NoiseProfile<T: Scalar> {
    /// `s(ω) = cos 2πω` on `[0, 1)`.
    Cosine,
    /// `s(ω) = levels[ω₀]` on the shift.
    Levels { levels: Vec<T> },
}

impl<T: Scalar> NoiseProfile<T> {
    /// Cosine on `[0, 1)`, evenly spaced levels in `[−1, 1]` on the shift.
    pub fn default_for(base: &BaseSystem<T>) -> Self {
        match base {
            BaseSystem::Shift { p } => {
                let k = p.len();
                let step = T::lit(2.0) / T::from_usize_lossy(k - 1);
                NoiseProfile::Levels {
                    levels: (0..k).map(|a| -T::one() + step * T::from_usize_lossy(a)).collect(),
                }
            }
            _ => NoiseProfile::Cosine,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NoiseProfile::Levels { levels } if levels.iter().any(|l| !(l.abs() <= T::one())) => {
                Err(Error::Config("noise levels must lie in [-1, 1]".into()))
            }
            NoiseProfile::Levels { levels } if levels.is_empty() => Err(Error::Config("empty noise level table".into())),
            _ => Ok(()),
        }
    }

    /// Checks that the profile can be evaluated on points of `base`.
    pub fn check_base(&self, base: &BaseSystem<T>) -> Result<()> {
        match (self, base) {
            (NoiseProfile::Cosine, BaseSystem::Shift { .. }) => {
                Err(Error::Config("the cosine noise profile needs a base on [0, 1)".into()))
            }
            (NoiseProfile::Levels { levels }, BaseSystem::Shift { p }) if levels.len() != p.len() => Err(Error::Config(
                format!("{} noise levels for an alphabet of {} symbols", levels.len(), p.len()),
            )),
            (NoiseProfile::Levels { .. }, BaseSystem::Rotation { .. } | BaseSystem::PiecewiseDoubling { .. }) => {
                Err(Error::Config("noise levels need a shift base".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, omega: &BasePoint<T>) -> Result<T> {
        match (self, omega) {
            (NoiseProfile::Cosine, BasePoint::Real(x)) => Ok((T::two_pi() * wrap_unit(*x)).cos()),
            (NoiseProfile::Levels { levels }, BasePoint::Word(w)) => {
                let a = *w.first().ok_or(Error::DepthExhausted)?;
                levels
                    .get(a)
                    .copied()
                    .ok_or_else(|| Error::Representation(format!("symbol {a} has no noise level")))
            }
            _ => Err(Error::Representation("noise profile does not match the base point".into())),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct FamilyRepr<T: Scalar> {
    f0: CircleMap<T>,
    noise_kind: NoiseKind,
    s_profile: NoiseProfile<T>,
    epsilon: T,
}

/// `ω ↦ f_ε(ω)`, serialized as `{f0, noise_kind, s_profile, epsilon}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr<T>", into = "FamilyRepr<T>", bound = "")]
pub struct RandomMapFamily<T: Scalar> {
    f0: CircleMap<T>,
    noise_kind: NoiseKind,
    s_profile: NoiseProfile<T>,
    epsilon: T,
}

impl<T: Scalar> TryFrom<FamilyRepr<T>> for RandomMapFamily<T> {
    type Error = Error;

    fn try_from(r: FamilyRepr<T>) -> Result<Self> {
        RandomMapFamily::new(r.f0, r.noise_kind, r.s_profile, r.epsilon)
    }
}

impl<T: Scalar> From<RandomMapFamily<T>> for FamilyRepr<T> {
    fn from(f: RandomMapFamily<T>) -> Self {
        FamilyRepr {
            f0: f.f0,
            noise_kind: f.noise_kind,
            s_profile: f.s_profile,
            epsilon: f.epsilon,
        }
    }
}

impl<T: Scalar> RandomMapFamily<T> {
    pub fn new(f0: CircleMap<T>, noise_kind: NoiseKind, s_profile: NoiseProfile<T>, epsilon: T) -> Result<Self> {
        if let NoiseKind::Parametric { mode: 0, .. } = noise_kind {
            return Err(Error::Config("parametric noise needs a mode k ≥ 1".into()));
        }
        s_profile.validate()?;
        let family = RandomMapFamily {
            f0,
            noise_kind,
            s_profile,
            epsilon: T::zero(),
        };
        family.with_epsilon(epsilon)
    }

    /// Same family at noise strength `epsilon`.
    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        let epsilon_max = self.epsilon_max();
        if !(epsilon >= T::zero()) || !(epsilon < epsilon_max) {
            return Err(Error::EpsilonTooLarge {
                epsilon: epsilon.to_f64_lossy(),
                epsilon_max: epsilon_max.to_f64_lossy(),
            });
        }
        Ok(RandomMapFamily {
            epsilon,
            ..self.clone()
        })
    }

    pub fn f0(&self) -> &CircleMap<T> {
        &self.f0
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.noise_kind
    }

    pub fn s_profile(&self) -> &NoiseProfile<T> {
        &self.s_profile
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Noise strengths below this keep every fiber map expanding. Additive
    /// noise leaves derivatives untouched, so there is no limit.
    pub fn epsilon_max(&self) -> T {
        match self.noise_kind {
            NoiseKind::Additive => T::infinity(),
            NoiseKind::Parametric { .. } => self.f0.min_derivative() - T::one(),
        }
    }

    /// `Lip` with `sup_ω d_{C²}(f_ε(ω), f₀) ≤ Lip · ε`.
    pub fn lipschitz(&self) -> T {
        match self.noise_kind {
            NoiseKind::Additive => T::one(),
            NoiseKind::Parametric { mode, .. } => {
                let w = T::two_pi() * T::from_usize_lossy(mode);
                T::one() / w + T::one() + w
            }
        }
    }

    /// The fiber map at noise level `s ∈ [−1, 1]`.
    pub fn map_at_level(&self, s: T) -> Result<CircleMap<T>> {
        let delta = self.epsilon * s;
        if delta == T::zero() {
            return Ok(self.f0.clone());
        }
        match self.noise_kind {
            NoiseKind::Additive => self.f0.clone().with_shift(self.f0.shift() + delta),
            NoiseKind::Parametric { mode, component } => {
                self.f0.with_coefficient_offset(mode, component == Component::Sine, delta)
            }
        }
    }

    /// `f_ε(ω)`.
    pub fn fiber_map(&self, omega: &BasePoint<T>) -> Result<CircleMap<T>> {
        self.map_at_level(self.s_profile.eval(omega)?)
    }

    /// `d_{C²}(f_ε(ω), f₀)`: sup norms of the lift difference and its first
    /// two derivatives, summed, on a fine grid.
    pub fn c2_distance(&self, omega: &BasePoint<T>) -> Result<T> {
        let f = self.fiber_map(omega)?;
        let m = 4096;
        let (mut d0, mut d1, mut d2) = (T::zero(), T::zero(), T::zero());
        for i in 0..m {
            let x = T::from_usize_lossy(i) / T::from_usize_lossy(m);
            d0 = d0.max((f.lift(x) - self.f0.lift(x)).abs());
            d1 = d1.max((f.derivative(x) - self.f0.derivative(x)).abs());
            d2 = d2.max((f.second_derivative(x) - self.f0.second_derivative(x)).abs());
        }
        Ok(d0 + d1 + d2)
    }
}

/// `f_ε^{(n)}(ω) = f_ε(θ^{n−1}ω) ∘ … ∘ f_ε(ω)`.
pub fn fiber_compose_n<T: Scalar>(
    family: &RandomMapFamily<T>,
    base: &BaseSystem<T>,
    omega: &BasePoint<T>,
    n: usize,
) -> Result<ComposedMap<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("composition length must be at least 1".into()));
    }
    let mut maps = Vec::with_capacity(n);
    let mut point = omega.clone();
    for step in 0..n {
        maps.push(family.fiber_map(&point)?);
        if step + 1 < n {
            point = base.apply(&point)?;
        }
    }
    compose(maps)
}

/// `ℒ_ε` on a fixed observable layout.
///
/// One fiber transfer is cached per distinct fiber map: per grid node on
/// `[0, 1)`, per first symbol on the shift, or a single one when `ε = 0`.
/// Cylinder tables keep their depth: `ℓ̃_θ` drops a symbol and the result is
/// padded back.
#[derive(Clone, Debug)]
pub struct SkewOperator<T: Scalar> {
    family: RandomMapFamily<T>,
    base: BaseSystem<T>,
    shape: Shape,
    n_modes: usize,
    maps: Vec<CircleMap<T>>,
    transfers: Vec<FiberTransfer<T>>,
    lift: Stencil<T>,
}

impl<T: Scalar> SkewOperator<T> {
    pub fn new(family: &RandomMapFamily<T>, base: &BaseSystem<T>, shape: Shape, n_modes: usize) -> Result<Self> {
        base.validate()?;
        base.check_shape(shape)?;
        family.s_profile.check_base(base)?;
        let base = match shape {
            Shape::Grid(g) => base.on_grid(g),
            _ => base.clone(),
        };
        let uniform = family.epsilon == T::zero();
        let points: Vec<BasePoint<T>> = match shape {
            _ if uniform => Vec::new(),
            Shape::Constant => {
                return Err(Error::Representation(
                    "ω-dependent fiber maps need a grid or cylinder layout".into(),
                ))
            }
            Shape::Grid(g) => (0..g).map(|i| shape.point(i)).collect(),
            Shape::Cylinder { alphabet, depth } => {
                if depth == 0 {
                    return Err(Error::DepthExhausted);
                }
                (0..alphabet).map(|a| BasePoint::Word(vec![a])).collect()
            }
        };
        let maps: Vec<CircleMap<T>> = if uniform {
            vec![family.f0.clone()]
        } else {
            points.iter().map(|p| family.fiber_map(p)).collect::<Result<_>>()?
        };
        let transfers = maps
            .par_iter()
            .map(|m| FiberTransfer::new(m, n_modes))
            .collect::<Result<Vec<_>>>()?;
        let lift = base.transfer_stencil(shape)?;
        Ok(SkewOperator {
            family: family.clone(),
            base,
            shape,
            n_modes,
            maps,
            transfers,
            lift,
        })
    }

    pub fn family(&self) -> &RandomMapFamily<T> {
        &self.family
    }

    /// The base as realized on the layout (rotations snapped to the grid).
    pub fn base(&self) -> &BaseSystem<T> {
        &self.base
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// True when every fiber carries the same map.
    pub fn is_uniform(&self) -> bool {
        self.maps.len() == 1
    }

    fn fiber_slot(&self, shape: Shape, i: usize) -> usize {
        match shape {
            _ if self.is_uniform() => 0,
            Shape::Cylinder { alphabet, depth } => i / alphabet.pow(depth as u32 - 1),
            _ => i,
        }
    }

    /// The fiber map at representation index `i` of the layout.
    pub fn fiber_map_at(&self, i: usize) -> &CircleMap<T> {
        &self.maps[self.fiber_slot(self.shape, i)]
    }

    /// Representation of `u` this operator works on: constants stay constant
    /// when the fibers are uniform, everything else is laid out on the shape.
    pub fn prepare(&self, u: &RandomObservable<T>) -> Result<RandomObservable<T>> {
        match u {
            RandomObservable::Constant(_) if self.is_uniform() => Ok(u.clone()),
            _ => u.broadcast(self.shape),
        }
    }

    /// `ℒ_ε U = ℓ̃_θ (ω ↦ L(f_ε(ω)) U(ω))`.
    pub fn apply(&self, u: &RandomObservable<T>) -> Result<RandomObservable<T>> {
        let u = self.prepare(u)?;
        let shape = u.shape();
        let fibered: Vec<FiberFunction<T>> = u
            .values()
            .par_iter()
            .enumerate()
            .map(|(i, f)| self.transfers[self.fiber_slot(shape, i)].apply(f))
            .collect();
        let fibered = u.with_values(fibered);
        match shape {
            Shape::Constant => Ok(fibered),
            _ => self.lift.apply(&fibered)?.broadcast(shape),
        }
    }

    pub fn apply_n(&self, u: &RandomObservable<T>, n: usize) -> Result<RandomObservable<T>> {
        let mut v = self.prepare(u)?;
        for _ in 0..n {
            v = self.apply(&v)?;
        }
        Ok(v)
    }

    /// `|∫φ·ℒU dm dP − ∫φ(θω, f_ε(ω, x)) U(ω, x) dm dP|` over the layout,
    /// with `4096`-node quadrature in `x`.
    pub fn global_duality_residual(&self, phi: &RandomObservable<T>, u: &RandomObservable<T>) -> Result<T> {
        let shape = self.shape;
        let u = u.broadcast(shape)?;
        let phi = phi.broadcast(shape)?;
        let weights = self.base.weights(shape)?;
        let lu = self.apply(&u)?;
        let lhs = weights
            .iter()
            .zip(phi.values().iter().zip(lu.values()))
            .fold(num_complex::Complex::new(T::zero(), T::zero()), |s, (&w, (a, b))| {
                s + a.inner(b) * w
            });

        let koopman = self.base.koopman_stencil(shape)?;
        let phi_theta = koopman.apply(&phi)?;
        let wide = phi_theta.shape();
        let u_wide = u.broadcast(wide)?;
        let wide_weights = self.base.weights(wide)?;
        let terms: Vec<num_complex::Complex<T>> = (0..wide.len())
            .into_par_iter()
            .map(|i| {
                let map = &self.maps[self.fiber_slot(wide, i)];
                let (p, v) = (&phi_theta.values()[i], &u_wide.values()[i]);
                trapezoid_complex(QUADRATURE_NODES, |x: T| p.eval(map.eval(x)) * v.eval(x)) * wide_weights[i]
            })
            .collect();
        let rhs = terms
            .into_iter()
            .fold(num_complex::Complex::new(T::zero(), T::zero()), |s, t| s + t);
        Ok((lhs - rhs).norm())
    }
}

/// Result of [`skew_fixed_density`].
#[derive(Clone, Debug)]
pub struct FixedDensity<T: Scalar> {
    /// `ρ_ε`, with every fiber integral equal to 1.
    pub density: RandomObservable<T>,
    /// Growth factor of the common fiber integral in the last step.
    pub lambda_bar: T,
    pub iterations: usize,
    pub residual: T,
}

/// Power iteration of `ℒ_ε` from the constant 1, renormalizing the common
/// fiber integral to 1 after each step, until successive iterates differ by
/// less than `tol` in C¹ at every representation point.
pub fn skew_fixed_density<T: Scalar>(op: &SkewOperator<T>, tol: T) -> Result<FixedDensity<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let weights_for = |shape: Shape| op.base().weights(shape);
    let mut u = op.prepare(&RandomObservable::Constant(FiberFunction::constant(T::one(), op.n_modes())))?;
    let weights = weights_for(u.shape())?;
    let mut residual = T::infinity();
    for it in 1..=FIXED_POINT_MAX_ITERATIONS {
        let v = op.apply(&u)?;
        let mass = weights
            .iter()
            .zip(v.values())
            .fold(T::zero(), |s, (&w, f)| s + w * f.integral().re);
        let previous = weights
            .iter()
            .zip(u.values())
            .fold(T::zero(), |s, (&w, f)| s + w * f.integral().re);
        if !(mass.abs() > T::epsilon()) {
            return Err(Error::NotConverged {
                what: "random invariant density (mass vanished)",
                iterations: it,
                residual: residual.to_f64_lossy(),
            });
        }
        let lambda_bar = mass / previous;
        let v = v.map(|f| f.scale(T::one() / mass));
        residual = v
            .values()
            .par_iter()
            .zip(u.values())
            .map(|(a, b)| a.c1_distance(b))
            .reduce(T::zero, T::max);
        u = v;
        if residual < tol {
            check_positive(&u)?;
            return Ok(FixedDensity {
                density: u,
                lambda_bar,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NotConverged {
        what: "random invariant density",
        iterations: FIXED_POINT_MAX_ITERATIONS,
        residual: residual.to_f64_lossy(),
    })
}

fn check_positive<T: Scalar>(u: &RandomObservable<T>) -> Result<()> {
    let floor = -T::lit(NEGATIVITY_TOLERANCE);
    for (index, f) in u.values().iter().enumerate() {
        let m = (4 * f.truncation()).max(64);
        let min = f.samples(m).iter().fold(T::infinity(), |m, c| m.min(c.re));
        if min < floor {
            return Err(Error::NegativeDensity {
                index,
                min: min.to_f64_lossy(),
            });
        }
    }
    Ok(())
}
