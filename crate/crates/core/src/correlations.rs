//! Backward fiber correlations, integrated correlations, and exponential
//! rate fits.

use num_complex::Complex;
use serde::Serialize;

use crate::base::{kp_defect, RandomObservable};
use crate::error::{Error, Result};
use crate::fiber::FiberFunction;
use crate::scalar::Scalar;
use crate::skewprod::SkewOperator;

/// Magnitudes at or below this are treated as exact zeros when fitting.
pub const DEFAULT_FLOOR: f64 = 1e-12;
/// Largest accepted gap between the fitted rate and the max-ratio estimate.
pub const RATIO_DISAGREEMENT: f64 = 0.1;
/// Largest fiber-integral defect accepted by [`integrated_corr`].
pub const KP_LIMIT: f64 = 1e-8;

/// `Π₁U = U − ρ·∫U dm`, fiberwise.
pub fn project_out_density<T: Scalar>(
    rho: &RandomObservable<T>,
    u: &RandomObservable<T>,
) -> Result<RandomObservable<T>> {
    let shape = crate::base::common_shape(rho.shape(), u.shape())?;
    let rho = rho.broadcast(shape)?;
    let u = u.broadcast(shape)?;
    let values = rho
        .values()
        .iter()
        .zip(u.values())
        .map(|(r, f)| {
            let n = r.truncation().max(f.truncation());
            let mut out = f.resized(n);
            out.axpy_complex(-f.integral(), &r.resized(n));
            out
        })
        .collect();
    Ok(rho.with_values(values))
}

fn real_pairing<T: Scalar>(phi: &FiberFunction<T>, g: &FiberFunction<T>) -> T {
    phi.inner(g).re
}

/// Backward correlations `n ↦ ∫φ · (ℒⁿΠ₁u)(ω) dm`, `n = 1..=n_max`, at
/// several representation indices at once. The whole field is iterated once.
pub fn backward_corr_at<T: Scalar>(
    op: &SkewOperator<T>,
    rho: &RandomObservable<T>,
    phi: &FiberFunction<T>,
    u: &FiberFunction<T>,
    indices: &[usize],
    n_max: usize,
) -> Result<Vec<Vec<T>>> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let mut field = op.prepare(&project_out_density(rho, &RandomObservable::Constant(u.clone()))?)?;
    let mut out = vec![Vec::with_capacity(n_max); indices.len()];
    for _ in 0..n_max {
        field = op.apply(&field)?;
        let values = field.values();
        for (seq, &i) in out.iter_mut().zip(indices) {
            let f = values.get(i).unwrap_or(&values[0]);
            seq.push(real_pairing(phi, f));
        }
    }
    Ok(out)
}

/// Backward correlations at the representation point nearest `omega`.
pub fn backward_corr<T: Scalar>(
    op: &SkewOperator<T>,
    rho: &RandomObservable<T>,
    phi: &FiberFunction<T>,
    u: &FiberFunction<T>,
    omega: &crate::base::BasePoint<T>,
    n_max: usize,
) -> Result<Vec<T>> {
    let index = op.shape().nearest_index(omega)?;
    Ok(backward_corr_at(op, rho, phi, u, &[index], n_max)?.remove(0))
}

/// Integrated correlations `n ↦ ∫∫Φ · ℒⁿΠ₁U dm dP`, `n = 0..=n_max`.
pub fn integrated_corr<T: Scalar>(
    op: &SkewOperator<T>,
    rho: &RandomObservable<T>,
    phi: &RandomObservable<T>,
    u: &RandomObservable<T>,
    n_max: usize,
) -> Result<Vec<T>> {
    let defect = kp_defect(u);
    if !(defect < T::lit(KP_LIMIT)) {
        return Err(Error::NotInKp {
            defect: defect.to_f64_lossy(),
            limit: KP_LIMIT,
        });
    }
    let mut field = op.prepare(&project_out_density(rho, u)?)?;
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            field = op.apply(&field)?;
        }
        let shape = crate::base::common_shape(field.shape(), phi.shape())?;
        let weights = op.base().weights(shape)?;
        let lhs = phi.broadcast(shape)?;
        let rhs = field.broadcast(shape)?;
        let total = weights
            .iter()
            .zip(lhs.values().iter().zip(rhs.values()))
            .fold(Complex::new(T::zero(), T::zero()), |s, (&w, (a, b))| s + a.inner(b) * w);
        out.push(total.re);
    }
    Ok(out)
}

/// Exponential fit `|seq(n)| ≈ C τⁿ`, `n = 1, 2, …`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit<T: Scalar> {
    /// `exp(slope)`; zero when fewer than three terms exceed the floor.
    pub tau: T,
    /// `exp(intercept)`.
    pub c: T,
    /// Smallest `C′` with `|seq(n)| ≤ C′ τⁿ` on every fitted term. When
    /// `τ = 0` this is the largest magnitude in the sequence.
    pub envelope: T,
    /// `max |seq(n+1)/seq(n)|` over consecutive fitted terms.
    pub max_ratio: T,
    /// True when `max_ratio` and `tau` differ by more than 0.1.
    pub disagreement: bool,
    pub points: usize,
}

/// Least-squares fit of `log|seq(n)|` against `n` over the terms above `floor`.
pub fn fit_decay_rate<T: Scalar>(seq: &[T], floor: T) -> Result<DecayFit<T>> {
    if seq.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 4 terms, got {}",
            seq.len()
        )));
    }
    let kept: Vec<(T, T)> = seq
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > floor)
        .map(|(i, v)| (T::from_usize_lossy(i + 1), v.abs().ln()))
        .collect();
    if kept.len() < 3 {
        let largest = seq.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        return Ok(DecayFit {
            tau: T::zero(),
            c: T::zero(),
            envelope: largest,
            max_ratio: T::zero(),
            disagreement: false,
            points: kept.len(),
        });
    }
    let count = T::from_usize_lossy(kept.len());
    let (sx, sy) = kept.iter().fold((T::zero(), T::zero()), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / count, sy / count);
    let (sxy, sxx) = kept.iter().fold((T::zero(), T::zero()), |(a, b), &(x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let tau = slope.exp();
    let envelope = kept
        .iter()
        .fold(T::zero(), |m, &(x, y)| m.max((y - slope * x).exp()));

    let mut max_ratio = T::zero();
    for w in seq.windows(2) {
        if w[0].abs() > floor && w[1].abs() > floor {
            max_ratio = max_ratio.max((w[1] / w[0]).abs());
        }
    }
    Ok(DecayFit {
        tau,
        c: intercept.exp(),
        envelope,
        max_ratio,
        disagreement: (max_ratio - tau).abs() > T::lit(RATIO_DISAGREEMENT),
        points: kept.len(),
    })
}
