//! Eigen-analysis of discretized transfer operators.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::FiberFunction;
use crate::maps::{expanding_constant, CircleMap};
use crate::scalar::Scalar;
use crate::transfer::{FourierOperator, OperatorMatrix};

pub const POWER_MAX_ITERATIONS: usize = 10_000;
/// Largest matrix handed to the dense eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 1024;
/// `m_max` and grid used for `Λ_r` inside [`decay_rate_upper`].
pub const EXPANDING_M_MAX: usize = 8;
pub const EXPANDING_GRID: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct LeadingPair<T: Scalar> {
    pub eigenvalue: Complex<T>,
    /// Invariant density, normalized to `∫ρ dm = 1`.
    pub density: FiberFunction<T>,
    pub iterations: usize,
}

/// Power iteration from the constant function. Each iterate is renormalized
/// to unit integral; the eigenvalue is the ratio of `c₀` before and after one
/// application. Stops once successive iterates differ by less than `tol` in C¹.
pub fn leading_pair<T: Scalar>(op: &FourierOperator<T>, tol: T) -> Result<LeadingPair<T>> {
    if tol <= T::zero() {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let n = op.n_modes();
    let mut v = FiberFunction::constant(T::one(), n);
    let mut residual = T::infinity();
    for it in 1..=POWER_MAX_ITERATIONS {
        let w = op.apply(&v);
        let mass = w.integral();
        if mass.norm() <= T::epsilon() {
            return Err(Error::NotConverged {
                what: "leading eigenpair (mass vanished)",
                iterations: it,
                residual: residual.to_f64_lossy(),
            });
        }
        let eigenvalue = mass / v.integral();
        let w = w.scale_complex(Complex::new(T::one(), T::zero()) / mass);
        residual = w.c1_distance(&v);
        v = w;
        if residual < tol {
            return Ok(LeadingPair {
                eigenvalue,
                density: v,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        what: "leading eigenpair",
        iterations: POWER_MAX_ITERATIONS,
        residual: residual.to_f64_lossy(),
    })
}

/// `(1/n) Σ_{k=1..n} Lᵏu`.
///
/// Small `n` iterates directly. Past `4·dim` steps the sum is built by binary
/// splitting, `S_{2m} = S_m + L^m S_m`, with dense matrix squaring, so very
/// large `n` costs `O(dim³ log n)`.
pub fn cesaro_projection<T: Scalar>(op: &FourierOperator<T>, u: &FiberFunction<T>, n: usize) -> Result<FiberFunction<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("Cesàro average needs n ≥ 1".into()));
    }
    let u = u.resized(op.n_modes());
    let inv_n = T::one() / T::from_usize_lossy(n);
    if n <= 4 * op.dim() {
        let mut current = u;
        let mut sum = FiberFunction::zeros(op.n_modes());
        for _ in 0..n {
            current = op.apply(&current);
            sum.axpy(T::one(), &current);
        }
        return Ok(sum.scale(inv_n));
    }

    let dim = op.dim();
    let zero = Complex::new(T::zero(), T::zero());
    let mut power: Vec<Complex<T>> = (0..dim * dim)
        .map(|i| if i / dim == i % dim { Complex::new(T::one(), T::zero()) } else { zero })
        .collect();
    let mut sum = vec![zero; dim];
    for bit in (0..usize::BITS - n.leading_zeros()).rev() {
        let shifted = mat_vec(&power, &sum, dim);
        sum.iter_mut().zip(shifted).for_each(|(s, t)| *s = *s + t);
        power = mat_mul(&power, &power, dim);
        if (n >> bit) & 1 == 1 {
            power = mat_mul(op.data(), &power, dim);
            let term = mat_vec(&power, u.coeffs(), dim);
            sum.iter_mut().zip(term).for_each(|(s, t)| *s = *s + t);
        }
    }
    let sum = FiberFunction::from_coeffs(sum).expect("odd dimension");
    Ok(sum.scale(inv_n))
}

fn mat_vec<T: Scalar>(a: &[Complex<T>], x: &[Complex<T>], dim: usize) -> Vec<Complex<T>> {
    a.chunks(dim)
        .map(|row| row.iter().zip(x).fold(Complex::new(T::zero(), T::zero()), |acc, (p, q)| acc + p * q))
        .collect()
}

fn mat_mul<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>], dim: usize) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); dim * dim];
    for (i, row) in a.chunks(dim).enumerate() {
        let target = &mut out[i * dim..(i + 1) * dim];
        for (k, &aik) in row.iter().enumerate() {
            if aik.re.is_zero() && aik.im.is_zero() {
                continue;
            }
            for (t, &bkj) in target.iter_mut().zip(&b[k * dim..(k + 1) * dim]) {
                *t = *t + aik * bkj;
            }
        }
    }
    out
}

/// Spectral radius of the operator with the eigenvalue nearest 1 removed.
///
/// Eigenvalues come from a complex Schur decomposition. Defective clusters
/// (nilpotent mode chains, which are exact for linear maps) are resolved by
/// also bounding the radius of the deflated operator `R = A − λ₁vwᵀ` through
/// `‖R^{2^j}‖^{1/2^j}`; the smaller of the two is reported.
pub fn subdominant_radius<T: Scalar>(op: &OperatorMatrix<T>) -> Result<T> {
    let dim = op.dim();
    if dim > DENSE_EIGEN_LIMIT {
        return Err(Error::DimensionTooLarge {
            dim,
            limit: DENSE_EIGEN_LIMIT,
        });
    }
    let entries: Vec<Complex<f64>> = op
        .dense_complex()
        .into_iter()
        .map(|c| Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy()))
        .collect();
    let a = DMatrix::from_row_slice(dim, dim, &entries);

    let iterations = 100 * dim.max(10);
    let gelfand = deflated_gelfand_bound(op, &a)?;
    match eigen_estimate(&a, iterations) {
        Some(eigen) => Ok(T::lit(eigen.min(gelfand))),
        None if gelfand.is_finite() => Ok(T::lit(gelfand)),
        None => Err(Error::NotConverged {
            what: "Schur decomposition",
            iterations,
            residual: f64::NAN,
        }),
    }
}

/// `None` when the QR iteration does not converge, which happens for exactly
/// nilpotent blocks.
fn eigen_estimate(a: &DMatrix<Complex<f64>>, iterations: usize) -> Option<f64> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, iterations)?;
    let mut eig: Vec<Complex<f64>> = schur
        .eigenvalues()
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|| {
            // complex Schur form is triangular; read the diagonal directly
            let (_, t) = schur.clone().unpack();
            t.diagonal().iter().copied().collect()
        });
    if eig.len() <= 1 {
        return Some(0.0);
    }
    let one = Complex::new(1.0, 0.0);
    let nearest = (0..eig.len())
        .min_by(|&i, &j| {
            (eig[i] - one)
                .norm()
                .total_cmp(&(eig[j] - one).norm())
                .then(eig[j].norm().total_cmp(&eig[i].norm()))
        })
        .expect("non-empty");
    eig.swap_remove(nearest);
    Some(eig.iter().fold(0.0, |m, z| m.max(z.norm())))
}

fn deflated_gelfand_bound<T: Scalar>(op: &OperatorMatrix<T>, a: &DMatrix<Complex<f64>>) -> Result<f64> {
    let dim = a.nrows();
    let zero = Complex::new(0.0, 0.0);
    let one = Complex::new(1.0, 0.0);
    // natural starting vectors: the constant density and the mass functional
    let (right0, left0) = match op {
        OperatorMatrix::Fourier(f) => {
            let mut e0 = DVector::from_element(dim, zero);
            e0[f.n_modes()] = one;
            (e0.clone(), e0)
        }
        OperatorMatrix::Ulam(_) => (
            DVector::from_element(dim, one),
            DVector::from_element(dim, Complex::new(1.0 / dim as f64, 0.0)),
        ),
    };
    let right = dominant_vector(a, right0)?;
    let left = dominant_vector(&a.transpose(), left0)?;
    let scale = left.transpose() * &right;
    let scale = scale[(0, 0)];
    if scale.norm() < 1e-12 {
        return Ok(f64::INFINITY);
    }
    let lambda = (left.transpose() * a * &right)[(0, 0)] / scale;
    let mut r = a - (&right * left.transpose()) * (lambda / scale);

    let mut bound = f64::INFINITY;
    let mut power = 1.0;
    for _ in 0..7 {
        let norm = r.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        bound = bound.min(norm.powf(1.0 / power));
        r = &r * &r;
        power *= 2.0;
    }
    Ok(bound)
}

fn dominant_vector(a: &DMatrix<Complex<f64>>, start: DVector<Complex<f64>>) -> Result<DVector<Complex<f64>>> {
    let mut v = start;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERATIONS {
        let mut w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(v);
        }
        // fix the phase by the largest component so the iteration can settle
        let pivot = w.iter().copied().max_by(|x, y| x.norm().total_cmp(&y.norm())).unwrap();
        w *= pivot.conj() / (pivot.norm() * norm);
        residual = (&w - &v).norm();
        v = w;
        if residual < 1e-14 {
            return Ok(v);
        }
    }
    Err(Error::NotConverged {
        what: "dominant eigenvector",
        iterations: POWER_MAX_ITERATIONS,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateBound<T: Scalar> {
    pub subdominant: T,
    pub expanding: T,
    /// `max(subdominant, expanding)`.
    pub value: T,
}

/// `max(subdominant_radius(op), Λ_r(map))`, the operational decay-rate bound.
/// The matrix alone never sees the essential spectrum, hence the second term.
pub fn decay_rate_upper<T: Scalar>(map: &CircleMap<T>, op: &OperatorMatrix<T>, r: T) -> Result<RateBound<T>> {
    let subdominant = subdominant_radius(op)?;
    let expanding = expanding_constant(map, r, EXPANDING_M_MAX, EXPANDING_GRID)?.value;
    Ok(RateBound {
        subdominant,
        expanding,
        value: subdominant.max(expanding),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::{assemble_fourier, ulam_unchecked};
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubling_density_is_constant_after_one_step() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let op = assemble_fourier(&f, 64).unwrap();
        let lp = leading_pair(&op, 1e-12).unwrap();
        assert_eq!(lp.iterations, 1);
        assert_abs_diff_eq!(lp.eigenvalue.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!((&lp.density - &FiberFunction::constant(1.0, 64)).coeff_l1(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn doubling_ulam_n8_spectrum_by_hand() {
        // P for N = 8 maps cell i to cells 2i, 2i+1 (mod 8) with weight ½;
        // P³ has all entries 1/8, so every eigenvalue but 1 vanishes.
        let f = CircleMap::<f64>::linear(2).unwrap();
        let p = ulam_unchecked(&f, 8).unwrap();
        let dense = p.to_dense();
        let mut cube = dense.clone();
        for _ in 0..2 {
            let mut next = vec![0.0; 64];
            for i in 0..8 {
                for j in 0..8 {
                    next[i * 8 + j] = (0..8).map(|k| cube[i * 8 + k] * dense[k * 8 + j]).sum();
                }
            }
            cube = next;
        }
        assert!(cube.iter().all(|&v| v == 0.125));
        let r = subdominant_radius(&OperatorMatrix::Ulam(p)).unwrap();
        assert!(r < 1e-10, "radius {r}");
    }

    #[test]
    fn dimension_guard() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let op = OperatorMatrix::Ulam(ulam_unchecked(&f, 1025).unwrap());
        assert!(matches!(subdominant_radius(&op), Err(Error::DimensionTooLarge { .. })));
    }

    #[test]
    fn cesaro_splitting_matches_direct_sum() {
        let f = CircleMap::new(2, vec![(1, 0.5, 0.0)], 2.0).unwrap();
        let op = assemble_fourier(&f, 8).unwrap();
        let u = FiberFunction::from_trig(8, &[(0, 0.0, 0.3), (1, 0.2, -0.4), (3, 0.5, 0.1)]);
        let n = 4 * op.dim() + 7;
        let mut current = u.clone();
        let mut direct = FiberFunction::zeros(8);
        for _ in 0..n {
            current = op.apply(&current);
            direct.axpy(1.0, &current);
        }
        let direct = direct.scale(1.0 / n as f64);
        assert!((&cesaro_projection(&op, &u, n).unwrap() - &direct).coeff_l1() < 1e-13);
    }

    #[test]
    fn cesaro_limit_is_idempotent() {
        let f = CircleMap::new(2, vec![(1, 0.5, 0.0)], 2.0).unwrap();
        let op = assemble_fourier(&f, 32).unwrap();
        let u = FiberFunction::from_trig(32, &[(0, 0.0, 1.0), (1, 0.3, 0.2), (2, -0.1, 0.4)]);
        let n = 1 << 40;
        let once = cesaro_projection(&op, &u, n).unwrap();
        let twice = cesaro_projection(&op, &once, n).unwrap();
        assert!((&twice - &once).sup_norm() < 1e-8);
        let rho = leading_pair(&op, 1e-12).unwrap().density;
        assert!((&once - &rho).sup_norm() < 1e-8);
        let doubling = assemble_fourier(&CircleMap::linear(2).unwrap(), 32).unwrap();
        let zero_mean = FiberFunction::from_trig(32, &[(1, 1.0, 0.0), (5, 0.0, 1.0)]);
        assert!(cesaro_projection(&doubling, &zero_mean, 64).unwrap().sup_norm() < 1e-10);
    }

    #[test]
    fn cesaro_rejects_zero_steps() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let op = assemble_fourier(&f, 8).unwrap();
        assert!(cesaro_projection(&op, &FiberFunction::constant(1.0, 8), 0).is_err());
    }

    #[test]
    fn leading_pair_rejects_bad_tolerance() {
        let f = CircleMap::<f64>::linear(3).unwrap();
        let op = assemble_fourier(&f, 8).unwrap();
        assert!(leading_pair(&op, 0.0).is_err());
    }
}
