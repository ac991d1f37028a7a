//! Discretizations of the fiber transfer operator
//! `(L(f)u)(x) = Σ_{f(y)=x} u(y) / |f′(y)|`.
//!
//! Two unrelated discretizations are provided: Fourier collocation (the
//! working representation) and Ulam's cell method (an independent oracle
//! for invariant densities).

use num_complex::Complex;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{grid_point, trapezoid_complex};
pub use crate::fiber::FiberFunction;
use crate::maps::{CircleMap, FiberMap};
use crate::scalar::Scalar;

/// Collocation points per retained mode.
pub const OVERSAMPLING: usize = 4;
/// Quadrature nodes for duality checks.
pub const QUADRATURE_NODES: usize = 4096;
/// Relative magnitude below which assembled Fourier entries are flushed to zero.
pub const FLUSH_THRESHOLD: f64 = 1e-14;

/// `(L(f)u)(x)` evaluated directly from the inverse branches.
pub fn transfer_apply_exact<T: Scalar, M: FiberMap<T> + ?Sized>(
    map: &M,
    u: &FiberFunction<T>,
    x: T,
) -> Result<Complex<T>> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for y in map.inverse_branches(x)? {
        acc = acc + u.eval(y) / map.derivative(y).abs();
    }
    Ok(acc)
}

/// Fourier-collocation transfer operator of one map at truncation `N`:
/// `Lu` is sampled on `4N` equispaced points through the inverse branches
/// and projected back onto modes `|k| ≤ N`.
#[derive(Clone, Debug)]
pub struct FiberTransfer<T: Scalar> {
    n_modes: usize,
    branches: usize,
    /// `(preimage, 1/|f′(preimage)|)`, `branches` entries per collocation point.
    nodes: Vec<(T, T)>,
}

impl<T: Scalar> FiberTransfer<T> {
    pub fn new<M: FiberMap<T> + ?Sized>(map: &M, n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidArgument("truncation must be at least 1".into()));
        }
        let points = OVERSAMPLING * n_modes;
        let branches = map.branch_count();
        let mut nodes = Vec::with_capacity(points * branches);
        for p in 0..points {
            let x = grid_point(p, points);
            let ys = map.inverse_branches(x)?;
            debug_assert_eq!(ys.len(), branches);
            nodes.extend(ys.into_iter().map(|y| (y, T::one() / map.derivative(y).abs())));
        }
        Ok(Self {
            n_modes,
            branches,
            nodes,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Values of `Lu` on the collocation grid.
    pub fn apply_samples(&self, u: &FiberFunction<T>) -> Vec<Complex<T>> {
        self.nodes
            .chunks(self.branches)
            .map(|chunk| {
                chunk.iter().fold(Complex::new(T::zero(), T::zero()), |acc, &(y, w)| {
                    acc + u.eval(y) * w
                })
            })
            .collect()
    }

    pub fn apply(&self, u: &FiberFunction<T>) -> FiberFunction<T> {
        FiberFunction::from_samples(&self.apply_samples(u), self.n_modes)
    }

    /// Matrix of the operator on modes `|k| ≤ N`; see [`assemble_fourier`].
    pub fn assemble(&self) -> FourierOperator<T> {
        let n = self.n_modes;
        let dim = 2 * n + 1;
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for (col, k) in (-(n as i64)..=n as i64).enumerate() {
            let image = self.apply(&FiberFunction::mode(k, n));
            for (row, c) in image.coeffs().iter().enumerate() {
                data[row * dim + col] = *c;
            }
        }
        let scale = data.iter().fold(T::zero(), |m, c| m.max(c.norm()));
        let cut = T::tol(FLUSH_THRESHOLD) * scale;
        for c in data.iter_mut() {
            if c.norm() < cut {
                *c = Complex::new(T::zero(), T::zero());
            }
        }
        // the zero mode is the integral, which L conserves exactly
        let mass_row = &mut data[n * dim..(n + 1) * dim];
        mass_row.fill(Complex::new(T::zero(), T::zero()));
        mass_row[n] = Complex::new(T::one(), T::zero());
        FourierOperator { n_modes: n, data }
    }
}

/// Dense Fourier-basis matrix of a transfer operator. Row and column `j`
/// correspond to mode `k = j − N`; column `k` holds the coefficients of `L e_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierOperator<T: Scalar> {
    n_modes: usize,
    data: Vec<Complex<T>>,
}

/// Fourier-collocation matrix of `L(f)` on modes `|k| ≤ n`, `n ≥ 8`.
pub fn assemble_fourier<T: Scalar, M: FiberMap<T> + ?Sized>(map: &M, n: usize) -> Result<FourierOperator<T>> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!("Fourier truncation must be at least 8, got {n}")));
    }
    Ok(FiberTransfer::new(map, n)?.assemble())
}

impl<T: Scalar> FourierOperator<T> {
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        2 * self.n_modes + 1
    }

    /// Entry at (output mode `j`, input mode `k`).
    pub fn entry(&self, j: i64, k: i64) -> Complex<T> {
        let n = self.n_modes as i64;
        self.data[((j + n) as usize) * self.dim() + (k + n) as usize]
    }

    pub fn column(&self, k: i64) -> FiberFunction<T> {
        let n = self.n_modes as i64;
        let coeffs = (-n..=n).map(|j| self.entry(j, k)).collect();
        FiberFunction::from_coeffs(coeffs).expect("odd dimension")
    }

    /// Row-major entries.
    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn apply(&self, u: &FiberFunction<T>) -> FiberFunction<T> {
        let dim = self.dim();
        let input;
        let c = if u.truncation() == self.n_modes {
            u.coeffs()
        } else {
            input = u.resized(self.n_modes);
            input.coeffs()
        };
        let out = self
            .data
            .chunks(dim)
            .map(|row| {
                row.iter()
                    .zip(c)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b)
            })
            .collect();
        FiberFunction::from_coeffs(out).expect("odd dimension")
    }
}

/// Ulam matrix `P_ij = m(I_i ∩ f⁻¹I_j) / m(I_i)` on `N` uniform cells,
/// stored by rows. Each row has only a handful of nonzeros, so refinements
/// like `N = 2¹⁴` stay cheap.
#[derive(Clone, Debug, PartialEq)]
pub struct UlamOperator<T: Scalar> {
    cells: usize,
    rows: Vec<Vec<(usize, T)>>,
}

/// Ulam discretization with `n ≥ 16` cells. Cell preimage boundaries are
/// found by solving the lift exactly, so row sums are 1 to rounding.
pub fn assemble_ulam<T: Scalar>(map: &CircleMap<T>, n: usize) -> Result<UlamOperator<T>> {
    if n < 16 {
        return Err(Error::InvalidArgument(format!("Ulam partition needs at least 16 cells, got {n}")));
    }
    ulam_unchecked(map, n)
}

pub(crate) fn ulam_unchecked<T: Scalar>(map: &CircleMap<T>, n: usize) -> Result<UlamOperator<T>> {
    let nt = T::from_usize_lossy(n);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let a = grid_point::<T>(i, n);
        let b = grid_point::<T>(i + 1, n);
        let (fa, fb) = (map.lift(a), map.lift(b));
        // image-cell boundaries strictly inside (F(a), F(b)) in units of 1/n
        let first = (fa * nt).floor().to_i64().expect("finite lift");
        let last = (fb * nt).ceil().to_i64().expect("finite lift");
        let mut row: Vec<(usize, T)> = Vec::new();
        let mut left = a;
        for cell in first..last {
            let upper = T::from_i64(cell + 1).unwrap() / nt;
            let right = if upper >= fb { b } else { map.solve_lift(upper)?.max(left).min(b) };
            let weight = (right - left) * nt;
            if weight > T::zero() {
                let j = cell.rem_euclid(n as i64) as usize;
                match row.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 = e.1 + weight,
                    None => row.push((j, weight)),
                }
            }
            left = right;
        }
        row.sort_by_key(|e| e.0);
        rows.push(row);
    }
    Ok(UlamOperator { cells: n, rows })
}

impl<T: Scalar> UlamOperator<T> {
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn rows(&self) -> &[Vec<(usize, T)>] {
        &self.rows
    }

    pub fn to_dense(&self) -> Vec<T> {
        let n = self.cells;
        let mut out = vec![T::zero(); n * n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[i * n + j] = w;
            }
        }
        out
    }

    /// `π ↦ πP` for a row vector of cell masses.
    pub fn push_forward(&self, mass: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cells];
        for (row, &m) in self.rows.iter().zip(mass) {
            for &(j, w) in row {
                out[j] = out[j] + m * w;
            }
        }
        out
    }

    /// Leading left eigenvector, normalized to total mass 1.
    pub fn stationary_mass(&self, tol: T, max_iter: usize) -> Result<Vec<T>> {
        let nt = T::from_usize_lossy(self.cells);
        let mut mass = vec![T::one() / nt; self.cells];
        let mut diff = T::infinity();
        for _ in 0..max_iter {
            let mut next = self.push_forward(&mass);
            let total = next.iter().fold(T::zero(), |a, &b| a + b);
            next.iter_mut().for_each(|v| *v = *v / total);
            diff = next
                .iter()
                .zip(&mass)
                .fold(T::zero(), |a, (x, y)| a + (*x - *y).abs());
            mass = next;
            if diff < tol {
                return Ok(mass);
            }
        }
        Err(Error::NotConverged {
            what: "Ulam stationary vector",
            iterations: max_iter,
            residual: diff.to_f64_lossy(),
        })
    }

    /// Invariant density as cell values (`N · π_j`).
    pub fn stationary_density(&self, tol: T) -> Result<Vec<T>> {
        let nt = T::from_usize_lossy(self.cells);
        Ok(self
            .stationary_mass(tol, 10_000)?
            .into_iter()
            .map(|m| m * nt)
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    FourierCollocation,
    Ulam,
}

/// A discretized transfer operator in either basis.
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorMatrix<T: Scalar> {
    Fourier(FourierOperator<T>),
    Ulam(UlamOperator<T>),
}

#[derive(Serialize)]
struct OperatorExport {
    basis: Basis,
    n: usize,
    /// Row-major; complex entries as `[re, im]`.
    data: Vec<[f64; 2]>,
}

impl<T: Scalar> OperatorMatrix<T> {
    pub fn basis(&self) -> Basis {
        match self {
            OperatorMatrix::Fourier(_) => Basis::FourierCollocation,
            OperatorMatrix::Ulam(_) => Basis::Ulam,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OperatorMatrix::Fourier(f) => f.dim(),
            OperatorMatrix::Ulam(u) => u.cells(),
        }
    }

    /// Dense entries as complex numbers, row-major. For Ulam this is the
    /// row-stochastic matrix itself (acting on row vectors).
    pub fn dense_complex(&self) -> Vec<Complex<T>> {
        match self {
            OperatorMatrix::Fourier(f) => f.data().to_vec(),
            OperatorMatrix::Ulam(u) => u
                .to_dense()
                .into_iter()
                .map(|v| Complex::new(v, T::zero()))
                .collect(),
        }
    }

    /// Debug export `{basis, n, data}`.
    pub fn to_json(&self) -> Result<String> {
        let export = OperatorExport {
            basis: self.basis(),
            n: self.dim(),
            data: self
                .dense_complex()
                .into_iter()
                .map(|c| [c.re.to_f64_lossy(), c.im.to_f64_lossy()])
                .collect(),
        };
        Ok(serde_json::to_string(&export)?)
    }
}

/// `|∫ φ·(Lu) dm − ∫ (φ∘f)·u dm|` by the 4096-node trapezoid rule, with
/// `Lu` from the exact branch sum.
pub fn duality_residual<T: Scalar, M: FiberMap<T> + ?Sized>(
    map: &M,
    phi: &FiberFunction<T>,
    u: &FiberFunction<T>,
) -> Result<T> {
    let m = QUADRATURE_NODES;
    let mut lhs = Complex::new(T::zero(), T::zero());
    for p in 0..m {
        let x = grid_point::<T>(p, m);
        lhs = lhs + phi.eval(x) * transfer_apply_exact(map, u, x)?;
    }
    lhs = lhs / T::from_usize_lossy(m);
    let rhs = trapezoid_complex(m, |x| phi.eval(map.eval(x)) * u.eval(x));
    Ok((lhs - rhs).norm())
}

/// Largest observed `‖Lu‖_{C¹} / ‖u‖_{C¹}` over random real trigonometric
/// polynomials of degree ≤ 8; an empirical constant for the weak
/// Lasota–Yorke bound.
pub fn c1_norm_bound_estimate<T: Scalar, R: Rng + ?Sized>(
    map: &CircleMap<T>,
    trials: usize,
    rng: &mut R,
) -> Result<T> {
    if trials < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 trials, got {trials}")));
    }
    const BAND: usize = 8;
    const TRUNCATION: usize = 64;
    let op = FiberTransfer::new(map, TRUNCATION)?;
    let mut worst = T::zero();
    for _ in 0..trials {
        let terms: Vec<_> = (0..=BAND)
            .map(|k| (k, T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0))))
            .collect();
        let u = FiberFunction::from_trig(TRUNCATION, &terms);
        let ratio = op.apply(&u).c1_norm_sharp() / u.c1_norm_sharp();
        worst = worst.max(ratio);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_transfer_of_doubling() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let one = FiberFunction::constant(1.0, 4);
        assert_abs_diff_eq!(transfer_apply_exact(&f, &one, 0.37).unwrap().re, 1.0, epsilon = 1e-15);
        let u = FiberFunction::from_trig(4, &[(2, 0.0, 1.0)]);
        assert_abs_diff_eq!(transfer_apply_exact(&f, &u, 0.0).unwrap().re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(transfer_apply_exact(&f, &u, 0.25).unwrap().re, 0.0, epsilon = 1e-14);
        let v = FiberFunction::from_trig(4, &[(1, 0.0, 1.0)]);
        for &x in &[0.0, 0.2, 0.9] {
            assert_abs_diff_eq!(transfer_apply_exact(&f, &v, x).unwrap().norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn fourier_matrix_of_doubling_halves_modes() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let op = assemble_fourier(&f, 8).unwrap();
        let col2 = op.column(2);
        for k in -8..=8i64 {
            let expect = if k == 1 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(col2.coeff(k).re, expect, epsilon = 1e-12);
            assert_abs_diff_eq!(col2.coeff(k).im, 0.0, epsilon = 1e-12);
        }
        assert!(op.column(1).coeff_l1() < 1e-12);
        assert_abs_diff_eq!(op.column(0).integral().re, 1.0, epsilon = 1e-14);
        assert!(assemble_fourier(&f, 4).is_err());
    }

    #[test]
    fn mass_column_of_perturbed_map() {
        let f = CircleMap::new(2, vec![(1, 0.5, 0.0)], 2.0f64).unwrap();
        let op = assemble_fourier(&f, 16).unwrap();
        assert_abs_diff_eq!(op.column(0).integral().re, 1.0, epsilon = 1e-14);
        for k in [-3i64, 1, 5] {
            assert!(op.entry(0, k).norm() < 1e-12);
        }
    }

    #[test]
    fn ulam_small_partitions_of_doubling() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let p2 = ulam_unchecked(&f, 2).unwrap().to_dense();
        assert_eq!(p2, vec![0.5, 0.5, 0.5, 0.5]);
        let p4 = ulam_unchecked(&f, 4).unwrap();
        for i in 0..4 {
            let row = &p4.rows()[i];
            let mut expect = vec![((2 * i) % 4, 0.5), ((2 * i + 1) % 4, 0.5)];
            expect.sort_by_key(|e| e.0);
            assert_eq!(row, &expect);
        }
        assert!(assemble_ulam(&f, 8).is_err());
    }

    #[test]
    fn ulam_rows_are_stochastic() {
        let f = CircleMap::new(3, vec![(1, 0.4, -0.3), (2, 0.1, 0.2)], 2.0f64).unwrap();
        let p = assemble_ulam(&f, 257).unwrap();
        for row in p.rows() {
            let s: f64 = row.iter().map(|e| e.1).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|e| e.1 >= 0.0));
        }
        let mass = p.stationary_mass(1e-14, 10_000).unwrap();
        assert_abs_diff_eq!(mass.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn operator_export_shape() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let op = OperatorMatrix::Ulam(assemble_ulam(&f, 16).unwrap());
        let v: serde_json::Value = serde_json::from_str(&op.to_json().unwrap()).unwrap();
        assert_eq!(v["basis"], "ulam");
        assert_eq!(v["n"], 16);
        assert_eq!(v["data"].as_array().unwrap().len(), 256);
    }

    #[test]
    fn duality_on_simple_pairs() {
        let f = CircleMap::<f64>::linear(2).unwrap();
        let e1 = FiberFunction::mode(1, 4);
        let e2 = FiberFunction::mode(2, 4);
        assert!(duality_residual(&f, &e1, &e2).unwrap() < 1e-12);
        let cos1 = FiberFunction::from_trig(4, &[(1, 0.0, 1.0)]);
        let cos2 = FiberFunction::from_trig(4, &[(2, 0.0, 1.0)]);
        assert!(duality_residual(&f, &cos1, &cos2).unwrap() < 1e-12);
        let g = CircleMap::new(2, vec![(1, 0.5, 0.0)], 2.0f64).unwrap();
        let one = FiberFunction::constant(1.0, 2);
        assert!(duality_residual(&g, &one, &one).unwrap() < 1e-12);
    }
}
