//! Action of `exp(tA)` on a vector for sparse `A`, by Arnoldi projection with
//! adaptive sub-stepping and a local error estimate from the augmented
//! Hessenberg matrix. [`ShiftInvert`] covers delays far beyond `1/‖A‖`.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::sparse::SparseMatrix;

pub const DEFAULT_BASIS: usize = 30;
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_STEPS: usize = 200_000;
const SAFETY: f64 = 0.9;

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Propagator for `dx/dt = A x`.
#[derive(Debug, Clone)]
pub struct Krylov<'a> {
    a: &'a SparseMatrix,
    basis: usize,
    tol: f64,
    a_norm: f64,
}

struct Projection {
    beta: f64,
    basis: Vec<Vec<C64>>,
    h: Mat<C64>,
    /// Dimension of the Hessenberg block actually exponentiated.
    size: usize,
    /// Number of basis vectors combined on output.
    used: usize,
    /// `‖A v_{m+1}‖`, or `None` after a lucky breakdown (exact subspace).
    tail: Option<f64>,
}

impl<'a> Krylov<'a> {
    pub fn new(a: &'a SparseMatrix) -> Self {
        Self::with_settings(a, DEFAULT_BASIS, DEFAULT_TOL)
    }

    pub fn with_settings(a: &'a SparseMatrix, basis: usize, tol: f64) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let basis = basis.clamp(1, a.nrows().max(1));
        Self {
            a,
            basis,
            tol,
            a_norm: a.norm_one(),
        }
    }

    fn project(&self, w: &[C64], beta: f64) -> Projection {
        let m = self.basis;
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(w.iter().map(|z| z / beta).collect());
        let mut h = Mat::<C64>::zeros(m + 2, m + 2);
        let breakdown = 1e-14 * self.a_norm.max(f64::MIN_POSITIVE);
        let mut p = vec![C64::new(0.0, 0.0); w.len()];
        for j in 0..m {
            self.a.mul_vec_into(&basis[j], &mut p);
            // modified Gram–Schmidt, repeated once when cancellation is severe
            let mut s = norm(&p);
            for pass in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(v, &p);
                    h[(i, j)] += c;
                    p.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
                let after = norm(&p);
                let severe = after < 0.7 * s;
                s = after;
                if pass == 0 && !severe {
                    break;
                }
            }
            if s <= breakdown {
                return Projection {
                    beta,
                    basis,
                    h,
                    size: j + 1,
                    used: j + 1,
                    tail: None,
                };
            }
            h[(j + 1, j)] = C64::new(s, 0.0);
            basis.push(p.iter().map(|z| z / s).collect());
        }
        self.a.mul_vec_into(&basis[m], &mut p);
        let tail = norm(&p);
        h[(m + 1, m)] = C64::new(1.0, 0.0);
        Projection {
            beta,
            basis,
            h,
            size: m + 2,
            used: m + 1,
            tail: Some(tail),
        }
    }

    fn small_exp(proj: &Projection, t: f64) -> Mat<C64> {
        let n = proj.size;
        let scaled = Mat::<C64>::from_fn(n, n, |i, j| proj.h[(i, j)] * t);
        expm(&scaled)
    }

    fn combine(proj: &Projection, f: &Mat<C64>) -> Vec<C64> {
        let len = proj.basis[0].len();
        let mut out = vec![C64::new(0.0, 0.0); len];
        for (k, v) in proj.basis.iter().take(proj.used).enumerate() {
            let c = f[(k, 0)] * proj.beta;
            out.iter_mut().zip(v).for_each(|(x, y)| *x += c * y);
        }
        out
    }

    fn local_error(&self, proj: &Projection, f: &Mat<C64>) -> f64 {
        let Some(tail) = proj.tail else { return 0.0 };
        let m = self.basis;
        let phi1 = proj.beta * f[(m, 0)].norm();
        let phi2 = proj.beta * f[(m + 1, 0)].norm() * tail;
        if phi1 > 10.0 * phi2 {
            phi2
        } else if phi1 > phi2 {
            phi1 * phi2 / (phi1 - phi2)
        } else {
            phi1
        }
    }

    /// `exp(t_k A) v` for each `t_k` of a non-decreasing, non-negative grid.
    pub fn propagate(&self, v: &[C64], times: &[f64]) -> Result<Vec<Vec<C64>>> {
        self.run(v, times, &mut Vectors)
    }

    /// `Σ_p w_p [exp(t_k A) v]_p` for sparse weights `(p, w_p)`, without
    /// forming the propagated vectors.
    pub fn functional(
        &self,
        v: &[C64],
        times: &[f64],
        weights: &[(usize, C64)],
    ) -> Result<Vec<C64>> {
        if let Some(&(p, _)) = weights.iter().find(|(p, _)| *p >= v.len()) {
            return Err(Error::Integration {
                tau: 0.0,
                reason: format!("weight index {p} out of range"),
            });
        }
        self.run(
            v,
            times,
            &mut Functional {
                weights,
                projected: Vec::new(),
            },
        )
    }

    fn run<S: Sink>(&self, v: &[C64], times: &[f64], sink: &mut S) -> Result<Vec<S::Item>> {
        if v.len() != self.a.nrows() {
            return Err(Error::Integration {
                tau: 0.0,
                reason: format!(
                    "vector length {} for operator of size {}",
                    v.len(),
                    self.a.nrows()
                ),
            });
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::InvalidGrid(
                "times must be finite, non-negative and sorted".into(),
            ));
        }
        let mut out = Vec::with_capacity(times.len());
        let Some(&t_end) = times.last() else {
            return Ok(out);
        };

        let mut t = 0.0;
        let mut w = v.to_vec();
        let mut next = 0;
        while next < times.len() && times[next] <= 0.0 {
            out.push(sink.raw(&w));
            next += 1;
        }

        let m = self.basis as f64;
        let local_tol = 0.1 * self.tol;
        let mut step = if self.a_norm > 0.0 {
            1.0 / self.a_norm
        } else {
            t_end
        };
        let mut steps = 0;
        while next < times.len() {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integration {
                    tau: t,
                    reason: "step limit exceeded".into(),
                });
            }
            let beta = norm(&w);
            if beta == 0.0 {
                out.extend(times[next..].iter().map(|_| sink.raw(&w)));
                break;
            }
            let proj = self.project(&w, beta);
            let (f, err) = loop {
                let remaining = t_end - t;
                if proj.tail.is_none() {
                    step = remaining;
                }
                step = step.min(remaining);
                let f = Self::small_exp(&proj, step);
                let err = self.local_error(&proj, &f);
                if err <= local_tol * beta {
                    break (f, err);
                }
                step *= (SAFETY * (local_tol * beta / err).powf(1.0 / m)).min(0.5);
                if step <= 1e-14 * t.max(1.0) {
                    return Err(Error::Integration {
                        tau: t,
                        reason: "step size underflow".into(),
                    });
                }
            };
            let last = step >= t_end - t;
            let t_next = if last { t_end } else { t + step };
            sink.prepare(&proj);
            // Dense output; equally spaced points reuse one small exponential.
            let mut prev: Option<(f64, Mat<C64>)> = None;
            let mut increment: Option<(f64, Mat<C64>)> = None;
            while next < times.len() && (last || times[next] <= t_next) {
                let s = times[next] - t;
                let coeffs = if s == step {
                    f.clone()
                } else if let Some((s_prev, c_prev)) = &prev {
                    let ds = s - s_prev;
                    match &increment {
                        Some((d, e)) if (d - ds).abs() <= 1e-9 * ds => e * c_prev,
                        _ => {
                            let e = Self::small_exp(&proj, ds);
                            let c = &e * c_prev;
                            increment = Some((ds, e));
                            c
                        }
                    }
                } else {
                    Self::small_exp(&proj, s)
                };
                let first = Mat::<C64>::from_fn(coeffs.nrows(), 1, |i, _| coeffs[(i, 0)]);
                out.push(sink.emit(&proj, &first));
                prev = Some((s, first));
                next += 1;
            }
            w = Self::combine(&proj, &f);
            t = t_next;
            let growth = if err > 0.0 {
                SAFETY * (local_tol * beta / err).powf(1.0 / m)
            } else {
                5.0
            };
            step *= growth.clamp(0.2, 5.0);
        }
        Ok(out)
    }
}

/// Largest basis tried by [`ShiftInvert`].
pub const MAX_SHIFT_INVERT_BASIS: usize = 150;

/// `exp(tA) v` from the Krylov space of `(I − hA)⁻¹`. One factorization and
/// one basis serve every delay, so the cost does not grow with `t‖A‖`;
/// accurate for `t` within a few decades of the shift `h`.
pub struct ShiftInvert {
    lu: Lu<usize, C64>,
    n: usize,
    shift: f64,
    tol: f64,
}

impl ShiftInvert {
    pub fn new(a: &SparseMatrix, shift: f64, tol: f64) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        if !(shift > 0.0) || !shift.is_finite() {
            return Err(Error::Integration {
                tau: 0.0,
                reason: format!("shift {shift} must be positive"),
            });
        }
        let m = SparseMatrix::identity(n).sub(&a.scale(C64::new(shift, 0.0)));
        let lu = m.to_faer().sp_lu().map_err(|e| Error::Integration {
            tau: 0.0,
            reason: format!("factorizing I - hA: {e:?}"),
        })?;
        Ok(Self { lu, n, shift, tol })
    }

    fn solve(&self, x: &[C64]) -> Vec<C64> {
        let rhs = Mat::<C64>::from_fn(self.n, 1, |i, _| x[i]);
        let y = self.lu.solve(&rhs);
        (0..self.n).map(|i| y[(i, 0)]).collect()
    }

    /// Coefficients `β exp(t A_m) e₁` in basis `V_m` for `A_m = (I − H_m⁻¹)/h`.
    fn coefficients(&self, h: &Mat<C64>, m: usize, beta: f64, times: &[f64]) -> Vec<Vec<C64>> {
        let hm = Mat::<C64>::from_fn(m, m, |i, j| h[(i, j)]);
        let hinv = hm.partial_piv_lu().solve(&Mat::<C64>::identity(m, m));
        let am = Mat::<C64>::from_fn(m, m, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            (C64::new(id, 0.0) - hinv[(i, j)]) / self.shift
        });
        times
            .iter()
            .map(|&t| {
                let e = expm(&Mat::<C64>::from_fn(m, m, |i, j| am[(i, j)] * t));
                (0..m).map(|i| e[(i, 0)] * beta).collect()
            })
            .collect()
    }

    /// Basis and per-time coefficients, grown until they settle to `tol`.
    fn expand(&self, v: &[C64], times: &[f64]) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>)> {
        if v.len() != self.n {
            return Err(Error::Integration {
                tau: 0.0,
                reason: format!("vector length {} for operator of size {}", v.len(), self.n),
            });
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidGrid(
                "times must be finite and non-negative".into(),
            ));
        }
        let beta = norm(v);
        if beta == 0.0 {
            return Ok((
                vec![v.to_vec()],
                times.iter().map(|_| vec![C64::new(0.0, 0.0)]).collect(),
            ));
        }
        let max = MAX_SHIFT_INVERT_BASIS.min(self.n);
        let mut basis: Vec<Vec<C64>> = vec![v.iter().map(|z| z / beta).collect()];
        let mut h = Mat::<C64>::zeros(max + 1, max);
        let mut previous: Option<Vec<Vec<C64>>> = None;
        // convergence is judged at the ends and middle of the delay range
        let mut probes: Vec<f64> = Vec::new();
        if let (Some(lo), Some(hi)) = (
            times.iter().copied().reduce(f64::min),
            times.iter().copied().reduce(f64::max),
        ) {
            probes.extend([lo, (lo * hi).sqrt(), hi]);
        }
        for j in 0..max {
            let mut p = self.solve(&basis[j]);
            let scale = norm(&p);
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &p);
                    h[(i, j)] += c;
                    p.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let s = norm(&p);
            let exhausted = s <= 1e-14 * scale;
            let m = j + 1;
            if exhausted || m % 5 == 0 || m == max {
                let coeffs = self.coefficients(&h, m, beta, &probes);
                let change = previous.as_ref().map_or(f64::INFINITY, |prev| {
                    coeffs
                        .iter()
                        .zip(prev)
                        .map(|(c, q)| {
                            let d: f64 = c
                                .iter()
                                .enumerate()
                                .map(|(i, z)| {
                                    (z - q.get(i).copied().unwrap_or_default()).norm_sqr()
                                })
                                .sum();
                            d.sqrt()
                        })
                        .fold(0.0, f64::max)
                });
                if exhausted || change <= self.tol * beta {
                    let coeffs = self.coefficients(&h, m, beta, times);
                    return Ok((basis, coeffs));
                }
                previous = Some(coeffs);
            }
            if m == max {
                break;
            }
            h[(j + 1, j)] = C64::new(s, 0.0);
            basis.push(p.iter().map(|z| z / s).collect());
        }
        Err(Error::Integration {
            tau: times.iter().copied().fold(0.0, f64::max),
            reason: format!("shift-invert basis of {max} vectors did not converge"),
        })
    }

    pub fn propagate(&self, v: &[C64], times: &[f64]) -> Result<Vec<Vec<C64>>> {
        let (basis, coeffs) = self.expand(v, times)?;
        Ok(coeffs
            .iter()
            .map(|c| {
                let mut out = vec![C64::new(0.0, 0.0); self.n];
                for (z, b) in c.iter().zip(&basis) {
                    out.iter_mut().zip(b).for_each(|(x, y)| *x += z * y);
                }
                out
            })
            .collect())
    }

    pub fn functional(
        &self,
        v: &[C64],
        times: &[f64],
        weights: &[(usize, C64)],
    ) -> Result<Vec<C64>> {
        if let Some(&(p, _)) = weights.iter().find(|(p, _)| *p >= self.n) {
            return Err(Error::Integration {
                tau: 0.0,
                reason: format!("weight index {p} out of range"),
            });
        }
        let (basis, coeffs) = self.expand(v, times)?;
        let projected: Vec<C64> = basis
            .iter()
            .map(|b| weights.iter().map(|&(p, z)| z * b[p]).sum())
            .collect();
        Ok(coeffs
            .iter()
            .map(|c| c.iter().zip(&projected).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// What to produce at each output time.
trait Sink {
    type Item;
    fn raw(&self, w: &[C64]) -> Self::Item;
    fn prepare(&mut self, proj: &Projection);
    fn emit(&self, proj: &Projection, coeffs: &Mat<C64>) -> Self::Item;
}

struct Vectors;

impl Sink for Vectors {
    type Item = Vec<C64>;

    fn raw(&self, w: &[C64]) -> Vec<C64> {
        w.to_vec()
    }

    fn prepare(&mut self, _: &Projection) {}

    fn emit(&self, proj: &Projection, coeffs: &Mat<C64>) -> Vec<C64> {
        Krylov::combine(proj, coeffs)
    }
}

struct Functional<'w> {
    weights: &'w [(usize, C64)],
    /// The functional applied to each basis vector of the current step.
    projected: Vec<C64>,
}

impl Sink for Functional<'_> {
    type Item = C64;

    fn raw(&self, w: &[C64]) -> C64 {
        self.weights.iter().map(|&(p, z)| z * w[p]).sum()
    }

    fn prepare(&mut self, proj: &Projection) {
        self.projected = proj
            .basis
            .iter()
            .take(proj.used)
            .map(|v| self.raw(v))
            .collect();
    }

    fn emit(&self, proj: &Projection, coeffs: &Mat<C64>) -> C64 {
        self.projected
            .iter()
            .enumerate()
            .map(|(k, u)| u * coeffs[(k, 0)])
            .sum::<C64>()
            * proj.beta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseMatrix;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn diagonal_decay_and_rotation() {
        let n = 50;
        let a = SparseMatrix::from_triplets(
            n,
            n,
            (0..n).map(|i| (i, i, c(-(i as f64) * 0.1, (i as f64) * 0.7))),
        );
        let v: Vec<C64> = (0..n).map(|i| c(1.0 / (1.0 + i as f64), 0.0)).collect();
        let times = [0.0, 0.3, 1.0, 2.5, 10.0];
        let k = Krylov::new(&a);
        let out = k.propagate(&v, &times).unwrap();
        for (t, x) in times.iter().zip(&out) {
            for i in 0..n {
                let expect = (a.get(i, i) * *t).exp() * v[i];
                assert!((x[i] - expect).norm() < 1e-8, "t={t} i={i}");
            }
        }
    }

    #[test]
    fn matches_dense_exponential() {
        // small non-normal generator
        let n = 12;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, c(-1.0 - 0.2 * i as f64, 0.5 * i as f64)));
            if i + 1 < n {
                trip.push((i, i + 1, c(2.0, 0.3)));
                trip.push((i + 1, i, c(-0.4, 1.0)));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, trip);
        let v: Vec<C64> = (0..n)
            .map(|i| c((i as f64).sin(), (i as f64).cos()))
            .collect();
        let k = Krylov::with_settings(&a, 6, 1e-10);
        let t = 3.7;
        let got = k.propagate(&v, &[t]).unwrap().pop().unwrap();
        let dense = Mat::<C64>::from_fn(n, n, |i, j| a.get(i, j) * t);
        let e = expm(&dense);
        for i in 0..n {
            let expect: C64 = (0..n).map(|j| e[(i, j)] * v[j]).sum();
            assert!((got[i] - expect).norm() < 1e-8);
        }
    }

    #[test]
    fn null_vector_is_stationary() {
        let a = SparseMatrix::from_triplets(2, 2, [(1, 1, c(-1.0, 0.0))]);
        let v = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let out = Krylov::new(&a).propagate(&v, &[0.0, 1.0, 100.0]).unwrap();
        for x in out {
            assert!((x[0] - c(1.0, 0.0)).norm() < 1e-14 && x[1].norm() < 1e-14);
        }
    }

    #[test]
    fn functional_matches_full_vectors() {
        let n = 30;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, c(-0.3, 0.2 * i as f64)));
            if i + 1 < n {
                trip.push((i, i + 1, c(1.0, 0.0)));
                trip.push((i + 1, i, c(-1.0, 0.0)));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, trip);
        let v: Vec<C64> = (0..n).map(|i| c(1.0, i as f64)).collect();
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let weights = [(0, c(1.0, 0.0)), (7, c(0.0, 2.0)), (29, c(-0.5, 0.5))];
        let k = Krylov::with_settings(&a, 8, 1e-10);
        let full = k.propagate(&v, &times).unwrap();
        let fun = k.functional(&v, &times, &weights).unwrap();
        for (x, f) in full.iter().zip(&fun) {
            let expect: C64 = weights.iter().map(|&(p, z)| z * x[p]).sum();
            assert!((expect - f).norm() < 1e-10 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn shift_invert_matches_dense_exponential_at_long_times() {
        let n = 40;
        let mut trip = Vec::new();
        for i in 0..n {
            // stiff: decay rates spread over four decades
            trip.push((
                i,
                i,
                c(
                    -10f64.powf(-2.0 + 4.0 * i as f64 / n as f64),
                    3.0 * i as f64,
                ),
            ));
            if i + 1 < n {
                trip.push((i, i + 1, c(1.5, 0.0)));
                trip.push((i + 1, i, c(-1.5, 0.2)));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, trip);
        let v: Vec<C64> = (0..n).map(|i| c(1.0, 0.1 * i as f64)).collect();
        let times = [20.0, 50.0, 100.0, 200.0];
        let si = ShiftInvert::new(&a, 10.0, 1e-10).unwrap();
        let got = si.propagate(&v, &times).unwrap();
        let weights = [(0, c(1.0, 0.0)), (5, c(0.0, -1.0))];
        let fun = si.functional(&v, &times, &weights).unwrap();
        for ((t, x), f) in times.iter().zip(&got).zip(&fun) {
            let e = expm(&Mat::<C64>::from_fn(n, n, |i, j| a.get(i, j) * *t));
            let exact: Vec<C64> = (0..n)
                .map(|i| (0..n).map(|j| e[(i, j)] * v[j]).sum())
                .collect();
            let err = norm(&x.iter().zip(&exact).map(|(p, q)| p - q).collect::<Vec<_>>());
            assert!(err < 1e-7 * norm(&v), "t={t} err={err}");
            let expect: C64 = weights.iter().map(|&(p, z)| z * exact[p]).sum();
            assert!((expect - f).norm() < 1e-7 * norm(&v));
        }
    }

    #[test]
    fn rejects_unsorted_times() {
        let a = SparseMatrix::identity(2);
        let v = vec![c(1.0, 0.0); 2];
        assert!(matches!(
            Krylov::new(&a).propagate(&v, &[1.0, 0.5]),
            Err(Error::InvalidGrid(_))
        ));
    }
}
