//! Semidirect products `T^m x_rho N` of a torus with a simply connected
//! nilpotent group (optionally with a central torus factor), linear flows on
//! them and the quotient map used for conjugation.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{BchScratch, Element, NilpotentAlgebra};
use crate::error::{Error, Result};
use crate::linalg;
use crate::spectral::{self, Derivation, QuotientDerivation};

pub const ACTION_TOL: f64 = 1e-9;
pub const COMPAT_TOL: f64 = 1e-8;

/// Angle reduced to `[0, 2pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Angle reduced to `(-pi, pi]`.
pub fn signed_angle(a: f64) -> f64 {
    let r = wrap_angle(a);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Bi-invariant distance on the torus.
pub fn torus_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| signed_angle(q - p).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `(h, x)` with `h` torus angles and `x` exponential coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SemidirectPoint {
    pub h: DVector<f64>,
    pub x: Element,
}

impl SemidirectPoint {
    pub fn new(h: DVector<f64>, x: Element) -> Self {
        SemidirectPoint { h, x }
    }
}

/// `T^m x_rho N` with `rho(h) = exp(sum h_a R_a)`.
#[derive(Debug, Clone)]
pub struct SemidirectGroup {
    algebra: NilpotentAlgebra,
    torus_dim: usize,
    generators: Vec<DMatrix<f64>>,
    periodic: Vec<usize>,
    rho_trivial: bool,
    rho_norm_max: f64,
}

impl SemidirectGroup {
    /// `generators` are commuting derivations with `exp(2 pi R_a) = I`;
    /// `periodic` lists zero-based nilpotent coordinates taken mod `2 pi`.
    pub fn new(
        algebra: NilpotentAlgebra,
        torus_dim: usize,
        generators: Vec<DMatrix<f64>>,
        periodic: Vec<usize>,
    ) -> Result<Self> {
        let n = algebra.dim();
        if generators.len() != torus_dim {
            return Err(Error::DimensionMismatch {
                expected: torus_dim,
                found: generators.len(),
            });
        }
        for r in &generators {
            if r.nrows() != n || r.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: r.nrows(),
                });
            }
            let l = spectral::check_derivation(r, algebra.constants())?;
            if l >= spectral::LEIBNIZ_TOL {
                return Err(Error::validation("action generator leibniz", l, spectral::LEIBNIZ_TOL));
            }
            let period = linalg::max_abs(&(linalg::expm(&(r * TAU)) - DMatrix::identity(n, n)));
            if period >= ACTION_TOL {
                return Err(Error::validation("action period exp(2 pi R) = I", period, ACTION_TOL));
            }
        }
        for a in 0..torus_dim {
            for b in 0..a {
                let c = linalg::max_abs(&(&generators[a] * &generators[b] - &generators[b] * &generators[a]));
                if c >= spectral::LEIBNIZ_TOL {
                    return Err(Error::validation("action generators commute", c, spectral::LEIBNIZ_TOL));
                }
            }
        }
        let mut periodic = periodic;
        periodic.sort_unstable();
        periodic.dedup();
        for &k in &periodic {
            if k >= n {
                return Err(Error::InvalidArgument(format!("periodic coordinate {k} out of range")));
            }
            let ek = algebra.basis_vector(k);
            let central = (0..n)
                .map(|j| algebra.constants().br(&ek, &algebra.basis_vector(j)).amax())
                .fold(0.0, f64::max);
            if central > 0.0 {
                return Err(Error::InvalidDecomposition(format!(
                    "periodic coordinate {k} is not central"
                )));
            }
            if generators.iter().any(|r| r.column(k).amax() > 0.0) {
                return Err(Error::InvalidDecomposition(format!(
                    "periodic coordinate {k} is moved by the action"
                )));
            }
        }
        let rho_trivial = generators.iter().all(|r| r.amax() == 0.0);
        let mut g = SemidirectGroup {
            algebra,
            torus_dim,
            generators,
            periodic,
            rho_trivial,
            rho_norm_max: 1.0,
        };
        g.rho_norm_max = g.scan_rho_norm();
        Ok(g)
    }

    /// Plain nilpotent group, no torus.
    pub fn nilpotent(algebra: NilpotentAlgebra) -> Self {
        Self::new(algebra, 0, Vec::new(), Vec::new()).expect("trivial action is valid")
    }

    fn scan_rho_norm(&self) -> f64 {
        if self.rho_trivial {
            return 1.0;
        }
        let m = self.torus_dim;
        let per_axis: usize = match m {
            1 => 256,
            2 => 48,
            3 => 16,
            _ => 0,
        };
        let mut best = 1.0_f64;
        if per_axis > 0 {
            let total = per_axis.pow(m as u32);
            for idx in 0..total {
                let mut rem = idx;
                let h = DVector::from_fn(m, |_, _| {
                    let k = rem % per_axis;
                    rem /= per_axis;
                    k as f64 * TAU / per_axis as f64
                });
                best = best.max(linalg::op_norm(&self.rho(&h)));
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            for _ in 0..4096 {
                let h = DVector::from_fn(m, |_, _| rng.random_range(0.0..TAU));
                best = best.max(linalg::op_norm(&self.rho(&h)));
            }
        }
        best
    }

    pub fn algebra(&self) -> &NilpotentAlgebra {
        &self.algebra
    }

    pub fn torus_dim(&self) -> usize {
        self.torus_dim
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn periodic(&self) -> &[usize] {
        &self.periodic
    }

    pub fn is_periodic(&self, k: usize) -> bool {
        self.periodic.binary_search(&k).is_ok()
    }

    pub fn rho_is_trivial(&self) -> bool {
        self.rho_trivial
    }

    /// `max_h |rho(h)|` estimated on a torus grid.
    pub fn rho_norm_bound(&self) -> f64 {
        self.rho_norm_max
    }

    pub fn identity(&self) -> SemidirectPoint {
        SemidirectPoint::new(DVector::zeros(self.torus_dim), self.algebra.zero())
    }

    /// Point with angles and periodic coordinates reduced to `[0, 2pi)`.
    pub fn point(&self, h: DVector<f64>, x: Element) -> Result<SemidirectPoint> {
        if h.len() != self.torus_dim {
            return Err(Error::DimensionMismatch {
                expected: self.torus_dim,
                found: h.len(),
            });
        }
        self.algebra.constants().check_dim(&x)?;
        let mut p = SemidirectPoint::new(h, x);
        self.normalize(&mut p);
        Ok(p)
    }

    pub fn normalize(&self, p: &mut SemidirectPoint) {
        p.h.iter_mut().for_each(|a| *a = wrap_angle(*a));
        for &k in &self.periodic {
            p.x[k] = wrap_angle(p.x[k]);
        }
    }

    /// Generator `sum h_a R_a` of `rho(h)` and of `d rho`.
    pub fn drho(&self, h: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for (a, r) in self.generators.iter().enumerate() {
            g += r * h[a];
        }
        g
    }

    pub fn rho(&self, h: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        if self.rho_trivial {
            return DMatrix::identity(n, n);
        }
        linalg::expm(&self.drho(h))
    }

    pub fn multiply(&self, a: &SemidirectPoint, b: &SemidirectPoint) -> SemidirectPoint {
        let rb = if self.rho_trivial {
            b.x.clone()
        } else {
            self.rho(&a.h) * &b.x
        };
        let mut x = Element::zeros(self.dim());
        let mut s = BchScratch::new(self.dim());
        self.algebra.bch_into(a.x.as_slice(), rb.as_slice(), x.as_mut_slice(), &mut s);
        let mut p = SemidirectPoint::new(&a.h + &b.h, x);
        self.normalize(&mut p);
        p
    }

    pub fn inverse(&self, a: &SemidirectPoint) -> SemidirectPoint {
        let hinv = -&a.h;
        let x = if self.rho_trivial {
            -&a.x
        } else {
            -(self.rho(&hinv) * &a.x)
        };
        let mut p = SemidirectPoint::new(hinv, x);
        self.normalize(&mut p);
        p
    }

    /// Full-length vector of `x` with periodic coordinates in `(-pi, pi]`.
    fn signed_x(&self, x: &Element) -> Element {
        let mut y = x.clone();
        for &k in &self.periodic {
            y[k] = signed_angle(y[k]);
        }
        y
    }

    /// Left-invariant distance `|h part of a^-1 b| + |x part of a^-1 b|`.
    pub fn distance(&self, a: &SemidirectPoint, b: &SemidirectPoint) -> f64 {
        if a == b {
            return 0.0;
        }
        let d = self.multiply(&self.inverse(a), b);
        let dh = d.h.iter().map(|v| signed_angle(*v).powi(2)).sum::<f64>().sqrt();
        dh + self.signed_x(&d.x).norm()
    }

    pub fn associativity_residual(&self, a: &SemidirectPoint, b: &SemidirectPoint, c: &SemidirectPoint) -> f64 {
        let l = self.multiply(&self.multiply(a, b), c);
        let r = self.multiply(a, &self.multiply(b, c));
        self.distance(&l, &r)
    }

    /// `|rho(h)[x, y] - [rho(h)x, rho(h)y]|`.
    pub fn action_automorphism_residual(&self, h: &DVector<f64>, x: &Element, y: &Element) -> f64 {
        let r = self.rho(h);
        let sc = self.algebra.constants();
        (&r * sc.br(x, y) - sc.br(&(&r * x), &(&r * y))).amax()
    }

    pub fn action_homomorphism_residual(&self, h1: &DVector<f64>, h2: &DVector<f64>) -> f64 {
        linalg::max_abs(&(self.rho(&(h1 + h2)) - self.rho(h1) * self.rho(h2)))
    }

    pub fn random_point(&self, rng: &mut ChaCha8Rng, radius: f64) -> SemidirectPoint {
        let h = DVector::from_fn(self.torus_dim, |_, _| rng.random_range(0.0..TAU));
        let x = Element::from_fn(self.dim(), |_, _| rng.random_range(-radius..radius));
        let mut p = SemidirectPoint::new(h, x);
        self.normalize(&mut p);
        p
    }
}

/// Flow `phi_t(h, x) = (h + t s, e^{tD} x)`.
#[derive(Debug, Clone)]
pub struct LinearFlow {
    derivation: Derivation,
    speeds: DVector<f64>,
    compatibility_residual: f64,
}

impl LinearFlow {
    /// Validates `e^{tD} rho(h) = rho(h + t s) e^{tD}` on samples.
    pub fn new(group: &SemidirectGroup, derivation: Derivation, speeds: DVector<f64>) -> Result<Self> {
        if speeds.len() != group.torus_dim() {
            return Err(Error::DimensionMismatch {
                expected: group.torus_dim(),
                found: speeds.len(),
            });
        }
        if derivation.dim() != group.dim() {
            return Err(Error::DimensionMismatch {
                expected: group.dim(),
                found: derivation.dim(),
            });
        }
        for &k in group.periodic() {
            let c = derivation.matrix().column(k).amax();
            if c > 0.0 {
                return Err(Error::InvalidDecomposition(format!(
                    "periodic coordinate {k} is not in the kernel of D"
                )));
            }
        }
        let mut flow = LinearFlow {
            derivation,
            speeds,
            compatibility_residual: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
        let mut worst = 0.0_f64;
        if !group.rho_is_trivial() {
            for _ in 0..16 {
                let t = rng.random_range(-2.0..2.0);
                let h = DVector::from_fn(group.torus_dim(), |_, _| rng.random_range(0.0..TAU));
                let e = flow.exp_d(t);
                let lhs = &e * group.rho(&h);
                let rhs = group.rho(&(&h + &flow.speeds * t)) * &e;
                let scale = linalg::max_abs(&e).max(1.0);
                worst = worst.max(linalg::max_abs(&(lhs - rhs)) / scale);
            }
        }
        if worst >= COMPAT_TOL {
            return Err(Error::validation("flow/action compatibility", worst, COMPAT_TOL));
        }
        flow.compatibility_residual = worst;
        Ok(flow)
    }

    pub fn derivation(&self) -> &Derivation {
        &self.derivation
    }

    pub fn d(&self) -> &DMatrix<f64> {
        self.derivation.matrix()
    }

    pub fn speeds(&self) -> &DVector<f64> {
        &self.speeds
    }

    pub fn compatibility_residual(&self) -> f64 {
        self.compatibility_residual
    }

    pub fn exp_d(&self, t: f64) -> DMatrix<f64> {
        linalg::expm(&(self.d() * t))
    }

    pub fn apply(&self, group: &SemidirectGroup, t: f64, g: &SemidirectPoint) -> SemidirectPoint {
        self.apply_with(group, &self.exp_d(t), t, g)
    }

    /// As [`apply`](Self::apply) with a precomputed `e^{tD}`.
    pub fn apply_with(
        &self,
        group: &SemidirectGroup,
        exp_td: &DMatrix<f64>,
        t: f64,
        g: &SemidirectPoint,
    ) -> SemidirectPoint {
        let mut p = SemidirectPoint::new(&g.h + &self.speeds * t, exp_td * &g.x);
        group.normalize(&mut p);
        p
    }

    /// `d(phi_t(ab), phi_t(a) phi_t(b))`.
    pub fn automorphism_residual(
        &self,
        group: &SemidirectGroup,
        t: f64,
        a: &SemidirectPoint,
        b: &SemidirectPoint,
    ) -> f64 {
        let l = self.apply(group, t, &group.multiply(a, b));
        let r = group.multiply(&self.apply(group, t, a), &self.apply(group, t, b));
        group.distance(&l, &r)
    }

    /// Smallest grid time `T >= tau` with `d(phi_T(h), h) < eps`, scanning
    /// with step `eps / (2 |s|)`.
    pub fn recurrence_time(&self, eps: f64, tau: f64, budget: f64) -> Result<f64> {
        let speed = self.speeds.norm();
        if speed == 0.0 {
            return Ok(tau);
        }
        let step = eps / (2.0 * speed);
        let mut k = 0u64;
        loop {
            let t = tau + k as f64 * step;
            if t > budget {
                return Err(Error::BudgetExceeded(budget));
            }
            let d = self
                .speeds
                .iter()
                .map(|s| signed_angle(s * t).powi(2))
                .sum::<f64>()
                .sqrt();
            if d < eps {
                return Ok(t);
            }
            k += 1;
        }
    }
}

/// Quotient homomorphism `psi(h, x) = (h, C^T x)` onto `T^m x N / n0`.
#[derive(Debug, Clone)]
pub struct Conjugation {
    pub quotient: QuotientDerivation,
    pub downstairs: SemidirectGroup,
    pub downstairs_flow: LinearFlow,
}

impl Conjugation {
    /// `kernel` columns span `n0`, which must be a `D`- and `rho`-invariant
    /// ideal inside `ker D` containing every periodic axis.
    pub fn new(group: &SemidirectGroup, flow: &LinearFlow, kernel: &DMatrix<f64>) -> Result<Self> {
        let n = group.dim();
        if kernel.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: kernel.nrows(),
            });
        }
        let k = linalg::orthonormal_span(kernel);
        let in_ker = if k.ncols() == 0 { 0.0 } else { linalg::max_abs(&(flow.d() * &k)) };
        if in_ker >= spectral::INVARIANCE_TOL {
            return Err(Error::InvalidDecomposition(format!(
                "kernel subspace is not annihilated by D (residual {in_ker:e})"
            )));
        }
        let q = DMatrix::identity(n, n) - &k * k.transpose();
        for r in group.generators() {
            let leak = if k.ncols() == 0 { 0.0 } else { linalg::max_abs(&(&q * r * &k)) };
            if leak >= spectral::INVARIANCE_TOL {
                return Err(Error::InvalidDecomposition(format!(
                    "kernel subspace is not preserved by the action (residual {leak:e})"
                )));
            }
        }
        for &p in group.periodic() {
            let e = group.algebra().basis_vector(p);
            if (&q * e).amax() >= spectral::INVARIANCE_TOL {
                return Err(Error::InvalidDecomposition(format!(
                    "periodic coordinate {p} is not inside the kernel subspace"
                )));
            }
        }
        let quotient = spectral::quotient_derivation(flow.d(), group.algebra().constants(), kernel)?;
        let c = &quotient.complement;
        let alg = NilpotentAlgebra::new(quotient.constants.clone())?;
        let gens: Vec<DMatrix<f64>> = group
            .generators()
            .iter()
            .map(|r| c.transpose() * r * c)
            .collect();
        let downstairs = SemidirectGroup::new(alg, group.torus_dim(), gens, Vec::new())?;
        let dhat = Derivation::new(quotient.matrix.clone(), downstairs.algebra())?;
        let downstairs_flow = LinearFlow::new(&downstairs, dhat, flow.speeds().clone())?;
        Ok(Conjugation {
            quotient,
            downstairs,
            downstairs_flow,
        })
    }

    pub fn psi(&self, g: &SemidirectPoint) -> SemidirectPoint {
        let mut p = SemidirectPoint::new(g.h.clone(), self.quotient.complement.tr_mul(&g.x));
        self.downstairs.normalize(&mut p);
        p
    }

    /// `d(psi(ab), psi(a) psi(b))` downstairs.
    pub fn homomorphism_residual(&self, up: &SemidirectGroup, a: &SemidirectPoint, b: &SemidirectPoint) -> f64 {
        let l = self.psi(&up.multiply(a, b));
        let r = self.downstairs.multiply(&self.psi(a), &self.psi(b));
        self.downstairs.distance(&l, &r)
    }

    /// `d(psi(phi_t g), phi^_t psi(g))` downstairs.
    pub fn equivariance_residual(&self, up: &SemidirectGroup, flow: &LinearFlow, t: f64, g: &SemidirectPoint) -> f64 {
        let l = self.psi(&flow.apply(up, t, g));
        let r = self.downstairs_flow.apply(&self.downstairs, t, &self.psi(g));
        self.downstairs.distance(&l, &r)
    }
}
