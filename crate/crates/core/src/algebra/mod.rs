//! Nilpotent Lie algebra arithmetic.
//!
//! Elements are plain coordinate vectors in the algebra's basis. The same
//! vectors double as group elements of the simply connected nilpotent group
//! in exponential coordinates, with the group law given by the truncated
//! Baker-Campbell-Hausdorff product.

mod dynkin;

pub use dynkin::dynkin_bch;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub type Element = DVector<f64>;

/// Tolerance on antisymmetry and Jacobi residuals of structure constants.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// Bracket tensor: `c[i][j][k]` is the coefficient of `e_k` in `[e_i, e_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureConstants {
    dim: usize,
    c: Vec<f64>,
    nonzero: Vec<(usize, usize, usize, f64)>,
    class_bound: usize,
}

impl StructureConstants {
    /// Builds the tensor from a dense array indexed `(i * dim + j) * dim + k`.
    pub fn from_dense(dim: usize, c: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("algebra dimension must be positive".into()));
        }
        if c.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim * dim,
                found: c.len(),
            });
        }
        let mut nonzero = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    let v = c[(i * dim + j) * dim + k];
                    if v != 0.0 {
                        nonzero.push((i, j, k, v));
                    }
                }
            }
        }
        let sc = StructureConstants {
            dim,
            c,
            nonzero,
            class_bound: 4,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Builds the tensor from zero-based `(i, j, k, value)` quadruples meaning
    /// `[e_i, e_j] = value * e_k + ...`. The antisymmetric partner
    /// `[e_j, e_i]` is filled in unless it is given explicitly.
    pub fn from_quadruples(dim: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("algebra dimension must be positive".into()));
        }
        let idx = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
        let mut c = vec![0.0; dim * dim * dim];
        let mut given = vec![false; dim * dim * dim];
        for &(i, j, k, v) in entries {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::InvalidArgument(format!(
                    "structure constant index ({i}, {j}, {k}) out of range for dimension {dim}"
                )));
            }
            c[idx(i, j, k)] = v;
            given[idx(i, j, k)] = true;
        }
        for &(i, j, k, v) in entries {
            if !given[idx(j, i, k)] {
                c[idx(j, i, k)] = -v;
            }
        }
        Self::from_dense(dim, c)
    }

    pub fn abelian(dim: usize) -> Result<Self> {
        Self::from_dense(dim, vec![0.0; dim * dim * dim])
    }

    /// `[e1, e2] = e3`.
    pub fn heisenberg3() -> Self {
        Self::from_quadruples(3, &[(0, 1, 2, 1.0)]).expect("heisenberg constants are valid")
    }

    /// Standard filiform algebra of dimension `dim >= 3`: `[e1, e_i] = e_{i+1}`.
    pub fn filiform(dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidArgument("filiform algebras need dimension >= 3".into()));
        }
        let entries: Vec<_> = (1..dim - 1).map(|i| (0, i, i + 1, 1.0)).collect();
        Self::from_quadruples(dim, &entries)
    }

    /// Named presets: `heisenberg3`, `abelian:n`, `filiform4`, `filiform:n`.
    pub fn preset(name: &str) -> Result<Self> {
        let name = name.trim();
        match name {
            "heisenberg3" | "heisenberg" => Ok(Self::heisenberg3()),
            "filiform4" => Self::filiform(4),
            "filiform5" => Self::filiform(5),
            _ => {
                if let Some(n) = name.strip_prefix("abelian:") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::Config(format!("bad abelian dimension in {name:?}")))?;
                    Self::abelian(n)
                } else if let Some(n) = name.strip_prefix("filiform:") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::Config(format!("bad filiform dimension in {name:?}")))?;
                    Self::filiform(n)
                } else {
                    Err(Error::Config(format!("unknown algebra preset {name:?}")))
                }
            }
        }
    }

    pub fn with_class_bound(mut self, bound: usize) -> Self {
        self.class_bound = bound.max(1);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_bound(&self) -> usize {
        self.class_bound
    }

    pub fn is_abelian(&self) -> bool {
        self.nonzero.is_empty()
    }

    pub fn coefficient(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.dim + j) * self.dim + k]
    }

    /// Nonzero entries `(i, j, k, value)` of the tensor.
    pub fn nonzero(&self) -> &[(usize, usize, usize, f64)] {
        &self.nonzero
    }

    pub fn antisymmetry_residual(&self) -> f64 {
        let n = self.dim;
        let mut r = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    r = r.max((self.coefficient(i, j, k) + self.coefficient(j, i, k)).abs());
                }
            }
        }
        r
    }

    /// Max over basis triples of the Jacobi sum's largest coordinate.
    pub fn jacobi_residual(&self) -> f64 {
        let n = self.dim;
        let mut r = 0.0_f64;
        let e = |i: usize| Element::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let (ea, eb, ec) = (e(a), e(b), e(c));
                    let s = self.br(&ea, &self.br(&eb, &ec))
                        + self.br(&eb, &self.br(&ec, &ea))
                        + self.br(&ec, &self.br(&ea, &eb));
                    r = r.max(s.amax());
                }
            }
        }
        r
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.antisymmetry_residual();
        if a >= STRUCTURE_TOL {
            return Err(Error::validation("antisymmetry", a, STRUCTURE_TOL));
        }
        let j = self.jacobi_residual();
        if j >= STRUCTURE_TOL {
            return Err(Error::validation("jacobi", j, STRUCTURE_TOL));
        }
        Ok(())
    }

    /// `out = [x, y]` on raw slices.
    #[inline]
    pub fn bracket_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(i, j, k, v) in &self.nonzero {
            out[k] += v * x[i] * y[j];
        }
    }

    pub(crate) fn br(&self, x: &Element, y: &Element) -> Element {
        let mut out = Element::zeros(self.dim);
        self.bracket_into(x.as_slice(), y.as_slice(), out.as_mut_slice());
        out
    }

    pub fn bracket(&self, x: &Element, y: &Element) -> Result<Element> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.br(x, y))
    }

    /// Matrix of `ad(x) = [x, .]`.
    pub fn ad(&self, x: &Element) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, k, v) in &self.nonzero {
            m[(k, j)] += v * x[i];
        }
        m
    }

    /// Upper bound on `|[a, b]| / (|a| |b|)` (Frobenius norm of the tensor).
    pub fn bracket_norm_bound(&self) -> f64 {
        self.nonzero.iter().map(|e| e.3 * e.3).sum::<f64>().sqrt()
    }

    pub(crate) fn check_dim(&self, x: &Element) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// Lower central series with orthogonal complements `V_i`.
#[derive(Debug, Clone)]
pub struct CentralSeries {
    dim: usize,
    terms: Vec<DMatrix<f64>>,
    complements: Vec<DMatrix<f64>>,
}

impl CentralSeries {
    /// Nilpotency class `k` (number of nonzero terms).
    pub fn class(&self) -> usize {
        self.complements.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Orthonormal basis (columns) of `u^i`, 1-based.
    pub fn term(&self, i: usize) -> &DMatrix<f64> {
        &self.terms[i - 1]
    }

    /// Orthonormal basis (columns) of `V_i`, 1-based.
    pub fn complement(&self, i: usize) -> &DMatrix<f64> {
        &self.complements[i - 1]
    }

    pub fn level_dims(&self) -> Vec<usize> {
        self.complements.iter().map(|b| b.ncols()).collect()
    }

    /// Orthogonal projector onto `V_i`, 1-based.
    pub fn projection(&self, i: usize) -> DMatrix<f64> {
        let b = self.complement(i);
        b * b.transpose()
    }

    /// Components `(x^1, ..., x^k)` in the orthonormal `V_i` coordinates.
    pub fn split(&self, x: &Element) -> Vec<Element> {
        self.complements.iter().map(|b| b.tr_mul(x)).collect()
    }

    /// Inverse of [`split`](Self::split).
    pub fn assemble(&self, parts: &[Element]) -> Element {
        let mut x = Element::zeros(self.dim);
        for (b, p) in self.complements.iter().zip(parts) {
            x += b * p;
        }
        x
    }

    /// Component `x^i` (1-based).
    pub fn component(&self, x: &Element, i: usize) -> Element {
        self.complement(i).tr_mul(x)
    }

    /// Copy of `x` with every component of level `>= level` set to zero.
    pub fn truncate_from(&self, x: &Element, level: usize) -> Element {
        let mut y = Element::zeros(self.dim);
        for i in 1..level.min(self.class() + 1) {
            let b = self.complement(i);
            y += b * b.tr_mul(x);
        }
        y
    }

    /// Level (1-based) of each standard coordinate when the `V_i` are
    /// coordinate-aligned; `None` otherwise.
    pub fn coordinate_levels(&self) -> Option<Vec<usize>> {
        let mut levels = vec![0; self.dim];
        for (li, b) in self.complements.iter().enumerate() {
            for c in 0..b.ncols() {
                let col = b.column(c);
                let nz: Vec<usize> = (0..self.dim).filter(|&r| col[r] != 0.0).collect();
                if nz.len() != 1 {
                    return None;
                }
                levels[nz[0]] = li + 1;
            }
        }
        Some(levels)
    }
}

/// Computes `u^1 ⊃ u^2 ⊃ ... ⊃ {0}` and orthogonal complements.
pub fn lower_central_series(sc: &StructureConstants) -> Result<CentralSeries> {
    let n = sc.dim();
    let mut terms = vec![DMatrix::<f64>::identity(n, n)];
    loop {
        let cur = terms.last().expect("series starts with the whole algebra");
        if cur.ncols() == 0 {
            terms.pop();
            break;
        }
        if terms.len() > sc.class_bound() {
            return Err(Error::NotNilpotent {
                bound: sc.class_bound(),
            });
        }
        let mut cols = Vec::with_capacity(cur.ncols() * n);
        for a in 0..cur.ncols() {
            let v = cur.column(a).into_owned();
            for j in 0..n {
                let e = Element::from_fn(n, |k, _| if k == j { 1.0 } else { 0.0 });
                cols.push(sc.br(&v, &e));
            }
        }
        let span = DMatrix::from_columns(&cols);
        let (p, r) = linalg::range_projector(&span, 1e-14);
        terms.push(linalg::basis_from_projector(&p, r));
    }
    let mut complements = Vec::with_capacity(terms.len());
    for i in 0..terms.len() {
        let pi = &terms[i] * terms[i].transpose();
        let pnext = match terms.get(i + 1) {
            Some(t) => t * t.transpose(),
            None => DMatrix::zeros(n, n),
        };
        let q = pi - pnext;
        let r = terms[i].ncols() - terms.get(i + 1).map_or(0, |t| t.ncols());
        complements.push(linalg::basis_from_projector(&q, r));
    }
    Ok(CentralSeries {
        dim: n,
        terms,
        complements,
    })
}

/// A validated nilpotent algebra together with its central series.
#[derive(Debug, Clone)]
pub struct NilpotentAlgebra {
    sc: StructureConstants,
    series: CentralSeries,
}

impl NilpotentAlgebra {
    pub fn new(sc: StructureConstants) -> Result<Self> {
        sc.validate()?;
        let series = lower_central_series(&sc)?;
        Ok(NilpotentAlgebra { sc, series })
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::new(StructureConstants::preset(name)?)
    }

    pub fn constants(&self) -> &StructureConstants {
        &self.sc
    }

    pub fn series(&self) -> &CentralSeries {
        &self.series
    }

    pub fn dim(&self) -> usize {
        self.sc.dim()
    }

    pub fn class(&self) -> usize {
        self.series.class()
    }

    pub fn bracket(&self, x: &Element, y: &Element) -> Result<Element> {
        self.sc.bracket(x, y)
    }

    pub fn ad(&self, x: &Element) -> DMatrix<f64> {
        self.sc.ad(x)
    }

    pub fn zero(&self) -> Element {
        Element::zeros(self.dim())
    }

    /// `e_i` (zero-based).
    pub fn basis_vector(&self, i: usize) -> Element {
        Element::from_fn(self.dim(), |k, _| if k == i { 1.0 } else { 0.0 })
    }

    /// Group product `x * y = c(x, y)` in exponential coordinates.
    pub fn bch_product(&self, x: &Element, y: &Element) -> Result<Element> {
        self.sc.check_dim(x)?;
        self.sc.check_dim(y)?;
        if self.class() > 4 {
            return Err(Error::ClassUnsupported(self.class()));
        }
        let mut out = Element::zeros(self.dim());
        let mut scratch = BchScratch::new(self.dim());
        self.bch_into(x.as_slice(), y.as_slice(), out.as_mut_slice(), &mut scratch);
        Ok(out)
    }

    /// Allocation-free BCH product on raw slices; class must be <= 4.
    ///
    /// `c(x, y) = x + y + [x,y]/2 + ([x,[x,y]] + [y,[y,x]])/12 - [y,[x,[x,y]]]/24`
    #[inline]
    pub fn bch_into(&self, x: &[f64], y: &[f64], out: &mut [f64], s: &mut BchScratch) {
        let k = self.class();
        for i in 0..out.len() {
            out[i] = x[i] + y[i];
        }
        if k < 2 {
            return;
        }
        let sc = &self.sc;
        sc.bracket_into(x, y, &mut s.xy);
        for i in 0..out.len() {
            out[i] += 0.5 * s.xy[i];
        }
        if k < 3 {
            return;
        }
        sc.bracket_into(x, &s.xy, &mut s.xxy);
        sc.bracket_into(y, &s.xy, &mut s.yxy);
        for i in 0..out.len() {
            out[i] += (s.xxy[i] - s.yxy[i]) / 12.0;
        }
        if k < 4 {
            return;
        }
        sc.bracket_into(y, &s.xxy, &mut s.yxxy);
        for i in 0..out.len() {
            out[i] -= s.yxxy[i] / 24.0;
        }
    }

    /// Group inverse in exponential coordinates.
    pub fn inverse(&self, x: &Element) -> Element {
        -x
    }

    pub fn component_split(&self, x: &Element) -> Vec<Element> {
        self.series.split(x)
    }

    /// The correction term `H^i(x^{<i}, y^{<i}) = (x*y)^i - x^i - y^i`,
    /// evaluated with the components of level `>= i` of both arguments
    /// removed (1-based level).
    pub fn product_correction(&self, x: &Element, y: &Element, level: usize) -> Result<Element> {
        let xs = self.series.truncate_from(x, level);
        let ys = self.series.truncate_from(y, level);
        let p = self.bch_product(&xs, &ys)?;
        Ok(self.series.component(&p, level))
    }

    /// `|(x*y)^i - x^i - y^i - H^i|` for 1-based level `i`.
    pub fn triangular_product_residual(&self, x: &Element, y: &Element, level: usize) -> Result<f64> {
        if level == 0 || level > self.class() {
            return Err(Error::InvalidArgument(format!(
                "level {level} outside 1..={}",
                self.class()
            )));
        }
        let p = self.bch_product(x, y)?;
        let s = &self.series;
        let h = self.product_correction(x, y, level)?;
        let r = s.component(&p, level) - s.component(x, level) - s.component(y, level) - h;
        Ok(r.norm())
    }
}

/// Scratch buffers for [`NilpotentAlgebra::bch_into`].
#[derive(Debug, Clone)]
pub struct BchScratch {
    xy: Vec<f64>,
    xxy: Vec<f64>,
    yxy: Vec<f64>,
    yxxy: Vec<f64>,
}

impl BchScratch {
    pub fn new(dim: usize) -> Self {
        BchScratch {
            xy: vec![0.0; dim],
            xxy: vec![0.0; dim],
            yxy: vec![0.0; dim],
            yxxy: vec![0.0; dim],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Element {
        Element::from_row_slice(xs)
    }

    fn random_element(rng: &mut ChaCha8Rng, n: usize) -> Element {
        Element::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn heisenberg_bracket() {
        let sc = StructureConstants::heisenberg3();
        assert_eq!(sc.bracket(&v(&[1., 0., 0.]), &v(&[0., 1., 0.])).unwrap(), v(&[0., 0., 1.]));
        let x = v(&[0.3, -1.2, 0.7]);
        assert_eq!(sc.bracket(&x, &x).unwrap(), v(&[0., 0., 0.]));
        // (e1+e2, e1-e2): [e1,-e2] + [e2,e1] = -e3 - e3
        let r = sc.bracket(&v(&[1., 1., 0.]), &v(&[1., -1., 0.])).unwrap();
        assert_eq!(r, v(&[0., 0., -2.]));
    }

    #[test]
    fn bracket_dimension_mismatch() {
        let sc = StructureConstants::heisenberg3();
        let err = sc.bracket(&v(&[1., 0.]), &v(&[0., 1., 0.])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 2 }));
    }

    #[test]
    fn broken_jacobi_is_rejected() {
        // [e1,e2]=e3, [e1,e3]=e1 violates Jacobi
        let err = StructureConstants::from_quadruples(3, &[(0, 1, 2, 1.0), (0, 2, 0, 1.0)])
            .unwrap_err();
        match err {
            Error::Validation { check, .. } => assert_eq!(check, "jacobi"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn inconsistent_antisymmetry_is_rejected() {
        let err =
            StructureConstants::from_quadruples(3, &[(0, 1, 2, 1.0), (1, 0, 2, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn series_of_presets() {
        let h = lower_central_series(&StructureConstants::heisenberg3()).unwrap();
        assert_eq!(h.class(), 2);
        assert_eq!(h.level_dims(), vec![2, 1]);
        assert_eq!(h.coordinate_levels(), Some(vec![1, 1, 2]));

        let a = lower_central_series(&StructureConstants::abelian(4).unwrap()).unwrap();
        assert_eq!(a.class(), 1);
        assert_eq!(a.level_dims(), vec![4]);

        let f = lower_central_series(&StructureConstants::filiform(4).unwrap()).unwrap();
        assert_eq!(f.class(), 3);
        assert_eq!(f.level_dims(), vec![2, 1, 1]);
    }

    #[test]
    fn class_bound_enforced() {
        let sc = StructureConstants::filiform(5).unwrap().with_class_bound(3);
        assert!(matches!(lower_central_series(&sc), Err(Error::NotNilpotent { bound: 3 })));
        let sc6 = StructureConstants::filiform(6).unwrap().with_class_bound(6);
        let alg = NilpotentAlgebra::new(sc6).unwrap();
        assert!(matches!(
            alg.bch_product(&alg.zero(), &alg.zero()),
            Err(Error::ClassUnsupported(5))
        ));
    }

    #[test]
    fn non_nilpotent_rejected() {
        // [e1, e2] = e2 is solvable, not nilpotent
        let sc = StructureConstants::from_quadruples(2, &[(0, 1, 1, 1.0)]).unwrap();
        assert!(matches!(lower_central_series(&sc), Err(Error::NotNilpotent { .. })));
    }

    #[test]
    fn split_matches_coordinates() {
        let h = NilpotentAlgebra::preset("heisenberg3").unwrap();
        let parts = h.component_split(&v(&[1.5, -2.0, 0.25]));
        assert_eq!(parts[0], v(&[1.5, -2.0]));
        assert_eq!(parts[1], v(&[0.25]));
        let f = NilpotentAlgebra::preset("filiform4").unwrap();
        let parts = f.component_split(&v(&[1., 2., 3., 4.]));
        assert_eq!(parts, vec![v(&[1., 2.]), v(&[3.]), v(&[4.])]);
        assert_eq!(f.series().assemble(&parts), v(&[1., 2., 3., 4.]));
        let zero = f.component_split(&f.zero());
        assert!(zero.iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn heisenberg_bch_value() {
        let h = NilpotentAlgebra::preset("heisenberg3").unwrap();
        let p = h.bch_product(&v(&[1., 0., 0.]), &v(&[0., 1., 0.])).unwrap();
        assert_eq!(p, v(&[1., 1., 0.5]));
    }

    #[test]
    fn bch_identity_and_inverse() {
        let f = NilpotentAlgebra::preset("filiform4").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_element(&mut rng, 4);
            assert_eq!(f.bch_product(&x, &f.zero()).unwrap(), x);
            assert_eq!(f.bch_product(&f.zero(), &x).unwrap(), x);
            assert!(f.bch_product(&x, &f.inverse(&x)).unwrap().norm() < 1e-15);
        }
    }

    #[test]
    fn bch_associative_on_filiform() {
        let f = NilpotentAlgebra::preset("filiform4").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (x, y, z) = (random_element(&mut rng, 4), random_element(&mut rng, 4), random_element(&mut rng, 4));
            let l = f.bch_product(&f.bch_product(&x, &y).unwrap(), &z).unwrap();
            let r = f.bch_product(&x, &f.bch_product(&y, &z).unwrap()).unwrap();
            assert!((l - r).amax() < 1e-9);
        }
    }

    #[test]
    fn triangular_residuals_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for name in ["heisenberg3", "filiform4", "filiform5"] {
            let a = NilpotentAlgebra::preset(name).unwrap();
            for _ in 0..30 {
                let x = random_element(&mut rng, a.dim());
                let y = random_element(&mut rng, a.dim());
                for i in 1..=a.class() {
                    assert!(a.triangular_product_residual(&x, &y, i).unwrap() < 1e-12);
                }
                let first = a.series().component(&a.bch_product(&x, &y).unwrap(), 1);
                let expect = a.series().component(&x, 1) + a.series().component(&y, 1);
                assert!((first - expect).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn heisenberg_correction_is_half_wedge() {
        let h = NilpotentAlgebra::preset("heisenberg3").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x = random_element(&mut rng, 3);
            let y = random_element(&mut rng, 3);
            let c = h.product_correction(&x, &y, 2).unwrap();
            let wedge = 0.5 * (x[0] * y[1] - x[1] * y[0]);
            assert!((c[0] - wedge).abs() < 1e-14);
        }
    }

    #[test]
    fn filiform_correction_ignores_own_level() {
        let f = NilpotentAlgebra::preset("filiform4").unwrap();
        let x = v(&[0.5, -1.0, 0.3, 0.2]);
        let y = v(&[1.1, 0.4, -0.7, 1.3]);
        let h2 = f.product_correction(&x, &y, 2).unwrap();
        let xp = v(&[0.5, -1.0, 5.0, -3.0]);
        assert_eq!(h2, f.product_correction(&xp, &y, 2).unwrap());
    }
}
