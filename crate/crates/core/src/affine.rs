//! Affine maps of `R^n` and the box construction.
//!
//! The construction starts from a standard box `B = [-r_1, r_1] x ... x [-r_n, r_n]`,
//! a cyclic rotation `R`, a homothety `lambda * Id` and a pair of translations
//! along the first axis. The maps `G_t = Lambda T_t R` contract `B` into two
//! images that together cover `B` with room to spare. Their k-th roots `E_t`
//! are contracting similarities that get arbitrarily close to the identity as
//! `k` grows.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};

/// Residual allowed when checking `e^k = g` after a root is built.
pub const ROOT_TOLERANCE: f64 = 1e-9;
/// Minimum slack required in every box inequality.
pub const BOX_MARGIN: f64 = 1e-3;

/// An affine map `x -> linear * x + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    linear: DMatrix<f64>,
    translation: DVector<f64>,
}

impl AffineMap {
    pub fn new(linear: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        if !linear.is_square() {
            return Err(Error::Usage(format!(
                "linear part must be square, got {}x{}",
                linear.nrows(),
                linear.ncols()
            )));
        }
        check_dim(linear.nrows(), translation.len())?;
        Ok(Self {
            linear,
            translation,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            linear: DMatrix::identity(n, n),
            translation: DVector::zeros(n),
        }
    }

    pub fn linear_only(linear: DMatrix<f64>) -> Result<Self> {
        let n = linear.nrows();
        Self::new(linear, DVector::zeros(n))
    }

    pub fn translation_only(v: DVector<f64>) -> Self {
        let n = v.len();
        Self {
            linear: DMatrix::identity(n, n),
            translation: v,
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    /// Applies the map to `x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.eval(x))
    }

    /// Unchecked application, for callers that already guarantee dimensions.
    ///
    /// Shares [`AffineMap::eval_slice`] so that vector and slice callers get
    /// bit-identical results.
    pub(crate) fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_slice(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Evaluates into a raw slice without allocating.
    pub(crate) fn eval_slice(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = self.translation[i];
            for j in 0..n {
                acc += self.linear[(i, j)] * x[j];
            }
            out[i] = acc;
        }
    }

    /// `a.compose(b)` is the map `x -> a(b(x))`.
    pub fn compose(&self, inner: &AffineMap) -> Result<AffineMap> {
        check_dim(self.dim(), inner.dim())?;
        Ok(AffineMap {
            linear: &self.linear * &inner.linear,
            translation: &self.linear * &inner.translation + &self.translation,
        })
    }

    pub fn inverse(&self) -> Result<AffineMap> {
        let inv = self
            .linear
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("affine map has a singular linear part".into()))?;
        let translation = -(&inv * &self.translation);
        Ok(AffineMap {
            linear: inv,
            translation,
        })
    }

    /// `self` composed with itself `k` times (`k = 0` gives the identity).
    pub fn power(&self, k: u32) -> AffineMap {
        let mut acc = AffineMap::identity(self.dim());
        for _ in 0..k {
            acc = self.compose(&acc).expect("same dimension");
        }
        acc
    }

    /// Largest singular value of the linear part.
    pub fn operator_norm(&self) -> f64 {
        operator_norm(&self.linear)
    }

    pub fn determinant(&self) -> f64 {
        self.linear.determinant()
    }

    /// Max-abs distance between two maps, linear and translation parts together.
    pub fn distance(&self, other: &AffineMap) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let dl = (&self.linear - &other.linear).amax();
        let dt = (&self.translation - &other.translation).amax();
        Ok(dl.max(dt))
    }

    /// The unique fixed point of a contracting map.
    pub fn fixed_point(&self) -> Result<DVector<f64>> {
        let n = self.dim();
        let contracting = self.operator_norm() <= 1.0 - 1e-9 || spectral_radius(&self.linear) < 1.0;
        if !contracting {
            return Err(Error::Domain(
                "fixed point requested for a non-contracting affine map".into(),
            ));
        }
        let system = DMatrix::<f64>::identity(n, n) - &self.linear;
        let p = system
            .lu()
            .solve(&self.translation)
            .ok_or_else(|| Error::Domain("I - linear is singular".into()))?;
        let residual = (self.eval(&p) - &p).amax();
        if residual > 1e-10 {
            return Err(Error::Internal(format!(
                "fixed point residual {residual:e} exceeds 1e-10"
            )));
        }
        Ok(p)
    }

    /// Row-major copy of the linear part, for reports.
    pub fn linear_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.linear.row(i).iter().copied().collect())
            .collect()
    }
}

/// Serializable snapshot of an affine map (row-major matrix).
#[derive(Clone, Debug, Serialize)]
pub struct AffineMapRecord {
    pub linear: Vec<Vec<f64>>,
    pub translation: Vec<f64>,
}

impl From<&AffineMap> for AffineMapRecord {
    fn from(map: &AffineMap) -> Self {
        Self {
            linear: map.linear_rows(),
            translation: map.translation.iter().copied().collect(),
        }
    }
}

pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// The cyclic rotation `(x_1, ..., x_n) -> ((-1)^(n+1) x_n, x_1, ..., x_(n-1))`.
pub fn cyclic_rotation(n: usize) -> Result<AffineMap> {
    if n == 0 {
        return Err(Error::Usage("dimension must be at least 1".into()));
    }
    let mut r = DMatrix::zeros(n, n);
    r[(0, n - 1)] = if n % 2 == 1 { 1.0 } else { -1.0 };
    for i in 1..n {
        r[(i, i - 1)] = 1.0;
    }
    AffineMap::linear_only(r)
}

/// Rotation of the plane by `angle`.
pub fn planar_rotation(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Half-widths of the base box, the contraction rate and the translation size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxSpec {
    pub n: usize,
    pub lambda: f64,
    pub radii: Vec<f64>,
    pub shift: f64,
}

/// Slack in each inequality of a [`BoxSpec`]; every entry must be positive.
#[derive(Clone, Debug, Serialize)]
pub struct BoxMargins {
    /// `lambda * r_i - r_(i+1)` for `1 <= i < n`.
    pub chain: Vec<f64>,
    /// `lambda * r_n - r_1 / 2`.
    pub wrap: f64,
    /// `shift - (r_1 / lambda - r_n)`.
    pub shift_low: f64,
    /// `r_n - shift`.
    pub shift_high: f64,
}

impl BoxMargins {
    pub fn min(&self) -> f64 {
        self.chain
            .iter()
            .copied()
            .chain([self.wrap, self.shift_low, self.shift_high])
            .fold(f64::INFINITY, f64::min)
    }
}

impl BoxSpec {
    /// Validates an explicit choice of radii and shift.
    pub fn new(lambda: f64, radii: Vec<f64>, shift: f64) -> Result<Self> {
        let n = radii.len();
        if n == 0 {
            return Err(Error::Usage("box needs at least one radius".into()));
        }
        if !(lambda > 0.5 && lambda < 1.0) {
            return Err(Error::Domain(format!(
                "lambda = {lambda} is outside (1/2, 1)"
            )));
        }
        if radii.iter().any(|&r| !(r > 0.0)) || !(shift > 0.0) {
            return Err(Error::Domain("radii and shift must be positive".into()));
        }
        let spec = Self {
            n,
            lambda,
            radii,
            shift,
        };
        let m = spec.margins();
        if let Some(i) = m.chain.iter().position(|&v| v <= 0.0) {
            return Err(Error::Domain(format!(
                "lambda * r_{} > r_{} violated",
                i + 1,
                i + 2
            )));
        }
        if m.wrap <= 0.0 {
            return Err(Error::Domain("lambda * r_n > r_1 / 2 violated".into()));
        }
        if m.shift_low <= 0.0 || m.shift_high <= 0.0 {
            return Err(Error::Domain(format!(
                "shift {} outside the admissible interval ({}, {})",
                spec.shift,
                spec.radii[0] / lambda - spec.radii[n - 1],
                spec.radii[n - 1]
            )));
        }
        Ok(spec)
    }

    pub fn margins(&self) -> BoxMargins {
        let l = self.lambda;
        let r = &self.radii;
        let n = self.n;
        BoxMargins {
            chain: (0..n.saturating_sub(1))
                .map(|i| l * r[i] - r[i + 1])
                .collect(),
            wrap: l * r[n - 1] - 0.5 * r[0],
            shift_low: self.shift - (r[0] / l - r[n - 1]),
            shift_high: r[n - 1] - self.shift,
        }
    }

    /// Largest margin by which `G_0 B` and `G_1 B`, shrunk face-wise, still cover `B`.
    ///
    /// `Lambda R B` has half-sides `(lambda r_n, lambda r_1, ..., lambda r_(n-1))`
    /// and the two images are centred at `(+-lambda s, 0, ..., 0)`.
    pub fn covering_slack(&self) -> f64 {
        let l = self.lambda;
        let r = &self.radii;
        let n = self.n;
        let s = self.shift;
        let mut slack = (l * (s + r[n - 1]) - r[0]).min(l * (r[n - 1] - s));
        for i in 1..n {
            slack = slack.min(l * r[i - 1] - r[i]);
        }
        slack
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::zeros(self.n)
    }
}

/// Picks geometric radii `r_i = rho^(i-1)` and a shift for the given rate.
///
/// `rho` is the midpoint of `((2 lambda)^(-1/(n-1)), lambda)`, the interval on
/// which the chain and wrap inequalities hold; the shift is the midpoint of
/// `(r_1 / lambda - r_n, r_n)`.
pub fn build_box_spec(n: usize, lambda: f64) -> Result<BoxSpec> {
    if n == 0 {
        return Err(Error::Usage("dimension must be at least 1".into()));
    }
    if !(lambda > 0.5 && lambda < 1.0) {
        return Err(Error::Domain(format!(
            "lambda = {lambda} is outside (1/2, 1)"
        )));
    }
    if lambda.powi(n as i32) <= 0.5 {
        return Err(Error::Domain(format!(
            "lambda^n = {} <= 1/2: lambda * r_n > r_1 / 2 cannot hold with lambda * r_i > r_(i+1)",
            lambda.powi(n as i32)
        )));
    }
    let radii: Vec<f64> = if n == 1 {
        vec![1.0]
    } else {
        let lo = (0.5 / lambda).powf(1.0 / (n as f64 - 1.0));
        let rho = 0.5 * (lo + lambda);
        (0..n).map(|i| rho.powi(i as i32)).collect()
    };
    let shift = 0.5 * ((radii[0] / lambda - radii[n - 1]) + radii[n - 1]);
    let spec = BoxSpec {
        n,
        lambda,
        radii,
        shift,
    };
    let margins = spec.margins();
    let names = |i: usize| -> String {
        let chain = margins.chain.len();
        if i < chain {
            format!("lambda * r_{} > r_{}", i + 1, i + 2)
        } else {
            [
                "lambda * r_n > r_1 / 2",
                "shift > r_1 / lambda - r_n",
                "shift < r_n",
            ][i - chain]
                .to_string()
        }
    };
    let all: Vec<f64> = margins
        .chain
        .iter()
        .copied()
        .chain([margins.wrap, margins.shift_low, margins.shift_high])
        .collect();
    if let Some((i, v)) = all.iter().enumerate().find(|(_, &v)| v < BOX_MARGIN) {
        return Err(Error::Domain(format!(
            "inequality `{}` holds only with margin {v:e} < {BOX_MARGIN:e}",
            names(i)
        )));
    }
    Ok(spec)
}

/// `G_t = Lambda T_t R` with `T_t = t T_0 + (1 - t) T_1`, `T_0 = +s e_1`, `T_1 = -s e_1`.
///
/// `t = 1` therefore carries the `+s` shift and `t = 0` the `-s` shift.
pub fn build_g(spec: &BoxSpec, t: f64) -> AffineMap {
    let n = spec.n;
    let r = cyclic_rotation(n).expect("n >= 1");
    let mut shift = DVector::zeros(n);
    shift[0] = (2.0 * t - 1.0) * spec.shift;
    AffineMap {
        linear: r.linear * spec.lambda,
        translation: shift * spec.lambda,
    }
}

/// Principal `k`-th root of a special orthogonal matrix.
///
/// The symmetric part `(u + u^T) / 2` has eigenvalue `cos(theta)` on each
/// invariant plane of `u`. On an eigenspace `W` the restriction is
/// `K = cos(theta) I + sin(theta) J` with `J` skew and `J^2 = -I`, so the root
/// there is `cos(theta / k) I + sin(theta / k) J`.
fn rotation_root(u: &DMatrix<f64>, k: u32) -> Result<DMatrix<f64>> {
    let n = u.nrows();
    let sym = (u + u.transpose()) * 0.5;
    let eigen = nalgebra::linalg::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if (eigen.eigenvalues[i] - eigen.eigenvalues[g[0]]).abs() < 1e-8 => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let mut root = DMatrix::<f64>::zeros(n, n);
    for group in groups {
        let g = group.len();
        let w = DMatrix::from_fn(n, g, |r, c| eigen.eigenvectors[(r, group[c])]);
        let local = w.transpose() * u * &w;
        let cos = local.trace() / g as f64;
        let skew = (&local - local.transpose()) * 0.5;
        let sin = operator_norm(&skew);
        let id = DMatrix::<f64>::identity(g, g);
        let block = if sin > 1e-14 {
            let j = skew / sin;
            let angle = sin.atan2(cos) / k as f64;
            &id * angle.cos() + j * angle.sin()
        } else if cos > 0.0 {
            id
        } else {
            if g % 2 == 1 {
                return Err(Error::Domain(
                    "orthogonal part has determinant -1; no real logarithm".into(),
                ));
            }
            log::warn!("eigenvalue -1 in rotation part; using principal angle pi");
            let angle = std::f64::consts::PI / k as f64;
            let mut j = DMatrix::<f64>::zeros(g, g);
            for p in (0..g).step_by(2) {
                j[(p + 1, p)] = 1.0;
                j[(p, p + 1)] = -1.0;
            }
            &id * angle.cos() + j * angle.sin()
        };
        root += &w * block * w.transpose();
    }
    Ok(root)
}

/// The k-th root of a contracting similarity `g = lambda U + b`, `U` in `SO(n)`.
///
/// The linear part is `lambda^(1/k) exp(log(U) / k)` with the principal
/// logarithm; the translation is chosen so that the root keeps the fixed
/// point of `g`.
pub fn affine_kth_root(g: &AffineMap, k: u32) -> Result<AffineMap> {
    if k == 0 {
        return Err(Error::Usage("root order k must be positive".into()));
    }
    let n = g.dim();
    let gram = g.linear.transpose() * &g.linear;
    let lambda_sq = gram.trace() / n as f64;
    let deviation = (&gram - DMatrix::<f64>::identity(n, n) * lambda_sq).amax();
    if deviation > 1e-10 {
        return Err(Error::Domain(format!(
            "linear part is not a similarity (|g^T g - lambda^2 I| = {deviation:e})"
        )));
    }
    let lambda = lambda_sq.sqrt();
    if !(lambda < 1.0) || g.determinant() <= 0.0 {
        return Err(Error::Domain(
            "linear part must be lambda * U with lambda < 1 and det U > 0".into(),
        ));
    }
    if k == 1 {
        return Ok(g.clone());
    }
    let u = &g.linear / lambda;
    let linear = rotation_root(&u, k)? * lambda.powf(1.0 / k as f64);
    let p = g.fixed_point()?;
    let translation = &p - &linear * &p;
    let root = AffineMap {
        linear,
        translation,
    };
    let residual = root.power(k).distance(g)?;
    if residual > ROOT_TOLERANCE {
        return Err(Error::Internal(format!(
            "root verification failed: |e^k - g| = {residual:e}"
        )));
    }
    Ok(root)
}

/// `sup_{|x| <= radius} |map(x) - x| + |linear - I|`.
///
/// The first term is bounded by `|linear - I| * radius + |translation|`,
/// which is exact when `linear - I` is a multiple of an orthogonal matrix
/// (always the case in the plane for rotation-similarities).
pub fn closeness_to_identity(map: &AffineMap, domain_radius: f64) -> f64 {
    let n = map.dim();
    let defect = operator_norm(&(&map.linear - DMatrix::<f64>::identity(n, n)));
    defect * domain_radius + map.translation.norm() + defect
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn one_dim(a: f64, b: f64) -> AffineMap {
        AffineMap::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b)).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
    }

    #[test]
    fn apply_examples() {
        let x = DVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(AffineMap::identity(2).apply(&x).unwrap(), x);

        let half = one_dim(0.5, 0.5);
        assert_eq!(half.apply(&DVector::from_element(1, 1.0)).unwrap()[0], 1.0);

        let lr = AffineMap::linear_only(planar_rotation(PI / 2.0) * 0.9).unwrap();
        let y = lr.apply(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_close(y[0], 0.0, 1e-15);
        assert_close(y[1], 0.9, 1e-15);
    }

    #[test]
    fn apply_rejects_wrong_dimension() {
        let err = AffineMap::identity(2)
            .apply(&DVector::zeros(3))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                got: 3
            }
        ));
    }

    #[test]
    fn compose_examples() {
        let a = one_dim(0.5, 0.5);
        assert_eq!(AffineMap::identity(1).compose(&a).unwrap(), a);
        let aa = a.compose(&a).unwrap();
        assert_eq!(aa.linear()[(0, 0)], 0.25);
        assert_eq!(aa.translation()[0], 0.75);

        let g = build_g(&build_box_spec(3, 0.95).unwrap(), 0.3);
        let id = g.compose(&g.inverse().unwrap()).unwrap();
        assert!(id.distance(&AffineMap::identity(3)).unwrap() <= 1e-12);
        assert!(a.compose(&AffineMap::identity(2)).is_err());
    }

    #[test]
    fn fixed_point_examples() {
        assert_close(one_dim(0.5, 0.5).fixed_point().unwrap()[0], 1.0, 1e-15);

        // (I - 0.9 R) p = (0.495, 0) with R = rot(pi/2): [[1, 0.9], [-0.9, 1]] p = b.
        let map = AffineMap::new(
            planar_rotation(PI / 2.0) * 0.9,
            DVector::from_vec(vec![0.495, 0.0]),
        )
        .unwrap();
        let det = 1.0 + 0.81;
        let expected = [0.495 / det, 0.9 * 0.495 / det];
        let p = map.fixed_point().unwrap();
        assert_close(p[0], expected[0], 1e-14);
        assert_close(p[1], expected[1], 1e-14);

        let pure = AffineMap::linear_only(planar_rotation(0.3) * 0.7).unwrap();
        assert!(pure.fixed_point().unwrap().amax() < 1e-15);
    }

    #[test]
    fn fixed_point_rejects_expanding_map() {
        assert!(matches!(
            one_dim(1.5, 0.0).fixed_point(),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cyclic_rotation_examples() {
        assert_eq!(cyclic_rotation(1).unwrap(), AffineMap::identity(1));

        let r2 = cyclic_rotation(2).unwrap();
        let y = r2.apply(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.as_slice(), &[-2.0, 1.0]);
        assert_close(r2.determinant(), 1.0, 1e-15);

        let r3 = cyclic_rotation(3).unwrap();
        let y = r3.apply(&DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 1.0, 2.0]);
        // Cofactor expansion of [[0,0,1],[1,0,0],[0,1,0]] along the first row: +1.
        assert_close(r3.determinant(), 1.0, 1e-15);

        for n in 1..=6 {
            let r = cyclic_rotation(n).unwrap();
            let gram = r.linear().transpose() * r.linear();
            assert!((gram - DMatrix::<f64>::identity(n, n)).amax() < 1e-15);
            assert_close(r.determinant(), 1.0, 1e-12);
        }
    }

    #[test]
    fn box_spec_inequalities_hold() {
        for (n, lambda) in [(1, 0.9), (2, 0.9), (3, 0.95), (4, 0.9), (6, 0.95)] {
            let spec = build_box_spec(n, lambda).unwrap();
            let m = spec.margins();
            assert!(m.min() >= BOX_MARGIN, "n={n} lambda={lambda}: {m:?}");
            assert_eq!(spec.radii[0], 1.0);
        }
        let one = build_box_spec(1, 0.9).unwrap();
        assert_close(one.shift, 0.5 * (1.0 / 0.9 - 1.0 + 1.0), 1e-15);
    }

    #[test]
    fn box_spec_explicit_values() {
        let spec = BoxSpec::new(0.9, vec![1.0, 0.7], 0.55).unwrap();
        let m = spec.margins();
        assert_close(m.chain[0], 0.2, 1e-12);
        assert_close(m.wrap, 0.13, 1e-12);
        assert_close(spec.covering_slack(), 0.125, 1e-12);

        let spec3 = BoxSpec::new(0.95, vec![1.0, 0.9, 0.81], 0.6).unwrap();
        assert_close(spec3.margins().chain[1], 0.855 - 0.81, 1e-12);
        assert_close(spec3.margins().wrap, 0.7695 - 0.5, 1e-12);
    }

    #[test]
    fn box_spec_infeasible() {
        let err = build_box_spec(2, 0.7).unwrap_err();
        assert!(err.to_string().contains("r_n > r_1 / 2"), "{err}");
        assert!(build_box_spec(2, 1.2).is_err());
        assert!(BoxSpec::new(0.9, vec![1.0, 0.95], 0.5).is_err());
        assert!(BoxSpec::new(0.9, vec![1.0, 0.7], 0.3).is_err());
    }

    #[test]
    fn g_examples() {
        let spec = BoxSpec::new(0.9, vec![1.0, 0.7], 0.55).unwrap();
        let g0 = build_g(&spec, 0.0);
        let g1 = build_g(&spec, 1.0);
        let mid = build_g(&spec, 0.5);
        assert_close(g0.translation()[0], -0.495, 1e-15);
        assert_close(g1.translation()[0], 0.495, 1e-15);
        assert_eq!(mid.translation().amax(), 0.0);
        assert_eq!(g0.linear(), g1.linear());
        assert_close(g0.operator_norm(), 0.9, 1e-15);

        // Vertices of B map to a box with half-sides (0.63, 0.9) around (0.495, 0).
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for (a, b) in [(1.0, 0.7), (1.0, -0.7), (-1.0, 0.7), (-1.0, -0.7)] {
            let y = g1.apply(&DVector::from_vec(vec![a, b])).unwrap();
            for i in 0..2 {
                lo[i] = lo[i].min(y[i]);
                hi[i] = hi[i].max(y[i]);
            }
        }
        assert_close(0.5 * (hi[0] - lo[0]), 0.63, 1e-12);
        assert_close(0.5 * (hi[1] - lo[1]), 0.9, 1e-12);
        assert_close(0.5 * (hi[0] + lo[0]), 0.495, 1e-12);
        assert_close(0.5 * (hi[1] + lo[1]), 0.0, 1e-12);
    }

    #[test]
    fn kth_root_examples() {
        let g = one_dim(0.5, 0.5);
        let e = affine_kth_root(&g, 2).unwrap();
        let r = 0.5f64.sqrt();
        assert_close(e.linear()[(0, 0)], r, 1e-15);
        assert_close(e.translation()[0], 1.0 - r, 1e-15);
        let ee = e.compose(&e).unwrap();
        assert!(ee.distance(&g).unwrap() < 1e-15);

        let g = AffineMap::linear_only(planar_rotation(PI / 2.0) * 0.9).unwrap();
        let e = affine_kth_root(&g, 9).unwrap();
        let expected = planar_rotation(PI / 18.0) * 0.9f64.powf(1.0 / 9.0);
        assert!((e.linear() - expected).amax() < 1e-14);
        // Repeated composition oracle.
        let mut acc = AffineMap::identity(2);
        for _ in 0..9 {
            acc = e.compose(&acc).unwrap();
        }
        assert!(acc.distance(&g).unwrap() <= 1e-12);

        assert_eq!(affine_kth_root(&g, 1).unwrap(), g);
    }

    #[test]
    fn kth_root_rejects_non_similarity() {
        let g =
            AffineMap::linear_only(DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.5])).unwrap();
        assert!(matches!(affine_kth_root(&g, 3), Err(Error::Domain(_))));
        let reflection =
            AffineMap::linear_only(DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.5])).unwrap();
        assert!(matches!(
            affine_kth_root(&reflection, 3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kth_root_handles_minus_one_eigenvalues() {
        let g =
            AffineMap::linear_only(DMatrix::from_row_slice(2, 2, &[-0.8, 0.0, 0.0, -0.8])).unwrap();
        let e = affine_kth_root(&g, 4).unwrap();
        assert!(e.power(4).distance(&g).unwrap() < 1e-12);
    }

    #[test]
    fn kth_root_uniform_rate_and_identity() {
        for (n, lambda) in [(1, 0.9), (2, 0.9), (3, 0.95), (4, 0.9), (5, 0.95)] {
            let spec = build_box_spec(n, lambda).unwrap();
            for k in [1u32, 2, 9, 16] {
                for i in 0..=10 {
                    let g = build_g(&spec, i as f64 / 10.0);
                    let e = affine_kth_root(&g, k).unwrap();
                    assert!(e.power(k).distance(&g).unwrap() <= ROOT_TOLERANCE);
                    assert_close(e.operator_norm(), lambda.powf(1.0 / k as f64), 1e-12);
                }
            }
        }
    }

    #[test]
    fn roots_are_affine_in_t() {
        let spec = build_box_spec(2, 0.9).unwrap();
        let roots: Vec<AffineMap> = (0..=10)
            .map(|i| affine_kth_root(&build_g(&spec, i as f64 / 10.0), 7).unwrap())
            .collect();
        // Second differences of translation vanish and the linear part is constant.
        for w in roots.windows(3) {
            let dd = w[0].translation() - w[1].translation() * 2.0 + w[2].translation();
            assert!(dd.amax() < 1e-13);
            assert!((w[0].linear() - w[2].linear()).amax() < 1e-13);
        }
    }

    #[test]
    fn closeness_examples() {
        assert_eq!(closeness_to_identity(&AffineMap::identity(3), 1.0), 0.0);
        let v = DVector::from_vec(vec![0.3, 0.4]);
        assert_close(
            closeness_to_identity(&AffineMap::translation_only(v), 2.0),
            0.5,
            1e-15,
        );
        let rot = AffineMap::linear_only(planar_rotation(PI / 2.0) * 0.9).unwrap();
        // |0.9 i - 1| = sqrt(1.81).
        assert!(closeness_to_identity(&rot, 1.0) >= 1.81f64.sqrt() - 1e-12);
    }

    #[test]
    fn closeness_shrinks_with_k() {
        let spec = build_box_spec(2, 0.9).unwrap();
        let g = build_g(&spec, 1.0);
        let mut last = f64::INFINITY;
        for k in [1u32, 2, 4, 8, 16, 32, 64] {
            let c = closeness_to_identity(&affine_kth_root(&g, k).unwrap(), 1.0);
            assert!(c < last, "k={k}: {c} >= {last}");
            last = c;
        }
    }

    #[test]
    fn constructors_are_deterministic() {
        let spec = build_box_spec(3, 0.95).unwrap();
        let a = affine_kth_root(&build_g(&spec, 0.3), 9).unwrap();
        let b = affine_kth_root(&build_g(&spec, 0.3), 9).unwrap();
        assert_eq!(a, b);
    }
}
