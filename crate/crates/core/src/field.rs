//! Scalar, vector and SPD matrix fields sampled on a [`Grid`].
//!
//! A field may carry a generator that re-samples the same continuum object
//! on any other grid of the same domain. Characteristic estimates use it to
//! run genuine refinement studies; data-only fields fall back to block
//! averages.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid};
use crate::spd::{spd_decompose, Mat};

pub type ScalarGen = Arc<dyn Fn(&Grid) -> Vec<f64> + Send + Sync>;
pub type MatrixGen = Arc<dyn Fn(&Grid) -> Vec<Mat> + Send + Sync>;

#[derive(Clone)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    gen: Option<ScalarGen>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("cells", &self.grid.cells())
            .field("analytic", &self.gen.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField { grid, values, gen: None })
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField::from_gen(grid, Arc::new(move |g: &Grid| vec![c; g.len()]))
    }

    /// Sample `f` at cell centres; keeps `f` as the generator.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        let f = Arc::new(f);
        ScalarField::from_gen(
            grid,
            Arc::new(move |g: &Grid| {
                let mut x = vec![0.0; g.n()];
                (0..g.len())
                    .map(|i| {
                        g.center_into(i, &mut x);
                        f(&x)
                    })
                    .collect()
            }),
        )
    }

    pub fn from_gen(grid: &Grid, gen: ScalarGen) -> Self {
        let values = gen(grid);
        ScalarField { grid: grid.clone(), values, gen: Some(gen) }
    }

    pub fn generator(&self) -> Option<&ScalarGen> {
        self.gen.as_ref()
    }

    pub fn without_generator(mut self) -> Self {
        self.gen = None;
        self
    }

    /// Pointwise map; the generator (if any) is composed.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarField {
        let f = Arc::new(f);
        let values = self.values.iter().map(|&v| f(v)).collect();
        let gen = self.gen.clone().map(|g| {
            let f = f.clone();
            Arc::new(move |grid: &Grid| g(grid).into_iter().map(|v| f(v)).collect()) as ScalarGen
        });
        ScalarField { grid: self.grid.clone(), values, gen }
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(move |v| c * v)
    }

    /// Same object on another grid: re-sampled when analytic, else block
    /// averaged (requires an integer refinement factor per axis).
    pub fn on_grid(&self, target: &Grid) -> Result<ScalarField> {
        if let Some(g) = &self.gen {
            let values = g(target);
            return Ok(ScalarField { grid: target.clone(), values, gen: Some(g.clone()) });
        }
        let (grid, values) = block_average(&self.grid, &self.values, 1, target.cells())?;
        Ok(ScalarField { grid, values, gen: None })
    }

    /// Error unless strictly positive and finite on every domain cell.
    pub fn check_weight(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if self.grid.weight(i) > 0.0 && !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveWeight { cell: i, value: v });
            }
        }
        Ok(())
    }

    pub fn min_active(&self) -> f64 {
        (0..self.values.len()).filter(|&i| self.grid.is_active(i)).map(|i| self.values[i]).fold(f64::INFINITY, f64::min)
    }
}

/// Block average of `comps`-valued samples onto a grid with `target` cells
/// per axis; domain fractions of the fine grid become fractions of the
/// coarse one.
pub(crate) fn block_average(grid: &Grid, values: &[f64], comps: usize, target: &[usize]) -> Result<(Grid, Vec<f64>)> {
    let n = grid.n();
    let mut factor = vec![0usize; n];
    for a in 0..n {
        if target[a] == 0 || grid.cells()[a] % target[a] != 0 {
            return Err(Error::InvalidGrid(format!(
                "cannot block-average {} cells onto {} on axis {a}",
                grid.cells()[a],
                target[a]
            )));
        }
        factor[a] = grid.cells()[a] / target[a];
    }
    let coarse = grid.resized(target.to_vec());
    let m = coarse.len();
    let mut sums = vec![crate::sum::Kahan::new(); m * comps];
    let mut wsum = vec![crate::sum::Kahan::new(); m];
    let mut cnt = vec![0usize; m];
    let mut mi = vec![0usize; n];
    for i in 0..grid.len() {
        let mut rest = i;
        for a in 0..n {
            mi[a] = (rest % grid.cells()[a]) / factor[a];
            rest /= grid.cells()[a];
        }
        let ci = coarse.index(&mi);
        let w = grid.weight(i);
        cnt[ci] += 1;
        if w > 0.0 {
            wsum[ci].add(w);
            for c in 0..comps {
                sums[ci * comps + c].add(w * values[i * comps + c]);
            }
        }
    }
    let mut out = vec![0.0; m * comps];
    let mut frac = vec![0.0; m];
    let mut partial = false;
    for ci in 0..m {
        let w = wsum[ci].value();
        frac[ci] = w / cnt[ci] as f64;
        if frac[ci] < 1.0 {
            partial = true;
        }
        for c in 0..comps {
            out[ci * comps + c] = if w > 0.0 { sums[ci * comps + c].value() / w } else { f64::NAN };
        }
    }
    let coarse = if partial || !matches!(grid.domain(), Domain::Box) {
        coarse.with_domain_unchecked(Domain::Fraction { values: frac })
    } else {
        coarse
    };
    Ok((coarse, out))
}

/// Per-cell vectors with `comps` components, cell-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub comps: usize,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, comps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * comps {
            return Err(Error::GridMismatch);
        }
        Ok(VectorField { grid, comps, values })
    }

    pub fn zeros(grid: &Grid, comps: usize) -> Self {
        VectorField { grid: grid.clone(), comps, values: vec![0.0; grid.len() * comps] }
    }

    pub fn from_fn(grid: &Grid, comps: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut x = vec![0.0; grid.n()];
        let mut values = Vec::with_capacity(grid.len() * comps);
        for i in 0..grid.len() {
            grid.center_into(i, &mut x);
            let v = f(&x);
            assert_eq!(v.len(), comps);
            values.extend(v);
        }
        VectorField { grid: grid.clone(), comps, values }
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.comps..(i + 1) * self.comps]
    }

    pub fn sub(&self, o: &VectorField) -> Result<VectorField> {
        if !self.grid.same_shape(&o.grid) || self.comps != o.comps {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&o.values).map(|(a, b)| a - b).collect();
        Ok(VectorField { grid: self.grid.clone(), comps: self.comps, values })
    }

    pub fn add(&self, o: &VectorField) -> Result<VectorField> {
        if !self.grid.same_shape(&o.grid) || self.comps != o.comps {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&o.values).map(|(a, b)| a + b).collect();
        Ok(VectorField { grid: self.grid.clone(), comps: self.comps, values })
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField { grid: self.grid.clone(), comps: self.comps, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn component(&self, c: usize) -> ScalarField {
        let values = (0..self.grid.len()).map(|i| self.values[i * self.comps + c]).collect();
        ScalarField::new(self.grid.clone(), values).expect("component length")
    }
}

/// Per-cell symmetric positive definite d×d matrices together with their
/// eigendecompositions.
#[derive(Clone)]
pub struct SpdField {
    pub grid: Grid,
    pub d: usize,
    mats: Vec<f64>,
    evals: Vec<f64>,
    evecs: Vec<f64>,
    gen: Option<MatrixGen>,
}

impl fmt::Debug for SpdField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdField")
            .field("cells", &self.grid.cells())
            .field("d", &self.d)
            .field("analytic", &self.gen.is_some())
            .finish()
    }
}

impl SpdField {
    /// Validate and decompose. Cells outside the domain that are not SPD are
    /// replaced by the identity; inside the domain they are an error.
    pub fn from_matrices(grid: Grid, mats: Vec<Mat>) -> Result<Self> {
        if mats.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        let d = mats.first().map(|m| m.d).ok_or(Error::GridMismatch)?;
        let mut flat = Vec::with_capacity(mats.len() * d * d);
        let mut evals = Vec::with_capacity(mats.len() * d);
        let mut evecs = Vec::with_capacity(mats.len() * d * d);
        for (i, m) in mats.into_iter().enumerate() {
            if m.d != d {
                return Err(Error::Dimension("mixed matrix sizes".into()));
            }
            let dec = spd_decompose(&m).and_then(|e| e.check_positive(i).map(|_| e));
            let (m, e) = match dec {
                Ok(e) => (m, e),
                Err(err) if grid.weight(i) > 0.0 => {
                    return Err(match err {
                        Error::SingularWeight { eigenvalue, .. } => Error::SingularWeight { cell: i, eigenvalue },
                        other => other,
                    })
                }
                Err(_) => (Mat::identity(d), spd_decompose(&Mat::identity(d))?),
            };
            flat.extend_from_slice(&m.a);
            evals.extend_from_slice(&e.values);
            evecs.extend_from_slice(&e.u.a);
        }
        Ok(SpdField { grid, d, mats: flat, evals, evecs, gen: None })
    }

    pub fn from_gen(grid: &Grid, gen: MatrixGen) -> Result<Self> {
        let mut f = SpdField::from_matrices(grid.clone(), gen(grid))?;
        f.gen = Some(gen);
        Ok(f)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Mat + Send + Sync + 'static) -> Result<Self> {
        let f = Arc::new(f);
        SpdField::from_gen(
            grid,
            Arc::new(move |g: &Grid| {
                let mut x = vec![0.0; g.n()];
                (0..g.len())
                    .map(|i| {
                        g.center_into(i, &mut x);
                        f(&x)
                    })
                    .collect()
            }),
        )
    }

    pub fn identity(grid: &Grid, d: usize) -> Self {
        SpdField::from_gen(grid, Arc::new(move |g: &Grid| vec![Mat::identity(d); g.len()])).expect("identity is SPD")
    }

    /// 1×1 matrix field from a scalar weight.
    pub fn from_scalar(w: &ScalarField) -> Result<Self> {
        let mats = w.values.iter().map(|&v| Mat { d: 1, a: vec![v] }).collect();
        let mut f = SpdField::from_matrices(w.grid.clone(), mats)?;
        f.gen = w.generator().cloned().map(|g| {
            Arc::new(move |grid: &Grid| g(grid).into_iter().map(|v| Mat { d: 1, a: vec![v] }).collect()) as MatrixGen
        });
        Ok(f)
    }

    pub fn generator(&self) -> Option<&MatrixGen> {
        self.gen.as_ref()
    }

    pub fn without_generator(mut self) -> Self {
        self.gen = None;
        self
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix(&self, i: usize) -> Mat {
        let dd = self.d * self.d;
        Mat { d: self.d, a: self.mats[i * dd..(i + 1) * dd].to_vec() }
    }

    #[inline]
    pub fn matrix_slice(&self, i: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.mats[i * dd..(i + 1) * dd]
    }

    #[inline]
    pub fn eigenvalues(&self, i: usize) -> &[f64] {
        &self.evals[i * self.d..(i + 1) * self.d]
    }

    pub fn eigen(&self, i: usize) -> crate::spd::Eigen {
        let dd = self.d * self.d;
        crate::spd::Eigen {
            values: self.eigenvalues(i).to_vec(),
            u: Mat { d: self.d, a: self.evecs[i * dd..(i + 1) * dd].to_vec() },
        }
    }

    /// `W^s` at one cell, sharing the stored orthogonal factor.
    pub fn power_at(&self, i: usize, s: f64) -> Mat {
        self.eigen(i).map(|l| l.powf(s))
    }

    /// Flat row-major entries of `W^s` for every cell.
    pub fn power_entries(&self, s: f64) -> Vec<f64> {
        let dd = self.d * self.d;
        let mut out = Vec::with_capacity(self.len() * dd);
        for i in 0..self.len() {
            if self.d == 2 {
                let l = self.eigenvalues(i);
                let u = &self.evecs[i * 4..i * 4 + 4];
                let (c, s_) = (u[0], u[2]);
                let (a, b) = (l[0].powf(s), l[1].powf(s));
                let m00 = a * c * c + b * s_ * s_;
                let m01 = (a - b) * c * s_;
                let m11 = a * s_ * s_ + b * c * c;
                out.extend_from_slice(&[m00, m01, m01, m11]);
            } else {
                out.extend_from_slice(&self.power_at(i, s).a);
            }
        }
        out
    }

    /// Pointwise `W^s` as a new field (generator composed).
    pub fn power_field(&self, s: f64) -> Result<SpdField> {
        let mats = (0..self.len()).map(|i| self.power_at(i, s)).collect();
        let mut f = SpdField::from_matrices(self.grid.clone(), mats)?;
        f.gen = self.gen.clone().map(|g| {
            Arc::new(move |grid: &Grid| {
                g(grid)
                    .into_iter()
                    .map(|m| crate::spd::matrix_power(&m, s).unwrap_or_else(|_| Mat::identity(m.d)))
                    .collect()
            }) as MatrixGen
        });
        Ok(f)
    }

    /// Scalar field `⟨W v, v⟩` (or with `W^s`), generator composed.
    pub fn quadratic_form(&self, v: &[f64], s: f64) -> ScalarField {
        let vv = v.to_vec();
        let q = move |m: &Mat| -> f64 {
            let mv = m.apply(&vv);
            mv.iter().zip(&vv).map(|(a, b)| a * b).sum()
        };
        let values = (0..self.len()).map(|i| q(&self.power_at(i, s))).collect();
        let mut out = ScalarField::new(self.grid.clone(), values).expect("shape");
        if let Some(g) = self.gen.clone() {
            let q = q.clone();
            let d = self.d;
            let gen: ScalarGen = Arc::new(move |grid: &Grid| {
                g(grid)
                    .into_iter()
                    .map(|m| {
                        let p = if s == 1.0 { m } else { crate::spd::matrix_power(&m, s).unwrap_or_else(|_| Mat::identity(d)) };
                        q(&p)
                    })
                    .collect()
            });
            out = ScalarField::from_gen(&self.grid, gen);
        }
        out
    }

    /// Same object on another grid (re-sampled or block averaged).
    pub fn on_grid(&self, target: &Grid) -> Result<SpdField> {
        if let Some(g) = &self.gen {
            let mut f = SpdField::from_matrices(target.clone(), g(target))?;
            f.gen = Some(g.clone());
            return Ok(f);
        }
        let dd = self.d * self.d;
        let (grid, vals) = block_average(&self.grid, &self.mats, dd, target.cells())?;
        let mats = vals
            .chunks(dd)
            .map(|c| if c[0].is_nan() { Mat::identity(self.d) } else { Mat { d: self.d, a: c.to_vec() } })
            .collect();
        SpdField::from_matrices(grid, mats)
    }

    /// Scalar field computed per cell from the eigenvalues; generator composed.
    pub fn eigen_scalar(&self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarField {
        let f = Arc::new(f);
        let values: Vec<f64> = (0..self.len()).map(|i| f(self.eigenvalues(i))).collect();
        match self.gen.clone() {
            Some(g) => {
                let gen: ScalarGen = Arc::new(move |grid: &Grid| {
                    g(grid)
                        .into_iter()
                        .map(|m| match spd_decompose(&m) {
                            Ok(e) => f(&e.values),
                            Err(_) => f64::NAN,
                        })
                        .collect()
                });
                let mut s = ScalarField::from_gen(&self.grid, gen);
                s.values = values;
                s
            }
            None => ScalarField::new(self.grid.clone(), values).expect("shape"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_resamples() {
        let g = Grid::unit_interval(8).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0]);
        let g2 = Grid::unit_interval(4).unwrap();
        let f2 = f.on_grid(&g2).unwrap();
        assert_eq!(f2.values, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn block_average_for_data_fields() {
        let g = Grid::unit_interval(8).unwrap();
        let f = ScalarField::new(g, (0..8).map(|i| i as f64).collect()).unwrap();
        let c = f.on_grid(&Grid::unit_interval(2).unwrap()).unwrap();
        assert_eq!(c.values, vec![1.5, 5.5]);
    }

    #[test]
    fn block_average_tracks_domain_fraction() {
        let g = Grid::cube(2, -1.0, 1.0, 8).unwrap().with_ball_domain(vec![0.0, 0.0], 1.0).unwrap();
        let f = ScalarField::new(g.clone(), vec![1.0; 64]).unwrap();
        let c = f.on_grid(&g.resized(vec![2, 2])).unwrap();
        assert!((c.grid.weight(0) - 13.0 / 16.0).abs() < 1e-15);
        assert_eq!(c.values[0], 1.0);
    }

    #[test]
    fn powers_share_eigenvectors() {
        let g = Grid::unit_square(4).unwrap();
        let w = SpdField::from_fn(&g, |x| Mat::from_rows(&[&[2.0 + x[0], 0.3], &[0.3, 1.0 + x[1]]])).unwrap();
        for i in 0..w.len() {
            let a = w.power_at(i, 0.5);
            let b = w.power_at(i, -0.5);
            assert!(a.mul(&b).frobenius_dist(&Mat::identity(2)) < 1e-12);
        }
        let p = w.power_entries(0.5);
        let direct = w.power_at(5, 0.5);
        for k in 0..4 {
            assert!((p[20 + k] - direct.a[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_inside_domain_rejected() {
        let g = Grid::unit_interval(4).unwrap();
        let r = SpdField::from_fn(&g, |x| Mat::diag(&[x[0] - 0.5, 1.0]));
        assert!(matches!(r, Err(Error::SingularWeight { .. })));
    }
}
