//! Registry of the built-in weight and mapping families.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{MatrixGen, ScalarField, ScalarGen, SpdField};
use crate::grid::Grid;
use crate::mfd::{AnalyticMap, MappingField};
use crate::spd::Mat;

/// How a family is turned into cell values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Value at the cell centre (midpoint rule).
    #[default]
    CellCenter,
    /// Exact cell average; supported for product-power weights.
    CellAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilySpec {
    /// `value`, or `value·I` when `d` is given.
    Constant {
        value: f64,
        #[serde(default)]
        d: Option<usize>,
    },
    /// `∏ |x_i|^{β_i}`; dimension = number of exponents.
    Power {
        exponents: Vec<f64>,
        #[serde(default)]
        sampling: Sampling,
    },
    /// `diag(1, (xy)^{-α})` on the unit square.
    #[serde(rename = "example-5.1")]
    Example51 {
        alpha: f64,
        #[serde(default)]
        sampling: Sampling,
    },
    /// `w ≡ 1`, `v = (xy)^{-α}` on the unit square.
    #[serde(rename = "example-7-balance-failure")]
    BalanceFailure {
        alpha: f64,
        #[serde(default = "cell_average")]
        sampling: Sampling,
    },
    /// `diag(|x_1|^{2γ}, 1)` on `(-1/3, 1/3)²`.
    #[serde(rename = "remark-5.2")]
    Remark52 { gamma: f64 },
    /// `(|x|^{-1} + |x|^{-1/2}) x` on the punctured unit disk.
    BallMap,
    IdentityMap {
        #[serde(default = "two")]
        n: usize,
    },
    Scaling {
        c: f64,
        #[serde(default = "two")]
        n: usize,
    },
    /// `(x² − y², 2xy)` on `(0.5, 1.5)²`.
    ConformalSquare,
    /// Smooth perturbation of the identity on the unit square.
    Perturbed { amplitude: f64 },
}

fn cell_average() -> Sampling {
    Sampling::CellAverage
}
fn two() -> usize {
    2
}

/// A sampled two-weight pair with `w ≤ v`.
#[derive(Clone, Debug)]
pub struct WeightPair {
    pub w: ScalarField,
    pub v: ScalarField,
}

#[derive(Clone, Debug)]
pub enum Sampled {
    Scalar(ScalarField),
    Matrix(SpdField),
    Pair(WeightPair),
    Mapping(MappingField),
}

impl Sampled {
    pub fn kind(&self) -> &'static str {
        match self {
            Sampled::Scalar(_) => "scalar",
            Sampled::Matrix(_) => "matrix",
            Sampled::Pair(_) => "pair",
            Sampled::Mapping(_) => "mapping",
        }
    }
}

pub const REGISTERED: &[&str] = &[
    "constant",
    "power",
    "example-5.1",
    "example-7-balance-failure",
    "remark-5.2",
    "ball-map",
    "identity-map",
    "scaling",
    "conformal-square",
    "perturbed",
];

impl FamilySpec {
    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::Constant { .. } => "constant",
            FamilySpec::Power { .. } => "power",
            FamilySpec::Example51 { .. } => "example-5.1",
            FamilySpec::BalanceFailure { .. } => "example-7-balance-failure",
            FamilySpec::Remark52 { .. } => "remark-5.2",
            FamilySpec::BallMap => "ball-map",
            FamilySpec::IdentityMap { .. } => "identity-map",
            FamilySpec::Scaling { .. } => "scaling",
            FamilySpec::ConformalSquare => "conformal-square",
            FamilySpec::Perturbed { .. } => "perturbed",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FamilySpec::Power { exponents, .. } => exponents.len(),
            FamilySpec::IdentityMap { n } | FamilySpec::Scaling { n, .. } => *n,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        match self {
            FamilySpec::Constant { value, d } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return bad(format!("constant value must be positive, got {value}"));
                }
                if d == &Some(0) {
                    return bad("matrix dimension must be positive".into());
                }
            }
            FamilySpec::Power { exponents, .. } => {
                if exponents.is_empty() || exponents.iter().any(|b| !b.is_finite()) {
                    return bad("power exponents must be finite and non-empty".into());
                }
            }
            FamilySpec::Example51 { alpha, .. } | FamilySpec::BalanceFailure { alpha, .. } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad(format!("alpha must lie in (0, 1), got {alpha}"));
                }
            }
            FamilySpec::Remark52 { gamma } => {
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return bad(format!("gamma must be positive, got {gamma}"));
                }
            }
            FamilySpec::IdentityMap { n } => {
                if *n == 0 {
                    return bad("n must be positive".into());
                }
            }
            FamilySpec::Scaling { c, n } => {
                if !(*c > 0.0) || *n == 0 {
                    return bad("scaling needs c > 0 and n > 0".into());
                }
            }
            FamilySpec::Perturbed { amplitude } => {
                if !(amplitude.abs() <= 0.1) {
                    return bad(format!("perturbation amplitude must satisfy |a| <= 0.1, got {amplitude}"));
                }
            }
            FamilySpec::BallMap | FamilySpec::ConformalSquare => {}
        }
        Ok(())
    }

    /// The family's natural domain with `cells` cells per axis.
    pub fn default_grid(&self, cells: usize) -> Result<Grid> {
        let n = self.dim();
        match self {
            FamilySpec::Remark52 { .. } => Grid::cube(2, -1.0 / 3.0, 1.0 / 3.0, cells),
            FamilySpec::BallMap => Grid::cube(2, -1.0, 1.0, cells)?.with_ball_domain(vec![0.0, 0.0], 1.0),
            FamilySpec::ConformalSquare => Grid::cube(2, 0.5, 1.5, cells),
            _ => Grid::cube(n, 0.0, 1.0, cells),
        }
    }

    pub fn sample(&self, grid: &Grid) -> Result<Sampled> {
        sample_family(self, grid)
    }
}

/// Sample a registered family on `grid`. The returned fields keep an
/// analytic generator so they can be re-sampled at other resolutions.
pub fn sample_family(spec: &FamilySpec, grid: &Grid) -> Result<Sampled> {
    spec.validate()?;
    if grid.n() != spec.dim() {
        return Err(Error::Dimension(format!("family {} lives in dimension {}, grid has {}", spec.name(), spec.dim(), grid.n())));
    }
    Ok(match spec {
        FamilySpec::Constant { value, d: None } => Sampled::Scalar(ScalarField::constant(grid, *value)),
        FamilySpec::Constant { value, d: Some(d) } => {
            let (c, d) = (*value, *d);
            Sampled::Matrix(SpdField::from_gen(grid, Arc::new(move |g: &Grid| vec![Mat::identity(d).scale(c); g.len()]))?)
        }
        FamilySpec::Power { exponents, sampling } => {
            Sampled::Scalar(ScalarField::from_gen(grid, product_power_gen(exponents.clone(), *sampling)))
        }
        FamilySpec::Example51 { alpha, sampling } => {
            let v = product_power_gen(vec![-alpha, -alpha], *sampling);
            let gen: MatrixGen = Arc::new(move |g: &Grid| v(g).into_iter().map(|e| Mat::diag(&[1.0, e])).collect());
            Sampled::Matrix(SpdField::from_gen(grid, gen)?)
        }
        FamilySpec::BalanceFailure { alpha, sampling } => Sampled::Pair(WeightPair {
            w: ScalarField::constant(grid, 1.0),
            v: ScalarField::from_gen(grid, product_power_gen(vec![-alpha, -alpha], *sampling)),
        }),
        FamilySpec::Remark52 { gamma } => {
            let g2 = 2.0 * gamma;
            Sampled::Matrix(SpdField::from_fn(grid, move |x| Mat::diag(&[x[0].abs().powf(g2), 1.0]))?)
        }
        FamilySpec::BallMap => Sampled::Mapping(MappingField::analytic(grid, ball_map())),
        FamilySpec::IdentityMap { .. } => Sampled::Mapping(MappingField::analytic(grid, scaling_map(1.0, grid.n()))),
        FamilySpec::Scaling { c, .. } => Sampled::Mapping(MappingField::analytic(grid, scaling_map(*c, grid.n()))),
        FamilySpec::ConformalSquare => Sampled::Mapping(MappingField::analytic(grid, conformal_square())),
        FamilySpec::Perturbed { amplitude } => Sampled::Mapping(MappingField::analytic(grid, perturbed_identity(*amplitude))),
    })
}

/// Exact mean of `|t|^β` over `[a, b]` (β > −1).
pub fn power_cell_average(a: f64, b: f64, beta: f64) -> f64 {
    let e = beta + 1.0;
    let prim = |t: f64| t.abs().powf(e) / e;
    let integral = if a >= 0.0 {
        prim(b) - prim(a)
    } else if b <= 0.0 {
        prim(a) - prim(b)
    } else {
        prim(a) + prim(b)
    };
    integral / (b - a)
}

/// Generator of `∏ |x_i|^{β_i}`. Cell averages are exact per factor; an
/// exponent `β ≤ −1` is not integrable across 0, so that factor is sampled
/// at the centre.
pub fn product_power_gen(exponents: Vec<f64>, sampling: Sampling) -> ScalarGen {
    Arc::new(move |g: &Grid| {
        let n = g.n();
        let per_axis: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                let beta = exponents[a];
                let h = g.h(a);
                (0..g.cells()[a])
                    .map(|i| {
                        let c = g.coord(a, i);
                        if beta == 0.0 {
                            1.0
                        } else if sampling == Sampling::CellAverage && beta > -1.0 {
                            power_cell_average(c - 0.5 * h, c + 0.5 * h, beta)
                        } else {
                            c.abs().powf(beta)
                        }
                    })
                    .collect()
            })
            .collect();
        (0..g.len())
            .map(|idx| {
                let mut rest = idx;
                let mut v = 1.0;
                for a in 0..n {
                    v *= per_axis[a][rest % g.cells()[a]];
                    rest /= g.cells()[a];
                }
                v
            })
            .collect()
    })
}

/// `f(x) = (|x|^{-1} + |x|^{-1/2}) x` with its analytic derivative.
pub fn ball_map() -> AnalyticMap {
    AnalyticMap {
        name: "ball-map".into(),
        f: Arc::new(|x: &[f64]| {
            let r = x[0].hypot(x[1]);
            let s = 1.0 / r + 1.0 / r.sqrt();
            vec![s * x[0], s * x[1]]
        }),
        df: Arc::new(|x: &[f64]| {
            let r = x[0].hypot(x[1]);
            let (mu1, mu2) = ball_map_singular_values(r);
            let (ux, uy) = (x[0] / r, x[1] / r);
            let d = mu1 - mu2;
            Mat::from_rows(&[&[mu2 + d * ux * ux, d * ux * uy], &[d * ux * uy, mu2 + d * uy * uy]])
        }),
    }
}

/// Radial and tangential stretch of the ball map: `μ1 = R'`, `μ2 = R/r`
/// with `R = 1 + r^{1/2}`.
pub fn ball_map_singular_values(r: f64) -> (f64, f64) {
    let sr = r.sqrt();
    (0.5 / sr, (1.0 + sr) / r)
}

/// `K_O = K_I = 2 + 2 r^{-1/2}` for the ball map.
pub fn ball_map_distortion(r: f64) -> f64 {
    2.0 + 2.0 / r.sqrt()
}

/// `(w, v) = (K_O^{-1}, K_I)` of the ball map as analytic radial weights.
pub fn ball_map_pair(grid: &Grid) -> WeightPair {
    let rad = |x: &[f64]| x[0].hypot(x[1]);
    WeightPair {
        w: ScalarField::from_fn(grid, move |x| 1.0 / ball_map_distortion(rad(x))),
        v: ScalarField::from_fn(grid, move |x| ball_map_distortion(rad(x))),
    }
}

/// Closed-form distortion weight of the ball map:
/// `K x̂x̂ᵗ + K^{-1}(I − x̂x̂ᵗ)`.
pub fn ball_map_tensor(grid: &Grid) -> Result<SpdField> {
    SpdField::from_fn(grid, |x| {
        let r = x[0].hypot(x[1]);
        let k = ball_map_distortion(r);
        let (ux, uy) = (x[0] / r, x[1] / r);
        let d = k - 1.0 / k;
        Mat::from_rows(&[&[1.0 / k + d * ux * ux, d * ux * uy], &[d * ux * uy, 1.0 / k + d * uy * uy]])
    })
}

pub fn scaling_map(c: f64, n: usize) -> AnalyticMap {
    AnalyticMap {
        name: if c == 1.0 { "identity-map".into() } else { "scaling".into() },
        f: Arc::new(move |x: &[f64]| x.iter().map(|v| c * v).collect()),
        df: Arc::new(move |_x: &[f64]| Mat::identity(n).scale(c)),
    }
}

pub fn conformal_square() -> AnalyticMap {
    AnalyticMap {
        name: "conformal-square".into(),
        f: Arc::new(|x: &[f64]| vec![x[0] * x[0] - x[1] * x[1], 2.0 * x[0] * x[1]]),
        df: Arc::new(|x: &[f64]| Mat::from_rows(&[&[2.0 * x[0], -2.0 * x[1]], &[2.0 * x[1], 2.0 * x[0]]])),
    }
}

pub fn perturbed_identity(a: f64) -> AnalyticMap {
    use std::f64::consts::PI;
    AnalyticMap {
        name: "perturbed".into(),
        f: Arc::new(move |x: &[f64]| {
            vec![
                x[0] + a * (PI * x[0]).sin() * (PI * x[1]).sin(),
                x[1] + a * (PI * x[0]).cos() * (PI * x[1]).sin(),
            ]
        }),
        df: Arc::new(move |x: &[f64]| {
            let (s0, c0, s1, c1) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
            Mat::from_rows(&[
                &[1.0 + a * PI * c0 * s1, a * PI * s0 * c1],
                &[-a * PI * s0 * s1, 1.0 + a * PI * c0 * c1],
            ])
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_51_is_diagonal() {
        let g = Grid::unit_square(8).unwrap();
        let Sampled::Matrix(w) = sample_family(&FamilySpec::Example51 { alpha: 0.5, sampling: Sampling::CellCenter }, &g).unwrap() else {
            panic!()
        };
        for i in 0..g.len() {
            let x = g.center(i);
            let m = w.matrix(i);
            assert_eq!(m.get(0, 0), 1.0);
            assert_eq!(m.get(0, 1), 0.0);
            assert!((m.get(1, 1) - (x[0] * x[1]).powf(-0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_identity() {
        let g = Grid::unit_square(4).unwrap();
        let Sampled::Matrix(w) = sample_family(&FamilySpec::Constant { value: 1.0, d: Some(2) }, &g).unwrap() else {
            panic!()
        };
        assert!((0..g.len()).all(|i| w.matrix(i) == Mat::identity(2)));
    }

    #[test]
    fn ball_map_direct_formula() {
        let m = ball_map();
        let y = (m.f)(&[0.25, 0.0]);
        assert!((y[0] - 1.5).abs() < 1e-15 && y[1] == 0.0);
        // |f(x)| = 1 + |x|^{1/2}
        let y = (m.f)(&[0.3, -0.4]);
        assert!((y[0].hypot(y[1]) - (1.0 + 0.5f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = Grid::unit_square(4).unwrap();
        assert!(matches!(sample_family(&FamilySpec::Example51 { alpha: 1.5, sampling: Sampling::CellCenter }, &g), Err(Error::Parameter(_))));
        assert!(sample_family(&FamilySpec::Remark52 { gamma: -1.0 }, &g).is_err());
        let err: std::result::Result<FamilySpec, _> = serde_json::from_str(r#"{"family":"nope"}"#);
        assert!(err.is_err());
    }

    #[test]
    fn cell_average_matches_quadrature() {
        let fine: f64 = (0..100_000).map(|k| ((k as f64 + 0.5) / 100_000.0 * 0.25 + 0.25f64).powf(-0.9)).sum::<f64>() / 100_000.0;
        assert!((power_cell_average(0.25, 0.5, -0.9) - fine).abs() < 1e-9);
        // straddling zero
        let v = power_cell_average(-1.0, 1.0, 0.5);
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn serde_names() {
        let s: FamilySpec = serde_json::from_str(r#"{"family":"remark-5.2","gamma":0.25}"#).unwrap();
        assert_eq!(s, FamilySpec::Remark52 { gamma: 0.25 });
        let s: FamilySpec = serde_json::from_str(r#"{"family":"example-7-balance-failure","alpha":0.9}"#).unwrap();
        assert_eq!(s, FamilySpec::BalanceFailure { alpha: 0.9, sampling: Sampling::CellAverage });
    }
}
