//! Mappings of finite distortion: Jacobian data, the distortion tensor and
//! distortion functions, the identities linking them to matrix weights, and
//! the continuity-set pipeline.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balance::{admissible_pair_report, exponent_condition, AdmissibleReport, ExponentCondition};
use crate::error::{Error, Result};
use crate::field::{MatrixGen, ScalarField, ScalarGen, SpdField};
use crate::grid::{Grid, Region};
use crate::maximal::{continuity_set, dyadic_radii, pair_maximal_with, weak_type_check, ContinuityMask, WeakTypeReport};
use crate::spd::{eig2_general, spectral_norm, sym2_eigen, symmetrize, Mat};
use crate::sum::Kahan;
use crate::weight_char::{lauzon_treil_a2, reverse_holder, scalar_ap, CharacteristicEstimate, CubeFamily, LauzonTreilReport};

pub type PointMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type DerivativeMap = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;

/// A closed-form mapping with its derivative.
#[derive(Clone)]
pub struct AnalyticMap {
    pub name: String,
    pub f: PointMap,
    pub df: DerivativeMap,
}

impl fmt::Debug for AnalyticMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AnalyticMap({})", self.name)
    }
}

/// Sampled mapping `f: Ω → R^n`, one point per cell.
#[derive(Clone, Debug)]
pub struct MappingField {
    pub grid: Grid,
    pub values: Vec<f64>,
    analytic: Option<AnalyticMap>,
}

impl MappingField {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let n = grid.n();
        if values.len() != grid.len() * n {
            return Err(Error::GridMismatch);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("mapping value at cell {} is not finite", i / n)));
        }
        Ok(MappingField { grid, values, analytic: None })
    }

    pub fn analytic(grid: &Grid, map: AnalyticMap) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len() * n);
        let mut x = vec![0.0; n];
        for i in 0..grid.len() {
            grid.center_into(i, &mut x);
            values.extend((map.f)(&x));
        }
        MappingField { grid: grid.clone(), values, analytic: Some(map) }
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn at(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn analytic_map(&self) -> Option<&AnalyticMap> {
        self.analytic.as_ref()
    }

    pub fn without_analytic(mut self) -> Self {
        self.analytic = None;
        self
    }

    /// Re-sample on another grid; only closed-form mappings can.
    pub fn on_grid(&self, target: &Grid) -> Result<MappingField> {
        match &self.analytic {
            Some(m) => Ok(MappingField::analytic(target, m.clone())),
            None => Err(Error::Parameter("sampled mappings cannot be re-sampled".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug)]
pub struct JacobianData {
    pub df: Vec<Mat>,
    pub j: ScalarField,
    /// Domain cells with `J ≤ 0` or a non-finite derivative.
    pub violations: Vec<usize>,
    pub mode: DerivativeMode,
}

/// Jacobian with the analytic derivative when the mapping has one.
pub fn jacobian(f: &MappingField) -> JacobianData {
    let mode = if f.analytic.is_some() { DerivativeMode::Analytic } else { DerivativeMode::FiniteDifference };
    jacobian_with(f, mode).expect("mode matches the mapping")
}

pub fn jacobian_with(f: &MappingField, mode: DerivativeMode) -> Result<JacobianData> {
    let g = &f.grid;
    let n = g.n();
    let df: Vec<Mat> = match mode {
        DerivativeMode::Analytic => {
            let map = f.analytic.as_ref().ok_or_else(|| Error::Parameter("mapping has no analytic derivative".into()))?;
            let mut x = vec![0.0; n];
            (0..g.len())
                .map(|i| {
                    g.center_into(i, &mut x);
                    (map.df)(&x)
                })
                .collect()
        }
        DerivativeMode::FiniteDifference => {
            if g.cells().iter().any(|&c| c < 3) {
                return Err(Error::UnderResolved("finite differences need 3 cells per axis".into()));
            }
            (0..g.len()).map(|i| fd_derivative(f, i)).collect()
        }
    };
    let mut violations = vec![];
    let j: Vec<f64> = df
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let d = m.det();
            if g.is_active(i) && !(d > 0.0 && d.is_finite()) {
                violations.push(i);
            }
            d
        })
        .collect();
    Ok(JacobianData { df, j: ScalarField::new(g.clone(), j)?, violations, mode })
}

/// Centred differences, one-sided on the edges of the sampled box.
fn fd_derivative(f: &MappingField, i: usize) -> Mat {
    let g = &f.grid;
    let n = g.n();
    let mi = g.multi(i);
    let mut m = Mat::zeros(n);
    for a in 0..n {
        let s = g.stride(a);
        let h = g.h(a);
        let (lo, hi, scale) = if mi[a] == 0 {
            (i, i + s, h)
        } else if mi[a] + 1 == g.cells()[a] {
            (i - s, i, h)
        } else {
            (i - s, i + s, 2.0 * h)
        };
        for c in 0..n {
            m.set(c, a, (f.values[hi * n + c] - f.values[lo * n + c]) / scale);
        }
    }
    m
}

/// Real eigenvalues of a 2×2 derivative, descending.
pub fn df_eigenvalues(df: &Mat) -> (f64, f64) {
    eig2_general(df)
}

/// Singular values `(σ_max, σ_min)` of a derivative.
pub fn singular_extremes(df: &Mat) -> (f64, f64) {
    let g = df.transpose().mul(df);
    if df.d == 2 {
        let (l1, _, _, _) = sym2_eigen(g.a[0], 0.5 * (g.a[1] + g.a[2]), g.a[3]);
        let smax = l1.max(0.0).sqrt();
        return (smax, df.det().abs() / smax);
    }
    let e = crate::spd::spd_decompose(&symmetrize(&g)).expect("symmetric");
    (e.values[0].max(0.0).sqrt(), e.values[df.d - 1].max(0.0).sqrt())
}

/// `(K_O, K_I)` at one cell.
pub fn distortion_at(df: &Mat, j: f64) -> (f64, f64) {
    let n = df.d as i32;
    let (smax, smin) = singular_extremes(df);
    (smax.powi(n) / j, j / smin.powi(n))
}

/// `G = J^{-2/n} DfᵗDf`.
pub fn tensor_at(df: &Mat, j: f64) -> Mat {
    symmetrize(&df.transpose().mul(df)).scale(j.powf(-2.0 / df.d as f64))
}

/// `(G, W = G^{-n/2})`; violation cells carry the identity.
pub fn distortion_tensor(jd: &JacobianData) -> Result<(SpdField, SpdField)> {
    let g = &jd.j.grid;
    let n = g.n();
    let mut bad = vec![false; g.len()];
    for &i in &jd.violations {
        bad[i] = true;
    }
    let gm: Vec<Mat> = (0..g.len())
        .map(|i| if bad[i] || !(jd.j.values[i] > 0.0) { Mat::identity(n) } else { tensor_at(&jd.df[i], jd.j.values[i]) })
        .collect();
    let gf = SpdField::from_matrices(g.clone(), gm)?;
    let w = gf.power_field(-(n as f64) / 2.0)?;
    Ok((gf, w))
}

/// `(K_O, K_I, K_M)`; violation cells are NaN.
pub fn distortion_functions(jd: &JacobianData) -> (ScalarField, ScalarField, ScalarField) {
    let g = &jd.j.grid;
    let mut bad = vec![false; g.len()];
    for &i in &jd.violations {
        bad[i] = true;
    }
    let mut ko = vec![f64::NAN; g.len()];
    let mut ki = vec![f64::NAN; g.len()];
    for i in 0..g.len() {
        let j = jd.j.values[i];
        if !bad[i] && j > 0.0 {
            let (o, inn) = distortion_at(&jd.df[i], j);
            ko[i] = o;
            ki[i] = inn;
        }
    }
    let km: Vec<f64> = ko.iter().zip(&ki).map(|(a, b)| a.max(*b)).collect();
    let mk = |v| ScalarField::new(g.clone(), v).expect("shape");
    (mk(ko), mk(ki), mk(km))
}

#[derive(Clone, Debug)]
pub struct DistortionReport {
    pub df: Vec<Mat>,
    pub j: ScalarField,
    pub k_o: ScalarField,
    pub k_i: ScalarField,
    pub k_m: ScalarField,
    pub g: SpdField,
    pub w: SpdField,
    pub violation_cells: Vec<usize>,
    pub mode: DerivativeMode,
    /// Max relative error of `|W^{-1}|_op = K_O` and `|W|_op = K_I`.
    pub w_consistency: f64,
    /// Max relative error of `det G = 1`.
    pub det_g_error: f64,
}

impl DistortionReport {
    pub fn n(&self) -> usize {
        self.j.grid.n()
    }

    /// Domain cells that are not violations.
    pub fn valid_cells(&self) -> Vec<usize> {
        let g = &self.j.grid;
        let mut bad = vec![false; g.len()];
        for &i in &self.violation_cells {
            bad[i] = true;
        }
        (0..g.len()).filter(|&i| g.is_active(i) && !bad[i]).collect()
    }

    /// The grid with violation cells removed from the domain.
    pub fn masked_grid(&self) -> Result<Grid> {
        if self.violation_cells.is_empty() {
            return Ok(self.j.grid.clone());
        }
        let mut w = self.j.grid.weights();
        for &i in &self.violation_cells {
            w[i] = 0.0;
        }
        self.j.grid.clone().with_fractions(w)
    }
}

pub fn analyze(f: &MappingField) -> Result<DistortionReport> {
    let mode = if f.analytic.is_some() { DerivativeMode::Analytic } else { DerivativeMode::FiniteDifference };
    analyze_with(f, mode)
}

pub fn analyze_with(f: &MappingField, mode: DerivativeMode) -> Result<DistortionReport> {
    let jd = jacobian_with(f, mode)?;
    let (g, w) = distortion_tensor(&jd)?;
    let (k_o, k_i, k_m) = distortion_functions(&jd);
    let mut report = DistortionReport {
        df: jd.df,
        j: jd.j,
        k_o,
        k_i,
        k_m,
        g,
        w,
        violation_cells: jd.violations,
        mode,
        w_consistency: 0.0,
        det_g_error: 0.0,
    };
    let mut wc: f64 = 0.0;
    let mut dg: f64 = 0.0;
    for i in report.valid_cells() {
        let ev = report.w.eigenvalues(i);
        let (top, bottom) = (ev[0], ev[ev.len() - 1]);
        wc = wc.max(rel(1.0 / bottom, report.k_o.values[i])).max(rel(top, report.k_i.values[i]));
        dg = dg.max((report.g.matrix(i).det() - 1.0).abs());
    }
    report.w_consistency = wc;
    report.det_g_error = dg;
    Ok(report)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainRow {
    pub chain: String,
    pub checked: usize,
    pub failing_cells: Vec<usize>,
    /// Largest relative excess of the left side over the right.
    pub max_excess: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainTable {
    pub rows: Vec<ChainRow>,
    pub pass: bool,
}

const CHAIN_SLACK: f64 = 1e-8;

fn chain_row(name: &str, cells: &[usize], lhs: impl Fn(usize) -> f64, rhs: impl Fn(usize) -> f64) -> ChainRow {
    let mut failing = vec![];
    let mut worst = f64::NEG_INFINITY;
    for &i in cells {
        let (a, b) = (lhs(i), rhs(i));
        let excess = (a - b) / b.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(excess);
        if !(excess <= CHAIN_SLACK) {
            failing.push(i);
        }
    }
    ChainRow { chain: name.into(), checked: cells.len(), failing_cells: failing, max_excess: worst }
}

/// The inequalities between `K_O`, `K_I`, `K_M` at every valid cell.
pub fn distortion_inequality_check(report: &DistortionReport, n: usize) -> ChainTable {
    let cells = report.valid_cells();
    let (ko, ki, km) = (&report.k_o.values, &report.k_i.values, &report.k_m.values);
    let e = n as i32 - 1;
    let rows = vec![
        chain_row("1 <= K_O", &cells, |_| 1.0, |i| ko[i]),
        chain_row("1 <= K_I", &cells, |_| 1.0, |i| ki[i]),
        chain_row("K_O <= K_I^(n-1)", &cells, |i| ko[i], |i| ki[i].powi(e)),
        chain_row("K_I <= K_O^(n-1)", &cells, |i| ki[i], |i| ko[i].powi(e)),
        chain_row("K_I <= K_M", &cells, |i| ki[i], |i| km[i]),
        chain_row("K_M <= K_I^(n-1)", &cells, |i| km[i], |i| ki[i].powi(e)),
        chain_row("K_O <= K_M", &cells, |i| ko[i], |i| km[i]),
        chain_row("K_M <= K_O^(n-1)", &cells, |i| km[i], |i| ko[i].powi(e)),
    ];
    let pass = rows.iter().all(|r| r.failing_cells.is_empty());
    ChainTable { rows, pass }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityViolation {
    pub cell: usize,
    pub xi: Vec<f64>,
    pub chain: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MfdEllipticityReport {
    pub trials: usize,
    pub violations: Vec<EllipticityViolation>,
    /// Smallest relative margin seen over all chains.
    pub tightest_margin: f64,
    pub pass: bool,
}

/// Checks at seeded random cells and unit directions:
/// `K_M^{-1} ≤ q ≤ K_M`, `K_O^{-1} ≤ q ≤ K_O^{n-1}`, `K_I^{1-n} ≤ q ≤ K_I`
/// with `q = |W^{1/n} ξ|^n`.
pub fn mfd_ellipticity_check(report: &DistortionReport, trials: usize, seed: u64) -> Result<MfdEllipticityReport> {
    let n = report.n();
    let cells = report.valid_cells();
    if cells.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = vec![];
    let mut tight = f64::INFINITY;
    let e = n as f64;
    for _ in 0..trials {
        let i = cells[rng.gen_range(0..cells.len())];
        let mut xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        xi.iter_mut().for_each(|v| *v /= norm);
        let m = report.w.power_at(i, 2.0 / e);
        let q = m.apply(&xi).iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>().powf(e / 2.0);
        let (ko, ki, km) = (report.k_o.values[i], report.k_i.values[i], report.k_m.values[i]);
        let chains = [
            ("maximal", 1.0 / km, km),
            ("outer", 1.0 / ko, ko.powf(e - 1.0)),
            ("inner", ki.powf(1.0 - e), ki),
        ];
        for (name, lo, hi) in chains {
            let margin = ((q - lo) / lo).min((hi - q) / hi);
            tight = tight.min(margin);
            if margin < -CHAIN_SLACK {
                violations.push(EllipticityViolation { cell: i, xi: xi.clone(), chain: name.into() });
            }
        }
    }
    let pass = violations.is_empty();
    Ok(MfdEllipticityReport { trials, violations, tightest_margin: tight, pass })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyIdentity {
    /// `∫ |W^{1/n} ∇f_i|^n`.
    pub lhs: f64,
    /// `∫ ⟨G^{-1} ∇f_i, ∇f_i⟩^{n/2}`.
    pub middle: f64,
    /// `∫ J`.
    pub rhs: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Both sides of the energy identity for component `i` over a region,
/// with the shared midpoint quadrature. Violation cells are left out.
pub fn energy_identity_check(report: &DistortionReport, region: &Region, component: usize) -> Result<EnergyIdentity> {
    let g = &report.j.grid;
    let n = g.n();
    if component >= n {
        return Err(Error::Parameter(format!("component {component} out of range")));
    }
    let mut bad = vec![false; g.len()];
    for &i in &report.violation_cells {
        bad[i] = true;
    }
    let e = n as f64;
    let (mut l, mut m, mut r) = (Kahan::new(), Kahan::new(), Kahan::new());
    let mut hit = false;
    region.for_each_cell(g, |i| {
        if bad[i] {
            return;
        }
        hit = true;
        let wt = g.weight(i);
        let grad: Vec<f64> = (0..n).map(|a| report.df[i].get(component, a)).collect();
        let quad = |mat: &Mat| mat.apply(&grad).iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>();
        l.add(wt * quad(&report.w.power_at(i, 2.0 / e)).powf(e / 2.0));
        m.add(wt * quad(&report.g.power_at(i, -1.0)).powf(e / 2.0));
        r.add(wt * report.j.values[i]);
    });
    if !hit {
        return Err(Error::EmptyRegion);
    }
    let vol = g.cell_volume();
    let (lhs, middle, rhs) = (l.value() * vol, m.value() * vol, r.value() * vol);
    let gap = rel(lhs, rhs).max(rel(middle, rhs));
    let tolerance = match report.mode {
        DerivativeMode::Analytic => 1e-8,
        DerivativeMode::FiniteDifference => 1e-2,
    };
    Ok(EnergyIdentity { lhs, middle, rhs, gap, tolerance, pass: gap < tolerance })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrobeniusReport {
    pub checked: usize,
    pub failing_cells: Vec<usize>,
    /// Largest `|Df W^{1/n}|_op^n / (n^{n/2} J)`.
    pub max_ratio: f64,
    pub pass: bool,
}

/// `|Df · W^{1/n}|_op^n ≤ n^{n/2} J` at every valid cell.
pub fn frobenius_bound_check(report: &DistortionReport) -> FrobeniusReport {
    let n = report.n();
    let e = n as f64;
    let bound = e.powf(e / 2.0);
    let mut failing = vec![];
    let mut worst: f64 = 0.0;
    let cells = report.valid_cells();
    for &i in &cells {
        let a = report.df[i].mul(&report.w.power_at(i, 1.0 / e));
        let lhs = spectral_norm(&a).powi(n as i32);
        let ratio = lhs / (bound * report.j.values[i]);
        worst = worst.max(ratio);
        if ratio > 1.0 + CHAIN_SLACK {
            failing.push(i);
        }
    }
    FrobeniusReport { checked: cells.len(), pass: failing.is_empty(), failing_cells: failing, max_ratio: worst }
}

/// Scalar fields from a per-cell function of `(Df, J)`, with a generator
/// when the derivative is closed form and there are no violations.
fn derived_scalar(f: &MappingField, report: &DistortionReport, grid: &Grid, values: Vec<f64>, k: fn(&Mat) -> f64) -> Result<ScalarField> {
    match (&f.analytic, report.mode, report.violation_cells.is_empty()) {
        (Some(map), DerivativeMode::Analytic, true) => {
            let df = map.df.clone();
            let gen: ScalarGen = Arc::new(move |g: &Grid| {
                let mut x = vec![0.0; g.n()];
                (0..g.len())
                    .map(|i| {
                        g.center_into(i, &mut x);
                        k(&df(&x))
                    })
                    .collect()
            });
            let mut s = ScalarField::from_gen(grid, gen);
            s.values = values;
            Ok(s)
        }
        _ => ScalarField::new(grid.clone(), values),
    }
}

fn k_outer(df: &Mat) -> f64 {
    let j = df.det();
    if j > 0.0 {
        distortion_at(df, j).0
    } else {
        1.0
    }
}

fn k_inner(df: &Mat) -> f64 {
    let j = df.det();
    if j > 0.0 {
        distortion_at(df, j).1
    } else {
        1.0
    }
}

fn weight_tensor(f: &MappingField, report: &DistortionReport, grid: &Grid) -> Result<SpdField> {
    match (&f.analytic, report.mode, report.violation_cells.is_empty()) {
        (Some(map), DerivativeMode::Analytic, true) => {
            let df = map.df.clone();
            let gen: MatrixGen = Arc::new(move |g: &Grid| {
                let mut x = vec![0.0; g.n()];
                let n = g.n();
                (0..g.len())
                    .map(|i| {
                        g.center_into(i, &mut x);
                        let d = df(&x);
                        let j = d.det();
                        if j > 0.0 {
                            crate::spd::matrix_power(&tensor_at(&d, j), -(n as f64) / 2.0).unwrap_or_else(|_| Mat::identity(n))
                        } else {
                            Mat::identity(n)
                        }
                    })
                    .collect()
            });
            SpdField::from_gen(grid, gen)
        }
        _ => {
            let mats = (0..report.w.len()).map(|i| report.w.matrix(i)).collect();
            SpdField::from_matrices(grid.clone(), mats)
        }
    }
}

/// The scalar pair `(K_O^{-1}, K_I)` and the distortion weight `W` on the
/// masked grid; non-finite cells are filled with 1 (identity for `W`).
pub fn distortion_weights(f: &MappingField, report: &DistortionReport) -> Result<(ScalarField, ScalarField, SpdField)> {
    let grid = report.masked_grid()?;
    let fill = |v: &ScalarField, inv: bool| -> Vec<f64> {
        v.values.iter().map(|&x| if x.is_finite() { if inv { 1.0 / x } else { x } } else { 1.0 }).collect()
    };
    let w = derived_scalar(f, report, &grid, fill(&report.k_o, true), |d| 1.0 / k_outer(d))?;
    let v = derived_scalar(f, report, &grid, fill(&report.k_i, false), k_inner)?;
    let wt = weight_tensor(f, report, &grid)?;
    Ok((w, v, wt))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityConfig {
    /// Dyadic levels for the cube family; `None` uses the grid default.
    pub levels: Option<usize>,
    pub directions: usize,
    /// Balance exponents; empty means a ladder around the predicted q.
    pub q_grid: Vec<f64>,
    pub radius_start: f64,
    pub lambdas: Vec<f64>,
    pub stability_tol: f64,
    pub seed: u64,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        ContinuityConfig {
            levels: None,
            directions: 64,
            q_grid: vec![],
            radius_start: 0.5,
            lambdas: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            stability_tol: crate::maximal::STABILITY_TOL,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub mode: DerivativeMode,
    pub violation_cells: Vec<usize>,
    pub k_o_range: (f64, f64),
    pub k_i_range: (f64, f64),
    pub exponents: (f64, f64),
    pub exponent_condition: ExponentCondition,
    pub a_t: CharacteristicEstimate,
    pub rh_s: CharacteristicEstimate,
    pub lauzon_treil: Option<LauzonTreilReport>,
    pub admissible: AdmissibleReport,
    pub radii: Vec<f64>,
    pub continuity: ContinuityMask,
    pub continuity_fraction: f64,
    pub weak_type: WeakTypeReport,
    /// `K_O^{-1} ∈ A_t`, `K_I ∈ RH_s` and the pair admissible.
    pub hypotheses_hold: bool,
}

fn range(f: &ScalarField, cells: &[usize]) -> (f64, f64) {
    cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(f.values[i]), b.max(f.values[i])))
}

/// Distortion functions → pair `(K_O^{-1}, K_I)` → `A_t`, `RH_s`, the
/// matrix `A_2` test of the distortion weight, `n`-admissibility, and the
/// continuity set of the pair maximal function.
pub fn mfd_continuity_report(f: &MappingField, t: f64, s: f64, config: &ContinuityConfig) -> Result<ContinuityReport> {
    let report = analyze(f)?;
    mfd_continuity_from(f, &report, t, s, config)
}

pub fn mfd_continuity_from(f: &MappingField, report: &DistortionReport, t: f64, s: f64, config: &ContinuityConfig) -> Result<ContinuityReport> {
    let n = report.n();
    let valid = report.valid_cells();
    if valid.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let (w, v, wt) = distortion_weights(f, report)?;
    let grid = w.grid.clone();
    let family = match config.levels {
        Some(l) => CubeFamily::with_levels(l),
        None => CubeFamily::for_grid(&grid),
    };
    let a_t = scalar_ap(&w, t, &family)?;
    let rh_s = reverse_holder(&v, s, &family)?;
    let lauzon_treil = if n == 2 {
        Some(lauzon_treil_a2(&wt, &family, config.directions)?)
    } else {
        None
    };
    let p = n as f64;
    let cond = exponent_condition(t, s, p, n, None);
    let q_grid = if config.q_grid.is_empty() {
        let q0 = cond.q.filter(|q| q.is_finite() && *q > p).unwrap_or(2.0 * p);
        [0.75, 1.0, 1.5, 2.0].iter().map(|k| q0 * k).filter(|q| *q > p).collect()
    } else {
        config.q_grid.clone()
    };
    let admissible = admissible_pair_report(&w, &v, p, &family, &q_grid, config.seed)?;
    let radii = dyadic_radii(&grid, config.radius_start);
    let pm = pair_maximal_with(&w, &v, &radii, config.stability_tol)?;
    let continuity = continuity_set(&pm);
    let active = (0..grid.len()).filter(|&i| grid.is_active(i)).count();
    let continuity_fraction = continuity.count() as f64 / active as f64;
    let weak_type = weak_type_check(&w, &v, &pm.m, &config.lambdas)?;
    let hypotheses_hold = a_t.is_finite() && rh_s.is_finite() && admissible.all_hold;
    Ok(ContinuityReport {
        mode: report.mode,
        violation_cells: report.violation_cells.clone(),
        k_o_range: range(&report.k_o, &valid),
        k_i_range: range(&report.k_i, &valid),
        exponents: (t, s),
        exponent_condition: cond,
        a_t,
        rh_s,
        lauzon_treil,
        admissible,
        radii: pm.radii.clone(),
        continuity,
        continuity_fraction,
        weak_type,
        hypotheses_hold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{ball_map, ball_map_distortion, ball_map_singular_values, conformal_square, perturbed_identity, scaling_map};
    use crate::grid::Ball;

    fn disk(n: usize) -> Grid {
        Grid::cube(2, -1.0, 1.0, n).unwrap().with_ball_domain(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn identity_and_scaling() {
        let g = Grid::unit_square(8).unwrap();
        for (c, mode) in [(1.0, DerivativeMode::Analytic), (2.0, DerivativeMode::Analytic), (2.0, DerivativeMode::FiniteDifference)] {
            let f = MappingField::analytic(&g, scaling_map(c, 2));
            let r = analyze_with(&f, mode).unwrap();
            assert!(r.violation_cells.is_empty());
            for i in 0..g.len() {
                assert!((r.j.values[i] - c * c).abs() < 1e-12);
                assert!((r.k_o.values[i] - 1.0).abs() < 1e-12);
                assert!((r.k_i.values[i] - 1.0).abs() < 1e-12);
                assert!(r.g.matrix(i).frobenius_dist(&Mat::identity(2)) < 1e-12);
                assert!(r.w.matrix(i).frobenius_dist(&Mat::identity(2)) < 1e-12);
            }
        }
    }

    #[test]
    fn ball_map_at_quarter() {
        let x = [0.25, 0.0];
        let d = (ball_map().df)(&x);
        assert!((d.det() - 6.0).abs() < 1e-12);
        let (ko, ki) = distortion_at(&d, d.det());
        assert!((ko - 6.0).abs() < 1e-12 && (ki - 6.0).abs() < 1e-12);
        let v = (ball_map().f)(&x);
        assert!((v[0] - 1.5).abs() < 1e-15 && v[1] == 0.0);
        // finite differences at the same point
        let h = 1e-4;
        let fx = |a: f64, b: f64| (ball_map().f)(&[a, b]);
        let mut m = Mat::zeros(2);
        for c in 0..2 {
            m.set(c, 0, (fx(0.25 + h, 0.0)[c] - fx(0.25 - h, 0.0)[c]) / (2.0 * h));
            m.set(c, 1, (fx(0.25, h)[c] - fx(0.25, -h)[c]) / (2.0 * h));
        }
        assert!((m.det() - 6.0).abs() < 1e-3);
    }

    #[test]
    fn ball_map_closed_forms_on_disk() {
        let g = disk(64);
        let f = MappingField::analytic(&g, ball_map());
        let r = analyze(&f).unwrap();
        assert!(r.violation_cells.is_empty());
        assert!(r.det_g_error < 1e-8 && r.w_consistency < 1e-8);
        for i in r.valid_cells() {
            let x = g.center(i);
            let rad = x[0].hypot(x[1]);
            let (m1, m2) = ball_map_singular_values(rad);
            let (e1, e2) = df_eigenvalues(&r.df[i]);
            assert!(rel(e1, m1.max(m2)) < 1e-10 && rel(e2, m1.min(m2)) < 1e-10);
            assert!(rel(r.k_o.values[i], ball_map_distortion(rad)) < 1e-8);
            // W eigenvalues are the reciprocals of J^{-1} μ_i²
            let j = m1 * m2;
            let ev = r.w.eigenvalues(i);
            let lam1 = rad.sqrt() / (2.0 * (1.0 + rad.sqrt()));
            assert!(rel(j / (m1 * m1), 1.0 / lam1) < 1e-10);
            assert!(rel(ev[0], 1.0 / lam1) < 1e-8);
            assert!(rel(ev[1], lam1) < 1e-8);
        }
    }

    #[test]
    fn n2_outer_equals_inner_on_random_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a = Mat::from_rows(&[&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)], &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]]);
            let j = a.det();
            if j <= 1e-3 {
                continue;
            }
            let (ko, ki) = distortion_at(&a, j);
            // independent K_I from the explicit inverse
            let inv = a.inverse().unwrap();
            let ki_direct = spectral_norm(&inv).powi(2) * j;
            assert!(rel(ki, ki_direct) < 1e-8);
            assert!(rel(ko, ki) < 1e-8);
        }
    }

    #[test]
    fn conformal_square_is_trivial() {
        let g = Grid::cube(2, 0.5, 1.5, 16).unwrap();
        let f = MappingField::analytic(&g, conformal_square());
        let r = analyze(&f).unwrap();
        for i in 0..g.len() {
            let x = g.center(i);
            assert!(rel(r.j.values[i], 4.0 * (x[0] * x[0] + x[1] * x[1])) < 1e-12);
            assert!(r.g.matrix(i).frobenius_dist(&Mat::identity(2)) < 1e-12);
            assert!((r.k_o.values[i] - 1.0).abs() < 1e-12);
        }
        let fr = frobenius_bound_check(&r);
        assert!(fr.pass && (fr.max_ratio - 0.5).abs() < 1e-12);
        let e = energy_identity_check(&r, &Region::Domain, 0).unwrap();
        assert!(e.pass);
    }

    #[test]
    fn chains_hold_for_registered_maps() {
        let g = Grid::unit_square(24).unwrap();
        for map in [perturbed_identity(0.08), scaling_map(1.0, 2)] {
            let f = MappingField::analytic(&g, map);
            for mode in [DerivativeMode::Analytic, DerivativeMode::FiniteDifference] {
                let r = analyze_with(&f, mode).unwrap();
                assert!(distortion_inequality_check(&r, 2).pass);
                assert!(mfd_ellipticity_check(&r, 500, 1).unwrap().pass);
                assert!(frobenius_bound_check(&r).pass);
            }
        }
        let r = analyze(&MappingField::analytic(&disk(32), ball_map())).unwrap();
        assert!(distortion_inequality_check(&r, 2).pass);
        assert!(mfd_ellipticity_check(&r, 2000, 3).unwrap().pass);
    }

    #[test]
    fn energy_identity_on_annulus() {
        let g = disk(64);
        let r = analyze(&MappingField::analytic(&g, ball_map())).unwrap();
        let ann = Region::Annulus { center: vec![0.0, 0.0], inner: 0.3, outer: 0.7 };
        for c in 0..2 {
            let e = energy_identity_check(&r, &ann, c).unwrap();
            assert!(e.gap < 1e-8, "{e:?}");
        }
        let b = Region::Ball(Ball::new(vec![0.5, 0.0], 0.2));
        assert!(energy_identity_check(&r, &b, 1).unwrap().pass);
    }

    #[test]
    fn sampled_mappings() {
        let g = Grid::unit_square(4).unwrap();
        assert!(MappingField::from_values(g.clone(), vec![0.0; 3]).is_err());
        let mut v = vec![0.0; 32];
        v[5] = f64::NAN;
        assert!(MappingField::from_values(g.clone(), v).is_err());
        let f = MappingField::from_values(g.clone(), vec![0.0; 32]).unwrap();
        assert!(jacobian_with(&f, DerivativeMode::Analytic).is_err());
        let jd = jacobian(&f);
        assert_eq!(jd.violations.len(), 16);
        assert!(f.on_grid(&g).is_err());
    }
}
