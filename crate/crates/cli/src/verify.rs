//! Check bundles for the registered examples.

use serde::Serialize;

use matweight::balance::{balance_scan_default, BalanceVerdict};
use matweight::families::{ball_map, ball_map_distortion, ball_map_singular_values, sample_family, FamilySpec, Sampled, Sampling};
use matweight::mfd::{analyze_with, df_eigenvalues, distortion_inequality_check, energy_identity_check, mfd_continuity_from, ContinuityConfig, DerivativeMode, MappingField};
use matweight::plap::{solve, weak_residual, DirichletProblem};
use matweight::weight_char::{derived_scalars, matrix_ap, CubeFamily, Verdict, VerdictRule};
use matweight::weighted_ops::{averaging_bound_check, lp_scalar_norm_pow, lp_w_norm_pow, mollifier_bound_and_convergence, random_disjoint_family};
use matweight::{Grid, Region, ScalarField, SpdField, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

pub const EXAMPLES: &[&str] = &["example-5.1", "example-7-balance-failure", "remark-5.2", "ball-map", "plap-harmonic"];

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Default)]
struct Bundle(Vec<Check>);

impl Bundle {
    fn add(&mut self, name: &str, pass: bool, detail: String) {
        self.0.push(Check { name: name.into(), pass, detail });
    }
}

fn matrix(spec: FamilySpec, g: &Grid) -> Result<SpdField, CliError> {
    match sample_family(&spec, g)? {
        Sampled::Matrix(m) => Ok(m),
        _ => unreachable!("registered matrix family"),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn gradient_x(g: &Grid, alpha: f64, p: f64, axis: usize) -> VectorField {
    let e = (alpha - 1.0) / p;
    VectorField::from_fn(g, 2, move |x| {
        let mut v = vec![0.0; 2];
        v[axis] = x[axis].powf(e);
        v
    })
}

fn example_51(seed: u64) -> Result<Bundle, CliError> {
    let mut b = Bundle::default();
    let spec = FamilySpec::Example51 { alpha: 0.5, sampling: Sampling::CellCenter };
    let g = Grid::unit_square(256)?;
    let w = matrix(spec.clone(), &g)?;
    let ap = matrix_ap(&w, 2.0, &CubeFamily::for_grid(&g))?;
    b.add("matrix A_2 finite", ap.verdict == Verdict::Finite, format!("sup {:.4}, growth {:.3?}", ap.value, ap.growth));

    let g512 = Grid::unit_square(512)?;
    let w512 = matrix(spec.clone(), &g512)?;
    let nf = lp_w_norm_pow(&gradient_x(&g512, 0.5, 2.0, 0), &w512, 2.0)?;
    b.add("||grad f||_W^2 = 2 within 2%", rel(nf, 2.0) <= 0.02, format!("{nf:.5}"));
    let mut seq = vec![];
    for k in 3..=9 {
        let gk = Grid::unit_square(1 << k)?;
        let (v, _) = derived_scalars(&matrix(spec.clone(), &gk)?);
        seq.push(lp_scalar_norm_pow(&gradient_x(&gk, 0.5, 2.0, 0), &v, 2.0)?);
    }
    let inc = seq.windows(2).all(|w| w[1] > w[0]);
    b.add(
        "||grad f||_v^2 increasing and diverging",
        inc && VerdictRule::default().judge(&seq) == Verdict::Diverging,
        format!("{seq:.3?}"),
    );

    let g64 = Grid::unit_square(64)?;
    let w64 = matrix(spec, &g64)?;
    let mut ok = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..20 {
        let f = VectorField::new(g64.clone(), 2, (0..2 * g64.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        ok += averaging_bound_check(&f, &w64, 2.0, &random_disjoint_family(&g64, seed + k))?.pass as usize;
    }
    b.add("averaging bound on 20 seeded pairs", ok == 20, format!("{ok}/20"));

    let ts: Vec<f64> = (2..=6).map(|k| 0.5f64.powi(k)).collect();
    let tr = mollifier_bound_and_convergence(&gradient_x(&g, 0.5, 2.0, 0), &w, 2.0, &ts, Some(ap.value), 0.05)?;
    b.add("mollifier bounded and converging", tr.pass, format!("sup ratio {:.4}, final deviation {:.4}", tr.sup_ratio, tr.final_deviation));
    Ok(b)
}

fn balance_failure(seed: u64) -> Result<Bundle, CliError> {
    let mut b = Bundle::default();
    let g = Grid::unit_square(256)?;
    for (alpha, p, q, want) in [(0.9, 1.5, 2.0, BalanceVerdict::Fails), (0.5, 2.0, 3.0, BalanceVerdict::Holds)] {
        let Sampled::Pair(pair) = sample_family(&FamilySpec::BalanceFailure { alpha, sampling: Sampling::CellAverage }, &g)? else {
            unreachable!("registered pair family")
        };
        let r = balance_scan_default(&pair.w, &pair.v, p, q, seed)?;
        let slope = (2.0 - 2.0 * alpha) / q + 1.0 - 2.0 / p;
        b.add(
            &format!("alpha={alpha} p={p} q={q}: slope and verdict"),
            (r.loglog_slope - slope).abs() <= 0.05 && r.verdict == want,
            format!("slope {:.4} vs {slope:.4}, {:?}", r.loglog_slope, r.verdict),
        );
    }
    Ok(b)
}

fn remark_52() -> Result<Bundle, CliError> {
    let mut b = Bundle::default();
    for (gamma, want) in [(0.25, Verdict::Finite), (0.75, Verdict::Diverging)] {
        let spec = FamilySpec::Remark52 { gamma };
        let g = spec.default_grid(256)?;
        let e = matrix_ap(&matrix(spec, &g)?, 2.0, &CubeFamily::with_levels(8))?;
        b.add(&format!("gamma={gamma}: {want:?}"), e.verdict == want, format!("sup {:.4}, growth {:.3?}", e.value, e.growth));
    }
    Ok(b)
}

fn ball(seed: u64) -> Result<Bundle, CliError> {
    let mut b = Bundle::default();
    let g = FamilySpec::BallMap.default_grid(256)?;
    let f = MappingField::analytic(&g, ball_map());
    let r = analyze_with(&f, DerivativeMode::Analytic)?;
    let (mut eig, mut k): (f64, f64) = (0.0, 0.0);
    for i in r.valid_cells() {
        let x = g.center(i);
        let rad = x[0].hypot(x[1]);
        let (m1, m2) = ball_map_singular_values(rad);
        let (e1, e2) = df_eigenvalues(&r.df[i]);
        eig = eig.max(rel(e1, m1.max(m2))).max(rel(e2, m1.min(m2)));
        k = k.max(rel(r.k_o.values[i], ball_map_distortion(rad)));
    }
    b.add("no Jacobian violations", r.violation_cells.is_empty(), format!("{}", r.violation_cells.len()));
    b.add("eigenvalues match closed forms", eig <= 1e-10, format!("{eig:.2e}"));
    b.add("K_O = K_I = 2 + 2|x|^{-1/2}", k <= 1e-8, format!("{k:.2e}"));
    b.add("det G = 1", r.det_g_error <= 1e-8, format!("{:.2e}", r.det_g_error));
    let ann = Region::Annulus { center: vec![0.0, 0.0], inner: 0.3, outer: 0.7 };
    let e = energy_identity_check(&r, &ann, 0)?;
    b.add("energy identity on the annulus", e.gap <= 1e-8, format!("gap {:.2e}", e.gap));
    b.add("distortion inequalities", distortion_inequality_check(&r, 2).pass, String::new());

    let cfg = ContinuityConfig { seed, ..Default::default() };
    let lo = mfd_continuity_from(&f, &r, 1.2, 3.0, &cfg)?;
    let hi = mfd_continuity_from(&f, &r, 1.5, 4.5, &cfg)?;
    b.add("1/K_O not in A_1.2", lo.a_t.verdict == Verdict::Diverging, format!("{:.3?}", lo.a_t.growth));
    b.add("1/K_O in A_1.5", hi.a_t.verdict == Verdict::Finite, format!("{:.3?}", hi.a_t.growth));
    b.add("K_I in RH_3", lo.rh_s.verdict == Verdict::Finite, format!("{:.3?}", lo.rh_s.growth));
    b.add("K_I not in RH_4.5", hi.rh_s.verdict == Verdict::Diverging, format!("{:.3?}", hi.rh_s.growth));
    let (lt, detail) = match &hi.lauzon_treil {
        Some(l) => (
            l.verdict == Verdict::Finite && l.directions.len() >= 64,
            format!("{:?}, sup {:.3} at angle {:.3}; W and W^-1 average to multiples of I on origin squares", l.verdict, l.sup, l.worst_angle),
        ),
        None => (false, "not computed".into()),
    };
    b.add("distortion weight uniformly A_2 over 64 directions", lt, detail);
    let far: Vec<usize> = (0..g.len()).filter(|&i| g.is_active(i) && g.center(i)[0].hypot(g.center(i)[1]) > 0.1).collect();
    let cov = far.iter().filter(|&&i| hi.continuity.mask[i]).count() as f64 / far.len() as f64;
    let h = 128;
    let origin = [(h - 1, h - 1), (h, h - 1), (h - 1, h), (h, h)].iter().all(|&(x, y)| !hi.continuity.mask[y * 256 + x]);
    b.add("continuity set excludes the origin", origin, String::new());
    b.add("continuity set covers |x| > 0.1", cov >= 0.99, format!("{cov:.4}"));
    Ok(b)
}

fn plap_harmonic() -> Result<Bundle, CliError> {
    let mut b = Bundle::default();
    let g = Grid::unit_square(64)?;
    let w = SpdField::identity(&g, 2);
    let exact = ScalarField::from_fn(&g, |x| x[0] * x[0] - x[1] * x[1]);
    let r = solve(&DirichletProblem::new(w.clone(), 2.0, exact.clone())?)?;
    let err = r.solution().values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    b.add("sup error vs x^2 - y^2", err <= 1e-3, format!("{err:.2e}"));
    let res = weak_residual(r.solution(), &w, 2.0, 16)?;
    b.add("weak residual", res < 1e-6, format!("{res:.2e}"));
    b.add("energy trace nonincreasing", r.energy_trace.windows(2).all(|w| w[1] <= w[0]), String::new());
    Ok(b)
}

pub fn run(name: &str, seed: u64) -> Result<Vec<Check>, CliError> {
    let b = match name {
        "example-5.1" => example_51(seed)?,
        "example-7-balance-failure" => balance_failure(seed)?,
        "remark-5.2" => remark_52()?,
        "ball-map" => ball(seed)?,
        "plap-harmonic" => plap_harmonic()?,
        other => return Err(CliError::Config(format!("unknown example '{other}'; registered examples: {}", EXAMPLES.join(", ")))),
    };
    Ok(b.0)
}
