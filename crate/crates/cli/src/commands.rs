use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use matweight::balance::{balance_scan_default, BalanceVerdict};
use matweight::families::{sample_family, Sampled};
use matweight::io::{columns_csv, scalar_csv, write_json, write_text, GridHeader};
use matweight::maximal::{continuity_set, dyadic_radii, pair_maximal_with, weak_type_check, STABILITY_TOL};
use matweight::mfd::{analyze_with, distortion_inequality_check, distortion_weights, frobenius_bound_check, mfd_continuity_from, ContinuityConfig, DerivativeMode};
use matweight::plap::{is_boundary, solve, weak_residual, DirichletProblem};
use matweight::weight_char::{a_infinity, a_star_ladder, derived_scalars, matrix_ap, reverse_holder, scalar_a1, scalar_ap, CharacteristicEstimate, CubeFamily, Verdict};
use matweight::{Grid, Mat, ScalarField, SpdField};

use crate::config::{pick, Settings};
use crate::CliError;

/// Where a command's files go. Without a run directory the report is
/// printed and rasters are dropped.
pub struct Output<'a> {
    pub dir: Option<&'a Path>,
}

impl Output<'_> {
    pub fn report(&self, value: &Value) -> Result<(), CliError> {
        match self.dir {
            Some(d) => {
                write_json(&d.join("report.json"), value)?;
                println!("wrote {}", d.join("report.json").display());
            }
            None => println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?),
        }
        Ok(())
    }

    pub fn file(&self, rel: &str, text: &str) -> Result<(), CliError> {
        if let Some(d) = self.dir {
            write_text(&d.join(rel), text)?;
        }
        Ok(())
    }

    pub fn header(&self, rel: &str, g: &Grid, columns: &[&str]) -> Result<(), CliError> {
        if let Some(d) = self.dir {
            write_json(&d.join(rel), &GridHeader::new(g, columns.iter().map(|s| s.to_string()).collect()))?;
        }
        Ok(())
    }
}

pub fn sample(s: &Settings) -> Result<(Grid, Sampled), CliError> {
    let g = s.family.default_grid(s.grid)?;
    let f = sample_family(&s.family, &g)?;
    Ok((g, f))
}

pub fn family_for(s: &Settings, g: &Grid) -> CubeFamily {
    match s.levels {
        Some(l) => CubeFamily::with_levels(l),
        None => CubeFamily::for_grid(g),
    }
}

/// The scalar pair `(w, v)` a family induces: the pair itself, the
/// eigenvalue weights of a matrix weight, `(f, f)` for a scalar weight, or
/// `(K_O^{-1}, K_I)` for a mapping.
pub fn scalar_pair(sampled: &Sampled) -> Result<(ScalarField, ScalarField), CliError> {
    Ok(match sampled {
        Sampled::Pair(p) => (p.w.clone(), p.v.clone()),
        Sampled::Scalar(f) => (f.clone(), f.clone()),
        Sampled::Matrix(w) => {
            let (v, lo) = derived_scalars(w);
            (lo, v)
        }
        Sampled::Mapping(f) => {
            let r = analyze_with(f, DerivativeMode::Analytic)?;
            let (w, v, _) = distortion_weights(f, &r)?;
            (w, v)
        }
    })
}

fn expect_verdict(expect: &Option<String>, got: &str) -> Result<bool, CliError> {
    match expect.as_deref() {
        None => Ok(true),
        Some(e @ ("finite" | "diverging" | "holds" | "fails")) => Ok(e == got),
        Some(e) => Err(CliError::Config(format!("field `expect`: unknown verdict '{e}'"))),
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Finite => "finite",
        Verdict::Diverging => "diverging",
    }
}

fn level_csv(e: &CharacteristicEstimate) -> String {
    let mut s = String::from("level,level_sup,per_level_sup,growth\n");
    for (l, (a, b)) in e.level_sup.iter().zip(&e.per_level_sup).enumerate() {
        let g = if l == 0 { String::new() } else { format!("{:?}", e.growth[l - 1]) };
        s.push_str(&format!("{l},{a:?},{b:?},{g}\n"));
    }
    s
}

#[derive(Clone, Debug)]
pub struct CharArgs {
    pub kind: Option<String>,
    pub p: f64,
    pub s: f64,
    pub weight: String,
    pub shifted: bool,
    pub expect: Option<String>,
}

/// Returns whether the `expect` check (if any) passed.
pub fn characteristic(set: &Settings, a: &CharArgs, out: &Output) -> Result<bool, CliError> {
    let (g, sampled) = sample(set)?;
    let fam = family_for(set, &g).shifted(a.shifted);
    let default_kind = if matches!(sampled, Sampled::Matrix(_)) { "matrix-ap" } else { "ap" };
    let kind = a.kind.clone().unwrap_or_else(|| default_kind.into());
    let mut ladder = None;
    let est = if kind == "matrix-ap" {
        let Sampled::Matrix(w) = &sampled else {
            return Err(CliError::Config(format!("kind matrix-ap needs a matrix family, '{}' is {}", set.family.name(), sampled.kind())));
        };
        matrix_ap(w, a.p, &fam)?
    } else {
        let (w, v) = scalar_pair(&sampled)?;
        let f = match a.weight.as_str() {
            "w" => w,
            "v" => v,
            other => return Err(CliError::Config(format!("field `weight`: expected w or v, got '{other}'"))),
        };
        match kind.as_str() {
            "ap" => scalar_ap(&f, a.p, &fam)?,
            "a1" => scalar_a1(&f, &fam)?,
            "rh" => reverse_holder(&f, a.s, &fam)?,
            "a-inf" => a_infinity(&f, &fam)?,
            "doubling" => matweight::balance::doubling_estimate(&f, &fam)?,
            // verdict of the finest rung q + 0.05, with every rung reported
            "a-star" => {
                let rungs = a_star_ladder(&f, a.p, &fam)?;
                let last = rungs.last().expect("ladder has rungs").estimate.clone();
                ladder = Some(rungs);
                last
            }
            other => return Err(CliError::Config(format!("field `kind`: unknown characteristic '{other}' (ap, a1, rh, a-inf, doubling, a-star, matrix-ap)"))),
        }
    };
    let ok = expect_verdict(&a.expect, verdict_name(est.verdict))?;
    out.file("traces/levels.csv", &level_csv(&est))?;
    out.report(&json!({
        "command": "characteristic",
        "family": set.family,
        "grid": g.cells(),
        "seed": set.seed,
        "kind": kind,
        "estimate": est,
        "ladder": ladder,
        "expect": a.expect,
        "pass": ok,
    }))?;
    Ok(ok)
}

pub fn balance(set: &Settings, p: f64, q: f64, expect: &Option<String>, out: &Output) -> Result<bool, CliError> {
    let (_, sampled) = sample(set)?;
    let (w, v) = scalar_pair(&sampled)?;
    let r = balance_scan_default(&w, &v, p, q, set.seed)?;
    let verdict = if r.verdict == BalanceVerdict::Holds { "holds" } else { "fails" };
    let ok = expect_verdict(expect, verdict)?;
    let mut csv = String::from("center,radius,r,ratio\n");
    for t in &r.traces {
        let c = t.center.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for (rr, ratio) in &t.rows {
            csv.push_str(&format!("{c},{:?},{rr:?},{ratio:?}\n", t.radius));
        }
    }
    out.file("traces/balance.csv", &csv)?;
    out.report(&json!({ "command": "balance", "family": set.family, "seed": set.seed, "report": r, "expect": expect, "pass": ok }))?;
    Ok(ok)
}

pub fn maximal(set: &Settings, radius_start: f64, tol: f64, out: &Output) -> Result<bool, CliError> {
    let (_, sampled) = sample(set)?;
    let (w, v) = scalar_pair(&sampled)?;
    let g = w.grid.clone();
    let radii = dyadic_radii(&g, radius_start);
    let pm = pair_maximal_with(&w, &v, &radii, tol)?;
    let cs = continuity_set(&pm);
    let weak = weak_type_check(&w, &v, &pm.m, &[2.0, 4.0, 8.0, 16.0, 32.0])?;
    let active = (0..g.len()).filter(|&i| g.is_active(i)).count();
    let stable: Vec<f64> = pm.stable.iter().map(|&b| b as u8 as f64).collect();
    out.header("rasters/maximal.json", &g, &["M", "stable"])?;
    out.file("rasters/maximal.csv", &columns_csv(&g, &[("M", &pm.m.values), ("stable", &stable)])?)?;
    out.report(&json!({
        "command": "maximal",
        "family": set.family,
        "radii": pm.radii,
        "tolerance": tol,
        "active_cells": active,
        "continuity_cells": cs.count(),
        "continuity_fraction": cs.count() as f64 / active as f64,
        "excluded": cs.excluded.len(),
        "weak_type": weak,
    }))?;
    Ok(true)
}

pub fn mfd(set: &Settings, t: f64, s: f64, mode: DerivativeMode, radius_start: f64, out: &Output) -> Result<bool, CliError> {
    let (_, sampled) = sample(set)?;
    let Sampled::Mapping(f) = sampled else {
        return Err(CliError::Config(format!("mfd needs a mapping family, '{}' is not one", set.family.name())));
    };
    let f = if mode == DerivativeMode::FiniteDifference { f.without_analytic() } else { f };
    let report = analyze_with(&f, mode)?;
    let chains = distortion_inequality_check(&report, report.n());
    let frob = frobenius_bound_check(&report);
    let cfg = ContinuityConfig { levels: set.levels, seed: set.seed, radius_start, ..Default::default() };
    let cont = mfd_continuity_from(&f, &report, t, s, &cfg)?;
    let g = report.masked_grid()?;
    let mask: Vec<f64> = cont.continuity.mask.iter().map(|&b| b as u8 as f64).collect();
    out.header("rasters/distortion.json", &g, &["J", "K_O", "K_I", "continuity"])?;
    out.file("rasters/distortion.csv", &columns_csv(&g, &[("J", &report.j.values), ("K_O", &report.k_o.values), ("K_I", &report.k_i.values), ("continuity", &mask)])?)?;
    out.report(&json!({
        "command": "mfd",
        "family": set.family,
        "mode": mode,
        "det_g_error": report.det_g_error,
        "w_consistency": report.w_consistency,
        "chains": chains,
        "frobenius": frob,
        "continuity": cont,
    }))?;
    Ok(chains.pass && frob.pass)
}

#[derive(Clone, Debug)]
pub struct SolveArgs {
    pub p: f64,
    pub boundary: String,
    pub epsilons: Option<Vec<f64>>,
    pub max_iter: Option<usize>,
}

/// `n×n` weight for the solver: matrix families as is, scalar weights
/// times the identity, mappings through their distortion weight.
fn solver_weight(sampled: &Sampled) -> Result<SpdField, CliError> {
    Ok(match sampled {
        Sampled::Matrix(w) => w.clone(),
        Sampled::Scalar(f) => {
            let n = f.grid.n();
            let mats = f.values.iter().map(|&v| Mat::identity(n).scale(v)).collect();
            SpdField::from_matrices(f.grid.clone(), mats)?
        }
        Sampled::Pair(_) => return Err(CliError::Config("solve needs a matrix or scalar weight, not a pair".into())),
        Sampled::Mapping(f) => {
            let r = analyze_with(f, DerivativeMode::Analytic)?;
            distortion_weights(f, &r)?.2
        }
    })
}

#[derive(Serialize)]
struct Bounds {
    boundary_min: f64,
    boundary_max: f64,
    u_min: f64,
    u_max: f64,
    within: bool,
}

pub fn run_solve(set: &Settings, a: &SolveArgs, out: &Output) -> Result<bool, CliError> {
    let (g, sampled) = sample(set)?;
    let w = solver_weight(&sampled)?;
    let bd = crate::expr::field(&g, &a.boundary)?;
    let mut problem = DirichletProblem::new(w.clone(), a.p, bd.clone())?;
    if let Some(e) = &a.epsilons {
        problem = problem.with_epsilons(e.clone());
    }
    if let Some(m) = a.max_iter {
        problem.max_iter = m;
    }
    problem.validate()?;
    let r = solve(&problem)?;
    let u = r.solution();
    let ring: Vec<f64> = (0..g.len()).filter(|&i| is_boundary(&g, i)).map(|i| bd.values[i]).collect();
    let (bmin, bmax) = ring.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (umin, umax) = u.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let bounds = Bounds { boundary_min: bmin, boundary_max: bmax, u_min: umin, u_max: umax, within: umin >= bmin - 1e-9 && umax <= bmax + 1e-9 };
    let residual = weak_residual(u, &w, a.p, 16)?;
    out.header("rasters/u.json", &g, &["u"])?;
    out.file("rasters/u.csv", &scalar_csv(u, "u"))?;
    let mut trace = String::from("iteration,energy\n");
    for (k, e) in r.energy_trace.iter().enumerate() {
        trace.push_str(&format!("{k},{e:?}\n"));
    }
    out.file("traces/energy.csv", &trace)?;
    let ok = r.converged && bounds.within;
    out.report(&json!({
        "command": "solve",
        "family": set.family,
        "p": a.p,
        "boundary": a.boundary,
        "result": r,
        "weak_residual_test_basis": residual,
        "bounds": bounds,
        "pass": ok,
    }))?;
    Ok(ok)
}

pub fn mode(name: &str) -> Result<DerivativeMode, CliError> {
    match name {
        "analytic" => Ok(DerivativeMode::Analytic),
        "finite-difference" | "fd" => Ok(DerivativeMode::FiniteDifference),
        other => Err(CliError::Config(format!("field `mode`: expected analytic or finite-difference, got '{other}'"))),
    }
}

pub fn defaults_tol(file: &Option<f64>, flag: &Option<f64>) -> f64 {
    pick(flag, file, STABILITY_TOL)
}
