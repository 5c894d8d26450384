//! Subcommand implementations. Each returns its tables, a JSON payload and
//! diagnostics; independent sub-tasks run on the worker pool and are
//! collected in input order, so output does not depend on the pool size.

use degenheat::capacity::{self, Atom, DiscreteMeasure, LatticeSet};
use degenheat::dirichlet_bem::{solve_dirichlet, BoundaryMesh};
use degenheat::geometry::BoxDomain;
use degenheat::kernel::{Kernel, SpaceTimePoint};
use degenheat::meanvalue::{harnack_quotient, potential_monotonicity, solid_mean};
use degenheat::wiener::{verdicts_agree, wiener_sweep, Primitive};
use rayon::prelude::*;
use serde_json::json;

use crate::config::*;
use crate::output::*;

pub enum RunError {
    Config(String),
    Numeric(degenheat::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<degenheat::Error> for RunError {
    fn from(e: degenheat::Error) -> Self {
        use degenheat::Error as E;
        match e {
            E::Params(m) | E::Precondition(m) | E::Domain(m) | E::EmptySample(m) | E::Ambiguous(m) => RunError::Config(m),
            other => RunError::Numeric(other),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            RunError::Config(m) => format!("configuration error: {m}"),
            RunError::Numeric(e) => format!("numerical failure: {e}"),
        }
    }
}

pub struct Outcome {
    pub tables: Vec<Table>,
    pub payload: serde_json::Value,
    pub diagnostics: Vec<String>,
    /// Set when a check exceeded its tolerance.
    pub failed: bool,
}

impl Outcome {
    fn ok(tables: Vec<Table>, payload: serde_json::Value) -> Self {
        Self {
            tables,
            payload,
            diagnostics: Vec::new(),
            failed: false,
        }
    }
}

type R<T> = Result<T, RunError>;

fn block<'a, T>(b: &'a Option<T>, name: &str) -> R<&'a T> {
    b.as_ref().ok_or_else(|| RunError::Config(format!("missing \"{name}\" block")))
}

fn kernel_of(cfg: &RunConfig) -> R<Kernel> {
    Ok(Kernel::new(cfg.params.n, cfg.params.a)?)
}

pub fn kernel(cfg: &RunConfig) -> R<Outcome> {
    let b = block(&cfg.kernel, "kernel")?;
    let k = kernel_of(cfg)?;
    let n = cfg.params.n;
    let pole = cfg.point(&b.pole, "kernel.pole")?;
    let mut raw = b.points.clone();
    if let Some(g) = &b.grid {
        raw.extend(g.points(n)?);
    }
    if raw.is_empty() {
        return Err(RunError::Config("kernel: no points given".into()));
    }
    let points = cfg.points(&raw, "kernel.points")?;
    let mut header = indexed("x", n);
    header.push("t".into());
    header.push("gamma".into());
    header.extend(indexed("dgamma_dy", n));
    header.extend(["singular_axis", "ratio_lower", "ratio_upper", "ratio_sharp"].map(String::from));
    let mut table = Table::with_header("kernel", header);
    let rows: Vec<Vec<Cell>> = points
        .par_iter()
        .map(|p| {
            let mut row = point_cells(&p.coords, p.t);
            row.push(k.gamma(p, &pole).into());
            let g = k.grad_y(p, &pole);
            row.extend(g.components.iter().map(|&v| Cell::Num(v)));
            row.push(g.singular_axis.into());
            match k.bounds_sandwich(p, &pole) {
                Ok(s) if s.value > 0.0 => {
                    row.extend([s.value / s.lower, s.value / s.upper, s.value / s.sharp].map(Cell::Num));
                }
                _ => row.extend([Cell::Empty, Cell::Empty, Cell::Empty]),
            }
            row
        })
        .collect();
    for r in rows {
        table.push(r);
    }
    let payload = json!({ "points": points.len(), "pole": b.pole });
    Ok(Outcome::ok(vec![table], payload))
}

fn default_mass_points(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (xp, x, t) in [(0.1, 0.2, 0.5), (0.0, 0.0, 1.0), (-0.4, -0.7, 0.2), (0.3, 1.5, 2.0)] {
        let mut p = vec![xp; n - 1];
        p.push(x);
        p.push(t);
        out.push(p);
    }
    out
}

fn default_residual_cases(n: usize) -> Vec<ResidualCase> {
    let case = |xp: f64, x: f64, t: f64, yp: f64, y: f64| {
        let mut point = vec![xp; n - 1];
        point.extend([x, t]);
        let mut pole = vec![yp; n - 1];
        pole.extend([y, 0.0]);
        ResidualCase { point, pole, h: 0.08 }
    };
    vec![case(0.2, 0.9, 1.0, 0.0, 0.5), case(0.1, -0.8, 0.7, 0.3, -0.4), case(0.4, 1.2, 1.5, -0.2, 0.8)]
}

pub fn check(cfg: &RunConfig, tol: Option<f64>) -> R<Outcome> {
    let b = cfg.check.clone().unwrap_or_default();
    let tol = tol.unwrap_or(b.tol);
    positive(tol, "check.tol")?;
    let k = kernel_of(cfg)?;
    let n = cfg.params.n;
    let scale = 1.0 + b.perturb;
    let mass_pts = b.mass.clone().unwrap_or_else(|| default_mass_points(n));
    let semi = b
        .semigroup
        .clone()
        .unwrap_or_else(|| vec![[0.3, -0.2, 0.4, 0.7], [1.0, -0.5, 0.5, 0.5], [0.0, 0.0, 0.5, 0.5]]);
    let cases = b.residual.clone().unwrap_or_else(|| default_residual_cases(n));
    if mass_pts.is_empty() && semi.is_empty() && cases.is_empty() {
        return Err(RunError::Config("check: every list is empty".into()));
    }
    let quad_tol = (0.01 * tol).min(1e-10);

    let mut header = indexed("x", n);
    header.extend(["t", "mass", "error", "pass"].map(String::from));
    let mut mass_table = Table::with_header("check_mass", header);
    let pts = cfg.points(&mass_pts, "check.mass")?;
    let masses = pts
        .par_iter()
        .map(|p| k.mass_integral(&p.coords, p.t, quad_tol).map(|m| scale * m))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut failures = 0;
    for (p, m) in pts.iter().zip(&masses) {
        let err = (m - 1.0).abs();
        let pass = err <= tol;
        failures += usize::from(!pass);
        let mut row = point_cells(&p.coords, p.t);
        row.extend([Cell::Num(*m), Cell::Num(err), pass.into()]);
        mass_table.push(row);
    }

    let mut semi_table = Table::new("check_semigroup", &["x", "eta", "t", "s", "residual", "pass"]);
    let parts = semi
        .par_iter()
        .map(|&[x, eta, t, s]| k.semigroup_parts(x, eta, t, s, quad_tol))
        .collect::<Result<Vec<_>, _>>()?;
    for (&[x, eta, t, s], (exact, composed)) in semi.iter().zip(&parts) {
        let res = (scale * exact - scale * scale * composed).abs() / (scale * exact);
        let pass = res <= tol;
        failures += usize::from(!pass);
        semi_table.push(vec![x.into(), eta.into(), t.into(), s.into(), res.into(), pass.into()]);
    }

    let mut header = indexed("x", n);
    header.push("t".into());
    header.extend(indexed("y", n));
    header.extend(["tau", "h", "residual_h", "residual_h2", "order", "pass"].map(String::from));
    let mut res_table = Table::with_header("check_residual", header);
    for c in &cases {
        let xi = cfg.point(&c.point, "check.residual.point")?;
        let zeta = cfg.point(&c.pole, "check.residual.pole")?;
        positive(c.h, "check.residual.h")?;
        if xi.t <= zeta.t || xi.x() == 0.0 {
            return Err(RunError::Config("check.residual: need t > tau and x != 0".into()));
        }
        let r1 = k.equation_residual_fd(&xi, &zeta, c.h);
        let r2 = k.equation_residual_fd(&xi, &zeta, 0.5 * c.h);
        let order = (r1 / r2).log2();
        let pass = order >= b.min_order;
        failures += usize::from(!pass);
        let mut row = point_cells(&xi.coords, xi.t);
        row.extend(point_cells(&zeta.coords, zeta.t));
        row.extend([c.h.into(), r1.into(), r2.into(), order.into(), pass.into()]);
        res_table.push(row);
    }
    let total = mass_table.rows.len() + semi_table.rows.len() + res_table.rows.len();
    let payload = json!({
        "tol": tol,
        "min_order": b.min_order,
        "perturb": b.perturb,
        "checks": total,
        "failures": failures,
    });
    let mut out = Outcome::ok(vec![mass_table, semi_table, res_table], payload);
    if failures > 0 {
        out.diagnostics.push(format!("{failures} of {total} checks exceeded tolerance"));
        out.failed = true;
    }
    Ok(out)
}

pub fn dirichlet(cfg: &RunConfig, tol: Option<f64>) -> R<Outcome> {
    let b = block(&cfg.dirichlet, "dirichlet")?;
    let k = kernel_of(cfg)?;
    let n = cfg.params.n;
    cfg.spatial(&b.lo, "dirichlet.lo")?;
    cfg.spatial(&b.hi, "dirichlet.hi")?;
    let mut opts = b.solver;
    if let Some(t) = tol {
        opts.tol = t;
    }
    positive(opts.tol, "dirichlet.solver.tol")?;
    let q = BoxDomain::new(b.lo.clone(), b.hi.clone(), b.t_end)?;
    let mesh = BoundaryMesh::new(q, b.cells.clone(), b.steps)?;
    let probes = cfg.points(&b.probes, "dirichlet.probes")?;
    if probes.is_empty() {
        return Err(RunError::Config("dirichlet: no probes".into()));
    }
    let pole = match &b.data {
        BoundaryDataSpec::Gamma { pole } => Some(cfg.point(pole, "dirichlet.data.pole")?),
        BoundaryDataSpec::Constant { .. } => None,
    };
    let data = |z: &SpaceTimePoint| -> f64 {
        match (&b.data, &pole) {
            (BoundaryDataSpec::Constant { value }, _) => *value,
            (_, Some(p)) => k.gamma(z, p),
            _ => unreachable!("pole is set for Gamma data"),
        }
    };
    let mut meshes = vec![mesh];
    if b.refine {
        let fine = meshes[0].refined()?;
        meshes.push(fine);
    }
    let mut header = indexed("x", n);
    header.extend(["t", "u", "exact", "rel_error"].map(String::from));
    if b.refine {
        header.extend(["u_refined", "rel_error_refined"].map(String::from));
    }
    let mut table = Table::with_header("dirichlet", header);
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut solves = Vec::new();
    let mut u0_values = Vec::new();
    for (i, m) in meshes.iter().enumerate() {
        let sol = solve_dirichlet(&k, m, &data, opts)?;
        let vals = probes.par_iter().map(|p| sol.eval(p)).collect::<Result<Vec<f64>, _>>()?;
        columns.push(vals);
        solves.push(json!({
            "cells": m.cells,
            "steps": m.steps,
            "panels": m.num_panels(),
            "contraction_ratio": sol.density.contraction_ratio,
            "max_single_ratio": sol.density.max_single_ratio,
            "global_sweeps": sol.density.global_sweeps,
            "inner_sweeps": sol.density.inner_sweeps,
            "residual": sol.density.residual,
        }));
        if i == 0 && !b.u0.is_empty() {
            let pts = cfg.points(&b.u0, "dirichlet.u0")?;
            for p in pts {
                u0_values.push((p.clone(), sol.layer.u0(&p)?));
            }
        }
    }
    let rel = |u: f64, e: f64| if e != 0.0 { ((u - e) / e).abs() } else { (u - e).abs() };
    let mut max_err = vec![0.0f64; columns.len()];
    for (j, p) in probes.iter().enumerate() {
        let exact = data(p);
        let mut row = point_cells(&p.coords, p.t);
        row.extend([columns[0][j].into(), exact.into(), rel(columns[0][j], exact).into()]);
        max_err[0] = max_err[0].max(rel(columns[0][j], exact));
        if b.refine {
            let e = rel(columns[1][j], exact);
            max_err[1] = max_err[1].max(e);
            row.extend([columns[1][j].into(), e.into()]);
        }
        table.push(row);
    }
    let mut tables = vec![table];
    if !u0_values.is_empty() {
        let mut header = indexed("x", n);
        header.extend(["t", "u0"].map(String::from));
        let mut t = Table::with_header("dirichlet_u0", header);
        for (p, v) in &u0_values {
            let mut row = point_cells(&p.coords, p.t);
            row.push((*v).into());
            t.push(row);
        }
        tables.push(t);
    }
    let order = (max_err.len() == 2 && max_err[1] > 0.0).then(|| (max_err[0] / max_err[1]).log2());
    let payload = json!({
        "solves": solves,
        "max_rel_error": max_err,
        "observed_order": order,
    });
    Ok(Outcome::ok(tables, payload))
}

/// Flat-set oracle when the set is a single box at one time level.
fn flat_oracle(k: &Kernel, b: &CapacityBlock) -> Option<f64> {
    match (b.set.primitives.as_slice(), b.set.ops.is_empty()) {
        ([Primitive::Box { lo, hi, t }], true) if t[0] == t[1] && b.t[0] == b.t[1] && b.t[0] == t[0] => {
            Some(capacity::flat_set_capacity(k, lo, hi))
        }
        _ => None,
    }
}

pub fn capacity(cfg: &RunConfig, tol: Option<f64>) -> R<Outcome> {
    let b = block(&cfg.capacity, "capacity")?;
    let k = kernel_of(cfg)?;
    let n = cfg.params.n;
    cfg.spatial(&b.lo, "capacity.lo")?;
    cfg.spatial(&b.hi, "capacity.hi")?;
    b.set.validate(n)?;
    positive(b.ht, "capacity.ht")?;
    let tol = tol.unwrap_or(b.tol);
    positive(tol, "capacity.tol")?;
    if b.cells == 0 || b.t[1] < b.t[0] {
        return Err(RunError::Config("capacity: need cells > 0 and t[0] <= t[1]".into()));
    }
    let contains = |z: &SpaceTimePoint| b.set.closure_contains(z);
    let set = LatticeSet {
        lo: b.lo.clone(),
        hi: b.hi.clone(),
        t_lo: b.t[0],
        t_hi: b.t[1],
        contains: &contains,
    };
    let (payload, measure) = if b.refine {
        let r = capacity::refined_capacity(&k, &set, b.cells, b.ht, tol)?;
        let p = json!({
            "coarse": r.coarse,
            "fine": r.fine,
            "richardson": r.richardson,
            "h": r.h,
            "max_constraint_violation": r.max_constraint_violation,
        });
        (p, r.equilibrium)
    } else {
        let (r, h) = capacity::lattice_capacity(&k, &set, b.cells, b.ht, tol)?;
        let p = json!({
            "capacity": r.cap_estimate,
            "h": h,
            "constraints": r.constraints,
            "max_constraint_violation": r.max_constraint_violation,
        });
        (p, r.equilibrium)
    };
    let mut payload = payload;
    if let Some(exact) = flat_oracle(&k, b) {
        let est = payload.get("richardson").or(payload.get("capacity")).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        payload["flat_oracle"] = json!(exact);
        payload["oracle_rel_gap"] = json!((est - exact).abs() / exact);
    }
    payload["atoms"] = json!(measure.atoms.len());
    let mut header = indexed("x", n);
    header.extend(["t", "mass", "half_width"].map(String::from));
    let mut table = Table::with_header("capacity_equilibrium", header);
    for a in &measure.atoms {
        let mut row = point_cells(&a.point.coords, a.point.t);
        row.extend([a.mass.into(), a.half_width.into()]);
        table.push(row);
    }
    Ok(Outcome::ok(vec![table], payload))
}

pub fn wiener(cfg: &RunConfig, tol: Option<f64>) -> R<Outcome> {
    let b = block(&cfg.wiener, "wiener")?;
    let k = kernel_of(cfg)?;
    let xi0 = cfg.point(&b.point, "wiener.point")?;
    let mut opts = b.options;
    if let Some(t) = tol {
        opts.lp_tol = t;
    }
    if b.lambdas.is_empty() {
        return Err(RunError::Config("wiener: lambdas is empty".into()));
    }
    let reports = wiener_sweep(&k, &xi0, &b.lambdas, &b.domain, &opts)?;
    let mut table = Table::new("wiener", &["lambda", "k", "cap", "weight", "term", "partial_sum", "atoms"]);
    for r in &reports {
        for (t, s) in r.terms.iter().zip(&r.partial_sums) {
            table.push(vec![
                r.lambda.into(),
                (t.k as usize).into(),
                t.cap.into(),
                t.weight.into(),
                t.term.into(),
                (*s).into(),
                t.atoms.into(),
            ]);
        }
    }
    let summary: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            json!({
                "lambda": r.lambda,
                "verdict": r.verdict,
                "theta_div": r.theta_div,
                "tail_mean": r.tail_mean,
                "fitted_ratio": r.fitted_ratio,
                "fit_r2": r.fit_r2,
            })
        })
        .collect();
    let agree = verdicts_agree(&reports);
    let mut out = Outcome::ok(
        vec![table],
        json!({ "options": opts, "reports": summary, "verdicts_agree": agree }),
    );
    if !agree {
        out.diagnostics.push("verdicts differ across lambda".into());
    }
    Ok(out)
}

type Func<'a> = Box<dyn Fn(&SpaceTimePoint) -> f64 + Sync + 'a>;

fn function<'a>(cfg: &RunConfig, k: &'a Kernel, spec: &FunctionSpec) -> R<(Func<'a>, Option<DiscreteMeasure>)> {
    match spec {
        FunctionSpec::Solution { constant, poles } => {
            let ps = poles
                .iter()
                .map(|p| Ok((cfg.point(&p.pole, "function.poles")?, p.weight)))
                .collect::<Result<Vec<_>, ConfigError>>()?;
            let c = *constant;
            Ok((Box::new(move |z| c + ps.iter().map(|(p, w)| w * k.gamma(z, p)).sum::<f64>()), None))
        }
        FunctionSpec::Potential { atoms } => {
            let mu = DiscreteMeasure {
                atoms: atoms
                    .iter()
                    .map(|a| {
                        if a.mass < 0.0 || a.half_width < 0.0 {
                            return Err(ConfigError("atoms need nonnegative mass and half-width".into()));
                        }
                        Ok(Atom {
                            point: cfg.point(&a.point, "function.atoms")?,
                            mass: a.mass,
                            half_width: a.half_width,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            let m = mu.clone();
            Ok((
                Box::new(move |z| capacity::potential_of_measure(k, &m, z).unwrap_or(f64::NAN)),
                Some(mu),
            ))
        }
    }
}

pub fn meanvalue(cfg: &RunConfig, tol: Option<f64>) -> R<Outcome> {
    let b = block(&cfg.meanvalue, "meanvalue")?;
    let k = kernel_of(cfg)?;
    let xi0 = cfg.point(&b.point, "meanvalue.point")?;
    if b.radii.is_empty() || b.radii.iter().any(|r| !(*r > 0.0)) {
        return Err(RunError::Config("meanvalue: radii must be positive and nonempty".into()));
    }
    let (u, measure) = function(cfg, &k, &b.function)?;
    let tol = tol.unwrap_or(b.tol);
    if let Some(mu) = measure {
        let rep = potential_monotonicity(&k, &mu, &xi0, &b.radii, tol, b.options)?;
        let mut table = Table::new("meanvalue", &["r", "mean", "center_value"]);
        for (r, m) in rep.radii.iter().zip(&rep.means) {
            table.push(vec![(*r).into(), (*m).into(), rep.center_value.into()]);
        }
        let mut out = Outcome::ok(vec![table], serde_json::to_value(&rep).expect("report serializes"));
        if !rep.monotone {
            out.diagnostics.push("means are not monotone within tolerance".into());
        }
        return Ok(out);
    }
    let means = b
        .radii
        .par_iter()
        .map(|&r| solid_mean(&k, &u, &xi0, r, b.options))
        .collect::<Result<Vec<f64>, _>>()?;
    let center = u(&xi0);
    let mut table = Table::new("meanvalue", &["r", "mean", "center_value", "rel_error"]);
    let mut worst = 0.0f64;
    for (r, m) in b.radii.iter().zip(&means) {
        let e = ((m - center) / center).abs();
        worst = worst.max(e);
        table.push(vec![(*r).into(), (*m).into(), center.into(), e.into()]);
    }
    Ok(Outcome::ok(
        vec![table],
        json!({ "center_value": center, "means": means, "max_rel_error": worst, "options": b.options }),
    ))
}

pub fn harnack(cfg: &RunConfig) -> R<Outcome> {
    let b = block(&cfg.harnack, "harnack")?;
    let k = kernel_of(cfg)?;
    positive(b.r, "harnack.r")?;
    if b.levels.is_empty() {
        return Err(RunError::Config("harnack: levels is empty".into()));
    }
    let (u, _) = function(cfg, &k, &b.function)?;
    let reports = b
        .levels
        .iter()
        .map(|&lv| harnack_quotient(&k, b.r, &u, lv))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new("harnack", &["level", "average", "infimum", "quotient", "samples"]);
    for rep in &reports {
        table.push(vec![
            rep.level.into(),
            rep.average.into(),
            rep.infimum.into(),
            rep.quotient.into(),
            rep.samples.into(),
        ]);
    }
    let qs: Vec<f64> = reports.iter().map(|r| r.quotient).collect();
    let spread = qs.iter().cloned().fold(0.0, f64::max) / qs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut payload = json!({ "quotients": qs, "spread": spread });
    if let Some(l) = b.scale {
        positive(l, "harnack.scale")?;
        let lv = *b.levels.iter().max().expect("levels nonempty");
        let scaled = |z: &SpaceTimePoint| {
            u(&SpaceTimePoint::from_coords(z.coords.iter().map(|v| l.sqrt() * v).collect(), l * z.t))
        };
        let qs = harnack_quotient(&k, b.r, &scaled, lv)?.quotient;
        let qu = harnack_quotient(&k, l * b.r, &u, lv)?.quotient;
        payload["scaling_gap"] = json!(((qs - qu) / qu).abs());
    }
    let mut out = Outcome::ok(vec![table], payload);
    if qs.iter().any(|q| !q.is_finite()) {
        out.diagnostics.push("quotient is not finite: the infimum vanishes".into());
    }
    Ok(out)
}
