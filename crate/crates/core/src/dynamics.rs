//! Time evolution of marker charts.
//!
//! Markers follow the rays of the frequency `E_t`; phases integrate
//! `p qdot - E` along each ray; weight components obey the exact transport
//! law `rho mu = const` per marker; Maslov counters change when the local
//! projection onto `q` folds over.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    phase_coherence_residual, quantization_data, refine, sign, MarkerChart, PhasePoint,
};
use crate::symbol::DispersionSymbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    Midpoint,
    Variational,
}

/// Default half-width of the fold band around a vertical tangent. Projection
/// slopes are cosines, so the band is absolute.
pub const DEFAULT_FOLD_BAND: f64 = 1e-6;

const MIDPOINT_TOL: f64 = 1e-12;
const MIDPOINT_MAX_ITER: usize = 200;
const VARIATIONAL_TOL: f64 = 1e-13;
const VARIATIONAL_MAX_ITER: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSettings {
    pub scheme: Scheme,
    pub h: f64,
    pub t0: f64,
    pub t1: f64,
    /// Refine every this many steps; 0 disables refinement.
    #[serde(default)]
    pub refine_every: usize,
    #[serde(default = "default_max_spacing")]
    pub max_spacing: f64,
    /// Fold band used by the Maslov counter update.
    #[serde(default = "default_band")]
    pub caustic_threshold: f64,
    #[serde(default = "default_max_markers")]
    pub max_markers: usize,
    /// Keep every this many states in the trajectory (the final state is always kept).
    #[serde(default = "default_save_every")]
    pub save_every: usize,
}

fn default_max_spacing() -> f64 {
    0.05
}
fn default_band() -> f64 {
    DEFAULT_FOLD_BAND
}
fn default_max_markers() -> usize {
    200_000
}
fn default_save_every() -> usize {
    1
}

impl EvolveSettings {
    pub fn new(scheme: Scheme, h: f64, t0: f64, t1: f64) -> Self {
        EvolveSettings {
            scheme,
            h,
            t0,
            t1,
            refine_every: 0,
            max_spacing: default_max_spacing(),
            caustic_threshold: DEFAULT_FOLD_BAND,
            max_markers: default_max_markers(),
            save_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSettings(m.to_string()));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad("h must be positive");
        }
        if !(self.t1 > self.t0) {
            return bad("t1 must exceed t0");
        }
        if self.h > self.t1 - self.t0 {
            return bad("h must not exceed t1 - t0");
        }
        if self.refine_every > 0 && !(self.max_spacing > 0.0) {
            return bad("max_spacing must be positive when refining");
        }
        if !(self.caustic_threshold >= 0.0) {
            return bad("caustic_threshold must be >= 0");
        }
        if self.save_every == 0 {
            return bad("save_every must be >= 1");
        }
        Ok(())
    }

    /// Step start times `t0 + k h` and lengths; the last step is shortened to land on `t1`.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        let span = self.t1 - self.t0;
        let full = (span / self.h * (1.0 + 1e-12)).floor() as usize;
        let mut out = Vec::with_capacity(full + 1);
        for k in 0..full {
            let a = self.t0 + k as f64 * self.h;
            let b = if k + 1 == full
                && (self.t0 + full as f64 * self.h - self.t1).abs() <= 1e-12 * span
            {
                self.t1
            } else {
                self.t0 + (k + 1) as f64 * self.h
            };
            out.push((a, b - a));
        }
        let reached = out.last().map_or(self.t0, |(a, h)| a + h);
        if reached < self.t1 && self.t1 - reached > 1e-12 * span {
            out.push((reached, self.t1 - reached));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub p_phi: f64,
    pub energy: f64,
    pub coherence: f64,
    pub bs_residual: Option<f64>,
    pub n_markers: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MarkerChart>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn last(&self) -> &MarkerChart {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }
}

/// `(p_phi, energy)` of a chart: `sum rho m` and `-sum E rho m` over node masses.
pub fn conserved_quantities(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
) -> Result<(f64, f64)> {
    let data = frequency_table(chart, symbol, t)?;
    let masses = chart.node_masses();
    let mut p_phi = 0.0;
    let mut energy = 0.0;
    for ((e, rho), m) in data.iter().zip(&masses) {
        p_phi += rho * m;
        energy -= e * rho * m;
    }
    Ok((p_phi, energy))
}

/// `(E, rho)` at every marker, in marker order.
pub fn frequency_table(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
) -> Result<Vec<(f64, f64)>> {
    first_error(
        chart
            .points
            .par_iter()
            .map(|z| {
                let fd = symbol.frequency_data(&[z.q], &[z.p], t)?;
                Ok((fd.e, fd.rho))
            })
            .collect(),
    )
}

/// Deterministic error selection: the lowest failing marker wins.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| Error::at_marker(i, e))?);
    }
    Ok(out)
}

pub fn diagnostics(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
) -> Result<StepDiagnostics> {
    let (p_phi, energy) = conserved_quantities(chart, symbol, t)?;
    let bs_residual = if chart.is_circle() {
        Some(quantization_data(chart)?.bs_residual)
    } else {
        None
    };
    Ok(StepDiagnostics {
        t,
        p_phi,
        energy,
        coherence: phase_coherence_residual(chart),
        bs_residual,
        n_markers: chart.len(),
    })
}

#[derive(Debug, Clone, Copy)]
struct RayState {
    q: f64,
    p: f64,
    s: f64,
}

/// `(qdot, pdot, Sdot)` along the ray through `(q, p)`.
fn ray_rhs(symbol: &DispersionSymbol, q: f64, p: f64, t: f64) -> Result<(f64, f64, f64)> {
    let fd = symbol.frequency_data(&[q], &[p], t)?;
    let qd = fd.qdot[0];
    Ok((qd, fd.pdot[0], p * qd - fd.e))
}

fn rk4_ray(symbol: &DispersionSymbol, y: RayState, t: f64, h: f64) -> Result<RayState> {
    let k1 = ray_rhs(symbol, y.q, y.p, t)?;
    let k2 = ray_rhs(
        symbol,
        y.q + 0.5 * h * k1.0,
        y.p + 0.5 * h * k1.1,
        t + 0.5 * h,
    )?;
    let k3 = ray_rhs(
        symbol,
        y.q + 0.5 * h * k2.0,
        y.p + 0.5 * h * k2.1,
        t + 0.5 * h,
    )?;
    let k4 = ray_rhs(symbol, y.q + h * k3.0, y.p + h * k3.1, t + h)?;
    let c = h / 6.0;
    Ok(RayState {
        q: y.q + c * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        p: y.p + c * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        s: y.s + c * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
    })
}

/// Implicit midpoint for `(q, p)` by fixed-point iteration; the phase uses
/// the midpoint rule `S1 = S0 + pbar dq - h E(zbar)`.
fn midpoint_ray(symbol: &DispersionSymbol, y: RayState, t: f64, h: f64) -> Result<RayState> {
    let tm = t + 0.5 * h;
    let (qd, pd, _) = ray_rhs(symbol, y.q, y.p, t)?;
    let (mut q1, mut p1) = (y.q + h * qd, y.p + h * pd);
    for it in 0..MIDPOINT_MAX_ITER {
        let (qm, pm) = (0.5 * (y.q + q1), 0.5 * (y.p + p1));
        let (qd, pd, _) = ray_rhs(symbol, qm, pm, tm)?;
        let (nq, np) = (y.q + h * qd, y.p + h * pd);
        let delta = (nq - q1).abs().max((np - p1).abs());
        q1 = nq;
        p1 = np;
        if delta <= MIDPOINT_TOL * q1.abs().max(p1.abs()).max(1.0) {
            let (qm, pm) = (0.5 * (y.q + q1), 0.5 * (y.p + p1));
            let e = symbol.frequency(&[qm], &[pm], tm)?;
            return Ok(RayState {
                q: q1,
                p: p1,
                s: y.s + pm * (q1 - y.q) - h * e,
            });
        }
        if !delta.is_finite() || it + 1 == MIDPOINT_MAX_ITER {
            return Err(Error::NoConvergence {
                iterations: it + 1,
                residual: delta,
            });
        }
    }
    unreachable!()
}

/// Stationarity conditions of the per-marker discrete action.
fn variational_residual(
    symbol: &DispersionSymbol,
    y0: RayState,
    x: [f64; 3],
    t: f64,
    h: f64,
) -> [f64; 3] {
    let [q1, p1, s1] = x;
    let (qm, pm) = (0.5 * (y0.q + q1), 0.5 * (y0.p + p1));
    let tm = t + 0.5 * h;
    let k = (s1 - y0.s) / h - pm * (q1 - y0.q) / h;
    let (q, p) = ([qm], [pm]);
    let du = symbol.du(&q, &p, tm, k);
    [
        symbol.eval(&q, &p, tm, k),
        symbol.dp(&q, &p, tm, k)[0] - du * (q1 - y0.q) / h,
        symbol.dq(&q, &p, tm, k)[0] + du * (p1 - y0.p) / h,
    ]
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(m) / d;
    }
    Some(x)
}

fn variational_ray(symbol: &DispersionSymbol, y: RayState, t: f64, h: f64) -> Result<RayState> {
    // explicit Euler predictor
    let (qd, pd, sd) = ray_rhs(symbol, y.q, y.p, t)?;
    let mut x = [y.q + h * qd, y.p + h * pd, y.s + h * sd];
    let scale = |x: &[f64; 3]| x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut res = variational_residual(symbol, y, x, t, h);
    for it in 0..VARIATIONAL_MAX_ITER {
        let mut jac = [[0.0; 3]; 3];
        for c in 0..3 {
            let step = 1e-7 * x[c].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[c] += step;
            xm[c] -= step;
            let fp = variational_residual(symbol, y, xp, t, h);
            let fm = variational_residual(symbol, y, xm, t, h);
            for r in 0..3 {
                jac[r][c] = (fp[r] - fm[r]) / (2.0 * step);
            }
        }
        let dx = solve3(jac, [-res[0], -res[1], -res[2]]).ok_or(Error::NoConvergence {
            iterations: it,
            residual: res.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        })?;
        for c in 0..3 {
            x[c] += dx[c];
        }
        res = variational_residual(symbol, y, x, t, h);
        let step_norm = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step_norm <= VARIATIONAL_TOL * scale(&x) {
            return Ok(RayState {
                q: x[0],
                p: x[1],
                s: x[2],
            });
        }
        if !step_norm.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: VARIATIONAL_MAX_ITER,
        residual: res.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    })
}

fn advance(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    h: f64,
    scheme: Scheme,
    band: f64,
) -> Result<MarkerChart> {
    let advanced: Vec<Result<(RayState, f64)>> = (0..chart.len())
        .into_par_iter()
        .map(|i| {
            let z = chart.points[i];
            let y = RayState {
                q: z.q,
                p: z.p,
                s: chart.phases[i],
            };
            let rho0 = symbol.frequency_data(&[z.q], &[z.p], t)?.rho;
            let y1 = match scheme {
                Scheme::Rk4 => rk4_ray(symbol, y, t, h)?,
                Scheme::Midpoint => midpoint_ray(symbol, y, t, h)?,
                Scheme::Variational => variational_ray(symbol, y, t, h)?,
            };
            let rho1 = symbol.frequency_data(&[y1.q], &[y1.p], t + h)?.rho;
            Ok((y1, chart.weights[i] * rho0 / rho1))
        })
        .collect();
    let advanced = first_error(advanced)?;
    let mut out = chart.clone();
    for (i, (y, w)) in advanced.into_iter().enumerate() {
        out.points[i] = PhasePoint::new(y.q, y.p);
        out.phases[i] = y.s;
        out.weights[i] = w;
    }
    update_counters(chart, &mut out, band);
    Ok(out)
}

/// Apply the fold rule to every marker: a slope that leaves one side of the
/// band `|J| < tol` and enters the band or the other side counts once, with
/// sign `sign(dJ) * sign(dp)`, so each focus of a convex ray family adds `+1`.
fn update_counters(old: &MarkerChart, new: &mut MarkerChart, band: f64) {
    let n = old.len();
    let j_old: Vec<f64> = (0..n).map(|i| old.projection_slope(i)).collect();
    let j_new: Vec<f64> = (0..n).map(|i| new.projection_slope(i)).collect();
    let tol = band;
    for i in 0..n {
        let (a, b) = (j_old[i], j_new[i]);
        let crossed = (a > tol && b < tol) || (a < -tol && b > -tol);
        if crossed {
            let dp = new.dual_dp(i) + old.dual_dp(i);
            new.maslov[i] += sign(b - a) * sign(dp);
        }
    }
}

/// One step of length `h` from time `t`.
pub fn step(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    h: f64,
    scheme: Scheme,
) -> Result<MarkerChart> {
    advance(chart, symbol, t, h, scheme, DEFAULT_FOLD_BAND)
}

/// One step of the discrete variational integrator.
pub fn step_variational(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    h: f64,
) -> Result<MarkerChart> {
    advance(chart, symbol, t, h, Scheme::Variational, DEFAULT_FOLD_BAND)
}

pub fn evolve(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    settings: &EvolveSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    chart.validate()?;
    let schedule = settings.schedule();
    let mut current = chart.clone();
    let mut traj = Trajectory {
        times: vec![settings.t0],
        states: vec![current.clone()],
        diagnostics: vec![diagnostics(&current, symbol, settings.t0)?],
    };
    for (k, &(t, h)) in schedule.iter().enumerate() {
        current = advance(
            &current,
            symbol,
            t,
            h,
            settings.scheme,
            settings.caustic_threshold,
        )?;
        let steps_done = k + 1;
        if settings.refine_every > 0 && steps_done % settings.refine_every == 0 {
            current = refine(&current, settings.max_spacing);
        }
        if current.len() > settings.max_markers {
            return Err(Error::RefinementExplosion {
                count: current.len(),
                cap: settings.max_markers,
            });
        }
        let t_new = if steps_done == schedule.len() {
            settings.t1
        } else {
            t + h
        };
        traj.diagnostics.push(diagnostics(&current, symbol, t_new)?);
        if steps_done % settings.save_every == 0 || steps_done == schedule.len() {
            traj.times.push(t_new);
            traj.states.push(current.clone());
        }
    }
    Ok(traj)
}
