//! Hamiltonian structure of the chart dynamics: the one-form, its exterior
//! derivative, the cotangent pairing, the Poisson bracket, Hamiltonian
//! vector fields and the frozen-in law.
//!
//! Tangent vectors are represented by a phase-space generator `dg` (markers
//! move along its Hamiltonian vector field), per-marker density changes
//! `dmu` and a base-phase change `dphi`. Integrals over the curve are the
//! label trapezoid rule, matching the rest of the crate. The Poisson bracket
//! of phase-space functions is `{f, g} = f_q g_p - f_p g_q`, so that
//! `X_g[f] = {f, g}` with `X_g = (g_p, -g_q)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{conserved_quantities, evolve, EvolveSettings, Scheme};
use crate::error::{Error, Result};
use crate::manifold::{MarkerChart, PhasePoint};
use crate::symbol::{DispersionSymbol, RhoJet};

/// Value and first partials `(f, f_q, f_p)`.
pub type Jet = (f64, f64, f64);

/// A smooth function on phase space with analytic first partials.
#[derive(Clone)]
pub struct PhaseFunction(Arc<dyn Fn(f64, f64) -> Jet + Send + Sync>);

impl fmt::Debug for PhaseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseFunction(..)")
    }
}

impl PhaseFunction {
    pub fn new(f: impl Fn(f64, f64) -> Jet + Send + Sync + 'static) -> Self {
        PhaseFunction(Arc::new(f))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| (c, 0.0, 0.0))
    }

    /// `sum c q^a p^b` over `(a, b, c)` terms.
    pub fn polynomial(terms: &[(i32, i32, f64)]) -> Self {
        let terms = terms.to_vec();
        Self::new(move |q, p| {
            let mut out = (0.0, 0.0, 0.0);
            for &(a, b, c) in &terms {
                out.0 += c * q.powi(a) * p.powi(b);
                if a > 0 {
                    out.1 += c * a as f64 * q.powi(a - 1) * p.powi(b);
                }
                if b > 0 {
                    out.2 += c * b as f64 * q.powi(a) * p.powi(b - 1);
                }
            }
            out
        })
    }

    pub fn eval(&self, q: f64, p: f64) -> Jet {
        (self.0)(q, p)
    }

    pub fn at(&self, z: PhasePoint) -> Jet {
        (self.0)(z.q, z.p)
    }

    /// Largest relative mismatch between the stated partials and central
    /// differences at `(q, p)`.
    pub fn partials_defect(&self, q: f64, p: f64) -> f64 {
        let (_, fq, fp) = self.eval(q, p);
        let hq = 1e-6 * q.abs().max(1.0);
        let hp = 1e-6 * p.abs().max(1.0);
        let nq = (self.eval(q + hq, p).0 - self.eval(q - hq, p).0) / (2.0 * hq);
        let np = (self.eval(q, p + hp).0 - self.eval(q, p - hp).0) / (2.0 * hp);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        rel(fq, nq).max(rel(fp, np))
    }
}

/// `{f, g}` from jets.
fn bracket(f: Jet, g: Jet) -> f64 {
    f.1 * g.2 - f.2 * g.1
}

/// `l_f = p f_p - f`, the phase rate along the flow of `f`.
fn lift(f: Jet, z: PhasePoint) -> f64 {
    z.p * f.2 - f.0
}

#[derive(Debug, Clone)]
pub struct TangentPerturbation {
    pub dg: PhaseFunction,
    pub dmu: Vec<f64>,
    pub dphi: f64,
}

impl TangentPerturbation {
    pub fn new(dg: PhaseFunction, dmu: Vec<f64>, dphi: f64) -> Self {
        TangentPerturbation { dg, dmu, dphi }
    }

    /// Pure marker motion along `X_dg`, with the phase lifted canonically.
    pub fn lifted(chart: &MarkerChart, dg: PhaseFunction) -> Self {
        let b = chart.points[chart.base_index];
        let dphi = lift(dg.at(b), b);
        TangentPerturbation {
            dg,
            dmu: vec![0.0; chart.len()],
            dphi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FunctionalDerivative {
    /// Density on the curve, as label components per marker.
    pub df_dg: Vec<f64>,
    pub df_dmu: PhaseFunction,
}

/// A tangent vector given directly as per-marker variations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawTangent {
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
    pub dphase: Vec<f64>,
    pub dmu: Vec<f64>,
}

impl RawTangent {
    /// `(a - b) / scale`, componentwise.
    pub fn difference(a: &MarkerChart, b: &MarkerChart, scale: f64) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::InvalidChart("charts differ in marker count".into()));
        }
        let n = a.len();
        Ok(RawTangent {
            dq: (0..n)
                .map(|i| (a.points[i].q - b.points[i].q) / scale)
                .collect(),
            dp: (0..n)
                .map(|i| (a.points[i].p - b.points[i].p) / scale)
                .collect(),
            dphase: (0..n)
                .map(|i| (a.phases[i] - b.phases[i]) / scale)
                .collect(),
            dmu: (0..n)
                .map(|i| (a.weights[i] - b.weights[i]) / scale)
                .collect(),
        })
    }

    fn combine(&self, a: f64, other: &RawTangent, b: f64) -> RawTangent {
        let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect();
        RawTangent {
            dq: mix(&self.dq, &other.dq),
            dp: mix(&self.dp, &other.dp),
            dphase: mix(&self.dphase, &other.dphase),
            dmu: mix(&self.dmu, &other.dmu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables {
    pub p_phi: f64,
    pub energy: f64,
}

pub fn observables(chart: &MarkerChart, symbol: &DispersionSymbol, t: f64) -> Result<Observables> {
    let (p_phi, energy) = conserved_quantities(chart, symbol, t)?;
    Ok(Observables { p_phi, energy })
}

fn rho_jets(chart: &MarkerChart, symbol: &DispersionSymbol, t: f64) -> Result<Vec<RhoJet>> {
    chart
        .points
        .iter()
        .enumerate()
        .map(|(i, z)| {
            symbol.rho_jet(&[z.q], &[z.p], t).map_err(|e| match e {
                Error::DegenerateSymbol { .. } => Error::ZeroWeight(i),
                e => Error::at_marker(i, e),
            })
        })
        .collect()
}

fn rho_as_jet(r: &RhoJet) -> Jet {
    (r.rho, r.dq[0], r.dp[0])
}

fn p_phi_of(chart: &MarkerChart, jets: &[RhoJet]) -> f64 {
    chart
        .node_masses()
        .iter()
        .zip(jets)
        .map(|(m, r)| m * r.rho)
        .sum()
}

fn check_len(chart: &MarkerChart, v: &[f64], what: &str) -> Result<()> {
    if v.len() != chart.len() {
        return Err(Error::InvalidChart(format!(
            "{what} has {} entries for {} markers",
            v.len(),
            chart.len()
        )));
    }
    Ok(())
}

/// `Theta_t(v) = -sum dg rho m - p_phi (l_dg(base) - dphi)`.
///
/// Written with `dg - dg(base)` in the sum, which is algebraically the same
/// and makes a constant generator give exactly zero.
pub fn theta_eval(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    v: &TangentPerturbation,
) -> Result<f64> {
    let jets = rho_jets(chart, symbol, t)?;
    let masses = chart.node_masses();
    let b = chart.points[chart.base_index];
    let gb = v.dg.at(b);
    let mut sum = 0.0;
    for i in 0..chart.len() {
        let g = v.dg.at(chart.points[i]).0;
        sum += (g - gb.0) * jets[i].rho * masses[i];
    }
    let p_phi = p_phi_of(chart, &jets);
    Ok(-sum - p_phi * (b.p * gb.2 - v.dphi))
}

/// `Theta_t` of a tangent given by per-marker variations:
/// `sum m rho (dS - p dq)`.
pub fn theta_raw(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    v: &RawTangent,
) -> Result<f64> {
    check_len(chart, &v.dq, "raw tangent")?;
    let jets = rho_jets(chart, symbol, t)?;
    let masses = chart.node_masses();
    Ok((0..chart.len())
        .map(|i| masses[i] * jets[i].rho * (v.dphase[i] - chart.points[i].p * v.dq[i]))
        .sum())
}

/// `L_X p_phi = sum w ({rho, dg} mu + rho dmu)`.
fn p_phi_derivative(
    chart: &MarkerChart,
    w: &[f64],
    jets: &[RhoJet],
    v: &TangentPerturbation,
) -> f64 {
    (0..chart.len())
        .map(|i| {
            let g = v.dg.at(chart.points[i]);
            w[i] * (bracket(rho_as_jet(&jets[i]), g) * chart.weights[i] + jets[i].rho * v.dmu[i])
        })
        .sum()
}

/// Half of the two-form: `dTheta(X1, X2) = half(X1, X2) - half(X2, X1)`,
/// which makes antisymmetry exact in floating point.
fn dtheta_half(
    chart: &MarkerChart,
    w: &[f64],
    jets: &[RhoJet],
    a: &TangentPerturbation,
    b: &TangentPerturbation,
) -> f64 {
    let mut sum = 0.0;
    for i in 0..chart.len() {
        let z = chart.points[i];
        let (ga, gb) = (a.dg.at(z), b.dg.at(z));
        let rho = rho_as_jet(&jets[i]);
        let mu = chart.weights[i];
        sum +=
            w[i] * (mu * (rho.0 * ga.1 * gb.2 + ga.0 * bracket(rho, gb)) + ga.0 * rho.0 * b.dmu[i]);
    }
    let base = chart.points[chart.base_index];
    let lb = lift(b.dg.at(base), base);
    sum + p_phi_derivative(chart, w, jets, a) * (b.dphi - lb)
}

/// The exterior derivative of the one-form on a pair of tangents.
pub fn dtheta_eval(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    v1: &TangentPerturbation,
    v2: &TangentPerturbation,
) -> Result<f64> {
    check_len(chart, &v1.dmu, "v1.dmu")?;
    check_len(chart, &v2.dmu, "v2.dmu")?;
    let jets = rho_jets(chart, symbol, t)?;
    let w = chart.quad_weights();
    Ok(dtheta_half(chart, &w, &jets, v1, v2) - dtheta_half(chart, &w, &jets, v2, v1))
}

/// `<alpha, v> = sum w (dg kappa + {p~, dg} mu + p~ dmu)`.
pub fn pairing_eval(
    chart: &MarkerChart,
    alpha: &FunctionalDerivative,
    v: &TangentPerturbation,
) -> Result<f64> {
    check_len(chart, &alpha.df_dg, "alpha.df_dg")?;
    check_len(chart, &v.dmu, "v.dmu")?;
    let w = chart.quad_weights();
    Ok((0..chart.len())
        .map(|i| {
            let z = chart.points[i];
            let g = v.dg.at(z);
            let pt = alpha.df_dmu.at(z);
            w[i] * (g.0 * alpha.df_dg[i] + bracket(pt, g) * chart.weights[i] + pt.0 * v.dmu[i])
        })
        .sum())
}

/// Jet of `f / rho`.
fn over_rho(f: Jet, r: Jet) -> Jet {
    let inv = 1.0 / r.0;
    (
        f.0 * inv,
        f.1 * inv - f.0 * r.1 * inv * inv,
        f.2 * inv - f.0 * r.2 * inv * inv,
    )
}

fn pb_half(
    chart: &MarkerChart,
    w: &[f64],
    jets: &[RhoJet],
    f: &FunctionalDerivative,
    g: &FunctionalDerivative,
) -> f64 {
    let mut sum = 0.0;
    for i in 0..chart.len() {
        let z = chart.points[i];
        let r = rho_as_jet(&jets[i]);
        let (pf, pg) = (f.df_dmu.at(z), g.df_dmu.at(z));
        let (a, b) = (over_rho(pf, r), over_rho(pg, r));
        sum += w[i] * (pf.0 * g.df_dg[i] / r.0 - chart.weights[i] * r.0 * a.1 * b.2);
    }
    sum
}

/// Poisson bracket of two functionals from their derivative data.
pub fn poisson_bracket(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    df: &FunctionalDerivative,
    dg: &FunctionalDerivative,
) -> Result<f64> {
    check_len(chart, &df.df_dg, "dF.df_dg")?;
    check_len(chart, &dg.df_dg, "dG.df_dg")?;
    let jets = rho_jets(chart, symbol, t)?;
    let w = chart.quad_weights();
    Ok(pb_half(chart, &w, &jets, df, dg) - pb_half(chart, &w, &jets, dg, df))
}

/// Hamiltonian vector field of a functional. With `time_dependent` the
/// explicit time variation of `rho` enters the density component.
pub fn hamiltonian_vector(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
    df: &FunctionalDerivative,
    time_dependent: bool,
) -> Result<TangentPerturbation> {
    check_len(chart, &df.df_dg, "dF.df_dg")?;
    let jets = rho_jets(chart, symbol, t)?;
    let mut dmu = Vec::with_capacity(chart.len());
    for i in 0..chart.len() {
        let z = chart.points[i];
        let r = rho_as_jet(&jets[i]);
        let a = over_rho(df.df_dmu.at(z), r);
        let mu = chart.weights[i];
        let mut num = df.df_dg[i] + bracket(r, a) * mu;
        if time_dependent {
            num -= jets[i].dt * mu;
        }
        dmu.push(num / r.0);
    }
    let sym = symbol.clone();
    let pt = df.df_dmu.clone();
    let dg = PhaseFunction::new(move |q, p| match sym.rho_jet(&[q], &[p], t) {
        Ok(r) => {
            let a = over_rho(pt.eval(q, p), rho_as_jet(&r));
            (-a.0, -a.1, -a.2)
        }
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    });
    Ok(TangentPerturbation::lifted(chart, dg).with_dmu(dmu))
}

impl TangentPerturbation {
    fn with_dmu(mut self, dmu: Vec<f64>) -> Self {
        self.dmu = dmu;
        self
    }
}

/// Derivative data of the energy functional: `dF/dmu = -E rho`, `dF/dg = 0`.
pub fn energy_derivative(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
) -> FunctionalDerivative {
    let sym = symbol.clone();
    let df_dmu = PhaseFunction::new(move |q, p| {
        let fd = sym.frequency_data(&[q], &[p], t);
        let jet = sym.rho_jet(&[q], &[p], t);
        match (fd, jet) {
            (Ok(fd), Ok(r)) => {
                // E_q = -pdot, E_p = qdot
                let (e, eq, ep) = (fd.e, -fd.pdot[0], fd.qdot[0]);
                (
                    -e * r.rho,
                    -(eq * r.rho + e * r.dq[0]),
                    -(ep * r.rho + e * r.dp[0]),
                )
            }
            _ => (f64::NAN, f64::NAN, f64::NAN),
        }
    });
    FunctionalDerivative {
        df_dg: vec![0.0; chart.len()],
        df_dmu,
    }
}

/// Move a chart a distance `s` along `v`: markers flow along `X_dg`, phases
/// integrate `l_dg` and are then shifted so the base phase changes by
/// `s dphi`, and weights change by `s dmu`.
pub fn perturb(chart: &MarkerChart, v: &TangentPerturbation, s: f64) -> Result<MarkerChart> {
    check_len(chart, &v.dmu, "v.dmu")?;
    let substeps = ((s.abs() / 1e-3).ceil() as usize).max(1);
    let h = s / substeps as f64;
    let rhs = |q: f64, p: f64| {
        let g = v.dg.eval(q, p);
        (g.2, -g.1, p * g.2 - g.0)
    };
    let mut out = chart.clone();
    let mut gained = vec![0.0; chart.len()];
    for i in 0..chart.len() {
        let (mut q, mut p) = (chart.points[i].q, chart.points[i].p);
        let mut acc = 0.0;
        for _ in 0..substeps {
            let k1 = rhs(q, p);
            let k2 = rhs(q + 0.5 * h * k1.0, p + 0.5 * h * k1.1);
            let k3 = rhs(q + 0.5 * h * k2.0, p + 0.5 * h * k2.1);
            let k4 = rhs(q + h * k3.0, p + h * k3.1);
            q += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            p += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            acc += h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
        }
        if !(q.is_finite() && p.is_finite() && acc.is_finite()) {
            return Err(Error::at_marker(
                i,
                Error::InvalidChart("perturbation generator is not finite".into()),
            ));
        }
        out.points[i] = PhasePoint::new(q, p);
        gained[i] = acc;
    }
    let shift = s * v.dphi - gained[chart.base_index];
    for i in 0..chart.len() {
        out.phases[i] = chart.phases[i] + gained[i] + shift;
        out.weights[i] = chart.weights[i] + s * v.dmu[i];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrozenInReport {
    pub theta_t0: f64,
    pub theta_t1: f64,
    pub defect: f64,
}

/// Default finite-difference amplitude for transporting tangents.
pub const DEFAULT_FD_AMPLITUDE: f64 = 1e-5;

/// Transport `v` by the rk4 flow from `t0` to `t1` using central differences
/// at amplitudes `s` and `s/2` combined by Richardson extrapolation.
pub fn transport_tangent(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    v: &TangentPerturbation,
    t0: f64,
    t1: f64,
    h: f64,
    s: f64,
) -> Result<(MarkerChart, RawTangent)> {
    let mut settings = EvolveSettings::new(Scheme::Rk4, h, t0, t1);
    settings.save_every = usize::MAX;
    let run = |c: &MarkerChart| -> Result<MarkerChart> {
        Ok(evolve(c, symbol, &settings)?.last().clone())
    };
    let base = run(chart)?;
    let central = |amp: f64| -> Result<RawTangent> {
        let plus = run(&perturb(chart, v, amp)?)?;
        let minus = run(&perturb(chart, v, -amp)?)?;
        RawTangent::difference(&plus, &minus, 2.0 * amp)
    };
    let coarse = central(s)?;
    let fine = central(0.5 * s)?;
    Ok((base, fine.combine(4.0 / 3.0, &coarse, -1.0 / 3.0)))
}

/// Compare `Theta_t0(v)` with `Theta_t1` of the transported tangent.
pub fn frozen_in_check(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    v: &TangentPerturbation,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<FrozenInReport> {
    frozen_in_check_with(chart, symbol, v, t0, t1, h, DEFAULT_FD_AMPLITUDE)
}

pub fn frozen_in_check_with(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    v: &TangentPerturbation,
    t0: f64,
    t1: f64,
    h: f64,
    s: f64,
) -> Result<FrozenInReport> {
    let theta_t0 = theta_eval(chart, symbol, t0, v)?;
    let (end, moved) = transport_tangent(chart, symbol, v, t0, t1, h, s)?;
    let theta_t1 = theta_raw(&end, symbol, t1, &moved)?;
    Ok(FrozenInReport {
        theta_t0,
        theta_t1,
        defect: (theta_t1 - theta_t0).abs(),
    })
}

/// The evolution vector field at each marker: `(qdot, pdot, mudot)` with
/// `mudot = -mu (d/dt rho along the ray) / rho` from the transport law.
pub fn evolution_field(
    chart: &MarkerChart,
    symbol: &DispersionSymbol,
    t: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    chart
        .points
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let fd = symbol
                .frequency_data(&[z.q], &[z.p], t)
                .map_err(|e| Error::at_marker(i, e))?;
            let r = symbol
                .rho_jet(&[z.q], &[z.p], t)
                .map_err(|e| Error::at_marker(i, e))?;
            let (qd, pd) = (fd.qdot[0], fd.pdot[0]);
            let rho_dot = r.dt + r.dq[0] * qd + r.dp[0] * pd;
            Ok((qd, pd, -chart.weights[i] * rho_dot / r.rho))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{init_circle, init_from_phase_function, uniform_grid};
    use crate::symbol::Builtin;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn harmonic() -> DispersionSymbol {
        DispersionSymbol::builtin(Builtin::Harmonic { omega: 1.0 })
    }

    fn helmholtz() -> DispersionSymbol {
        DispersionSymbol::builtin(Builtin::Helmholtz {
            c0: 1.0,
            c1: 0.2,
            rate: 0.3,
        })
    }

    fn circle(n: usize) -> MarkerChart {
        init_circle(PhasePoint::new(0.0, 0.0), 1.0, n, 0.05, 1.0).unwrap()
    }

    /// A tilted, non-uniformly weighted curve where `p > 0` (so helmholtz is regular).
    fn wavy_line(n: usize) -> MarkerChart {
        init_from_phase_function(
            |q| 1.5 * q + 0.1 * q.sin(),
            |q| 1.5 + 0.1 * q.cos(),
            |q| (-0.3 * q * q).exp(),
            &uniform_grid(-2.0, 2.0, n),
            0.05,
        )
        .unwrap()
    }

    fn poly(c: &[f64]) -> PhaseFunction {
        PhaseFunction::polynomial(&[
            (1, 0, c[0]),
            (0, 1, c[1]),
            (2, 0, c[2]),
            (1, 1, c[3]),
            (0, 2, c[4]),
            (2, 1, c[5]),
        ])
    }

    fn tangent(chart: &MarkerChart, c: &[f64], dphi: f64) -> TangentPerturbation {
        let dmu = (0..chart.len())
            .map(|i| c[6] * (chart.labels[i] * 1.3).cos())
            .collect();
        TangentPerturbation::new(poly(c), dmu, dphi)
    }

    fn covector(chart: &MarkerChart, c: &[f64]) -> FunctionalDerivative {
        FunctionalDerivative {
            df_dg: (0..chart.len())
                .map(|i| c[6] * (chart.labels[i] * 0.7).sin() + c[0])
                .collect(),
            df_dmu: poly(c),
        }
    }

    /// `c (q^2 + p^2 - 1)`: vanishes on the unit circle, and moves markers
    /// along it at a uniform label speed, so uniform weights are unchanged.
    fn gauge(chart: &MarkerChart, c: f64) -> TangentPerturbation {
        TangentPerturbation::lifted(
            chart,
            PhaseFunction::polynomial(&[(2, 0, c), (0, 2, c), (0, 0, -c)]),
        )
    }

    #[test]
    fn observables_examples() {
        let sch = DispersionSymbol::builtin(Builtin::Schrodinger {
            stiffness: 0.0,
            force: 0.0,
        });
        let o = observables(&wavy_line(64), &sch, 0.0).unwrap();
        let w = wavy_line(64).total_weight();
        assert_abs_diff_eq!(o.p_phi, -w, epsilon = 1e-14);
        let o = observables(&circle(256), &harmonic(), 0.0).unwrap();
        assert_abs_diff_eq!(o.energy, 0.5, epsilon = 1e-12);
        let flat = init_from_phase_function(
            |q| 2.0 * q,
            |_| 2.0,
            |_| 1.0,
            &uniform_grid(0.0, 1.0, 11),
            0.1,
        )
        .unwrap();
        let helm = DispersionSymbol::builtin(Builtin::Helmholtz {
            c0: 1.0,
            c1: 0.0,
            rate: 0.0,
        });
        let o = observables(&flat, &helm, 0.0).unwrap();
        // oracle: plug the frequency data into the definitions
        let fd = helm.frequency_data(&[0.0], &[2.0], 0.0).unwrap();
        assert_abs_diff_eq!(o.p_phi, fd.rho, epsilon = 1e-12);
        assert_abs_diff_eq!(o.energy, -fd.e * fd.rho, epsilon = 1e-12);
        assert_abs_diff_eq!(o.p_phi, -4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.energy, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn theta_examples() {
        let c = circle(256);
        let h = harmonic();
        let v = TangentPerturbation::new(PhaseFunction::zero(), vec![0.0; 256], 1.0);
        assert_abs_diff_eq!(theta_eval(&c, &h, 0.0, &v).unwrap(), -1.0, epsilon = 1e-14);
        for k in [-3.0, 0.5, 17.0] {
            let v = TangentPerturbation::new(PhaseFunction::constant(k), vec![0.0; 256], 0.0);
            assert_eq!(theta_eval(&c, &h, 0.0, &v).unwrap(), 0.0);
            assert_eq!(
                theta_eval(&wavy_line(33), &helmholtz(), 0.4, &v).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn theta_matches_fine_quadrature() {
        let c = circle(256);
        let g = PhaseFunction::polynomial(&[(1, 1, 1.0), (2, 0, 0.5), (0, 1, 0.25)]);
        let v = TangentPerturbation::new(g.clone(), vec![0.0; 256], 0.3);
        let got = theta_eval(&c, &harmonic(), 0.0, &v).unwrap();
        // oracle: midpoint rule on the exact circle, rho = -1, mu = 1/(2 pi)
        let n = 1 << 16;
        let xb = c.labels[0];
        let zb = PhasePoint::new(xb.cos(), -xb.sin());
        let gb = g.at(zb);
        let mut sum = 0.0;
        for k in 0..n {
            let x = (k as f64 + 0.5) * 2.0 * PI / n as f64;
            let gv = g.eval(x.cos(), -x.sin()).0;
            sum -= (gv - gb.0) / (2.0 * PI) * (2.0 * PI / n as f64);
        }
        let want = -sum + (zb.p * gb.2 - 0.3);
        assert_abs_diff_eq!(got, want, epsilon = 1e-8);
    }

    #[test]
    fn dtheta_gauge_kernel() {
        let c = circle(256);
        let h = harmonic();
        let z = gauge(&c, 0.7);
        for coeffs in [
            [1.0, -0.5, 0.3, 0.2, -0.1, 0.05, 0.4],
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ] {
            let v = tangent(&c, &coeffs, 0.2);
            let d = dtheta_eval(&c, &h, 0.0, &v, &z).unwrap();
            assert!(d.abs() <= 1e-6, "{d}");
        }
    }

    #[test]
    fn dtheta_matches_lie_derivative_formula() {
        // dTheta(X1, X2) = X1[Theta(X2)] - X2[Theta(X1)] - Theta([X1, X2]),
        // with [X_f, X_g] = X_{g, f} on the marker flows and constant dmu, dphi.
        let sym = helmholtz();
        let c = wavy_line(101);
        let t = 0.2;
        let a = [0.3, -0.2, 0.1, 0.25, -0.15, 0.05, 0.2];
        let b = [-0.1, 0.4, -0.2, 0.1, 0.3, -0.05, -0.3];
        let v1 = tangent(&c, &a, 0.7);
        let v2 = tangent(&c, &b, -0.4);
        let along = |v: &TangentPerturbation, w: &TangentPerturbation| -> f64 {
            let d = |s: f64| {
                let plus = theta_eval(&perturb(&c, v, s).unwrap(), &sym, t, w).unwrap();
                let minus = theta_eval(&perturb(&c, v, -s).unwrap(), &sym, t, w).unwrap();
                (plus - minus) / (2.0 * s)
            };
            (4.0 * d(5e-4) - d(1e-3)) / 3.0
        };
        let (g1, g2) = (v1.dg.clone(), v2.dg.clone());
        let commutator = PhaseFunction::new(move |q, p| {
            // {g2, g1} with its partials by central differences of the bracket
            let f = |q: f64, p: f64| bracket(g2.eval(q, p), g1.eval(q, p));
            let h = 1e-5;
            (
                f(q, p),
                (f(q + h, p) - f(q - h, p)) / (2.0 * h),
                (f(q, p + h) - f(q, p - h)) / (2.0 * h),
            )
        });
        let lie = TangentPerturbation::new(commutator, vec![0.0; c.len()], 0.0);
        let oracle = along(&v1, &v2) - along(&v2, &v1) - theta_eval(&c, &sym, t, &lie).unwrap();
        let got = dtheta_eval(&c, &sym, t, &v1, &v2).unwrap();
        assert!(
            (got - oracle).abs() <= 1e-4 * got.abs().max(1.0),
            "{got} vs {oracle}"
        );
    }

    #[test]
    fn pairing_examples() {
        let c = circle(256);
        // (kappa, 0) only sees dg on the curve: add something vanishing there
        let alpha = FunctionalDerivative {
            df_dg: (0..256).map(|i| 1.0 + 0.3 * c.labels[i].sin()).collect(),
            df_dmu: PhaseFunction::zero(),
        };
        let g = poly(&[0.3, -0.2, 0.1, 0.25, -0.15, 0.05, 0.0]);
        let v = TangentPerturbation::new(g.clone(), vec![0.5; 256], 0.0);
        let g2 = g.clone();
        let shifted = PhaseFunction::new(move |q, p| {
            let a = g2.eval(q, p);
            let f = q * q + p * p - 1.0;
            (a.0 + 3.0 * f, a.1 + 6.0 * q, a.2 + 6.0 * p)
        });
        let v2 = TangentPerturbation::new(shifted, vec![-0.5; 256], 0.0);
        let a = pairing_eval(&c, &alpha, &v).unwrap();
        let b = pairing_eval(&c, &alpha, &v2).unwrap();
        assert!((a - b).abs() < 1e-12);
        // W-invariance: the gauge direction pairs to zero with any covector
        let z = gauge(&c, -1.3);
        let beta = covector(&c, &[0.2, 0.1, -0.3, 0.4, 0.0, 0.1, 0.6]);
        assert!(pairing_eval(&c, &beta, &z).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn pairing_bracket_term_matches_fine_grid() {
        let c = circle(256);
        let pt = poly(&[0.2, 0.1, -0.3, 0.4, 0.0, 0.1, 0.0]);
        let g = poly(&[-0.1, 0.5, 0.2, 0.0, 0.3, -0.2, 0.0]);
        let alpha = FunctionalDerivative {
            df_dg: vec![0.0; 256],
            df_dmu: pt.clone(),
        };
        let v = TangentPerturbation::new(g.clone(), vec![0.0; 256], 0.0);
        let got = pairing_eval(&c, &alpha, &v).unwrap();
        let n = 1 << 16;
        let mut want = 0.0;
        for k in 0..n {
            let x = (k as f64 + 0.5) * 2.0 * PI / n as f64;
            let (q, p) = (x.cos(), -x.sin());
            want += bracket(pt.eval(q, p), g.eval(q, p)) / (2.0 * PI) * (2.0 * PI / n as f64);
        }
        assert_abs_diff_eq!(got, want, epsilon = 1e-8);
    }

    #[test]
    fn energy_generates_evolution() {
        for (sym, chart, t) in [
            (harmonic(), circle(256), 0.0),
            (helmholtz(), wavy_line(101), 0.6),
        ] {
            let de = energy_derivative(&chart, &sym, t);
            let x = hamiltonian_vector(&chart, &sym, t, &de, true).unwrap();
            let field = evolution_field(&chart, &sym, t).unwrap();
            for (i, z) in chart.points.iter().enumerate() {
                let g = x.dg.at(*z);
                let e = sym.frequency(&[z.q], &[z.p], t).unwrap();
                assert_abs_diff_eq!(g.0, e, epsilon = 1e-8);
                assert_abs_diff_eq!(g.2, field[i].0, epsilon = 1e-8);
                assert_abs_diff_eq!(-g.1, field[i].1, epsilon = 1e-8);
                assert_abs_diff_eq!(x.dmu[i], field[i].2, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn evolution_field_matches_a_short_step() {
        let sym = helmholtz();
        let c = wavy_line(41);
        let field = evolution_field(&c, &sym, 0.3).unwrap();
        let h = 1e-4;
        let f = crate::dynamics::step(&c, &sym, 0.3, h, Scheme::Rk4).unwrap();
        let b = crate::dynamics::step(&c, &sym, 0.3, -h, Scheme::Rk4).unwrap();
        for i in 0..c.len() {
            let mu_dot = (f.weights[i] - b.weights[i]) / (2.0 * h);
            assert_abs_diff_eq!(mu_dot, field[i].2, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_p_tilde_gives_pure_density() {
        let c = circle(64);
        let h = harmonic();
        let df = FunctionalDerivative {
            df_dg: (0..64).map(|i| c.labels[i].cos()).collect(),
            df_dmu: PhaseFunction::zero(),
        };
        let x = hamiltonian_vector(&c, &h, 0.0, &df, false).unwrap();
        for i in 0..64 {
            assert_eq!(x.dg.at(c.points[i]), (0.0, 0.0, 0.0));
            assert_abs_diff_eq!(x.dmu[i], -df.df_dg[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn frozen_in_phase_direction() {
        let c = circle(128);
        let v = TangentPerturbation::new(PhaseFunction::zero(), vec![0.0; 128], 1.0);
        let r = frozen_in_check(&c, &harmonic(), &v, 0.0, 1.0, 1e-2).unwrap();
        assert!(r.defect <= 1e-10, "{r:?}");
    }

    #[test]
    fn frozen_in_gauge_direction() {
        let c = circle(128);
        let r = frozen_in_check(&c, &harmonic(), &gauge(&c, 0.5), 0.0, 1.0, 1e-2).unwrap();
        assert!(
            r.theta_t0.abs() <= 1e-6 && r.theta_t1.abs() <= 1e-6,
            "{r:?}"
        );
        assert!(r.defect <= 1e-6);
    }

    #[test]
    fn frozen_in_time_dependent_symbol() {
        let c = wavy_line(81);
        let v = tangent(&c, &[0.3, -0.2, 0.1, 0.25, -0.15, 0.05, 0.2], 0.4);
        let coarse = frozen_in_check_with(&c, &helmholtz(), &v, 0.0, 1.0, 0.1, 1e-3).unwrap();
        let fine = frozen_in_check_with(&c, &helmholtz(), &v, 0.0, 1.0, 0.05, 5e-4).unwrap();
        assert!(fine.defect <= 1e-4, "{fine:?}");
        assert!(fine.defect < coarse.defect, "{coarse:?} {fine:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn antisymmetry_is_exact(a in prop::collection::vec(-1.0f64..1.0, 7),
                                 b in prop::collection::vec(-1.0f64..1.0, 7),
                                 dphi1 in -1.0f64..1.0, dphi2 in -1.0f64..1.0) {
            let c = wavy_line(31);
            let sym = helmholtz();
            let (v1, v2) = (tangent(&c, &a, dphi1), tangent(&c, &b, dphi2));
            let d12 = dtheta_eval(&c, &sym, 0.1, &v1, &v2).unwrap();
            let d21 = dtheta_eval(&c, &sym, 0.1, &v2, &v1).unwrap();
            prop_assert_eq!(d12, -d21);
            let (f, g) = (covector(&c, &a), covector(&c, &b));
            let fg = poisson_bracket(&c, &sym, 0.1, &f, &g).unwrap();
            let gf = poisson_bracket(&c, &sym, 0.1, &g, &f).unwrap();
            prop_assert_eq!(fg, -gf);
            prop_assert_eq!(poisson_bracket(&c, &sym, 0.1, &f, &f).unwrap(), 0.0);
        }

        #[test]
        fn bracket_pairing_triangle(a in prop::collection::vec(-1.0f64..1.0, 7),
                                    b in prop::collection::vec(-1.0f64..1.0, 7)) {
            let c = wavy_line(31);
            let sym = helmholtz();
            let (f, g) = (covector(&c, &a), covector(&c, &b));
            let pb = poisson_bracket(&c, &sym, 0.2, &f, &g).unwrap();
            let xf = hamiltonian_vector(&c, &sym, 0.2, &f, false).unwrap();
            let xg = hamiltonian_vector(&c, &sym, 0.2, &g, false).unwrap();
            let left = -pairing_eval(&c, &g, &xf).unwrap();
            let right = pairing_eval(&c, &f, &xg).unwrap();
            prop_assert!((pb - left).abs() <= 1e-8 * pb.abs().max(1.0));
            prop_assert!((pb - right).abs() <= 1e-8 * pb.abs().max(1.0));
        }

        #[test]
        fn hamiltonian_vector_contracts_dtheta(a in prop::collection::vec(-1.0f64..1.0, 7),
                                               b in prop::collection::vec(-1.0f64..1.0, 7)) {
            let c = wavy_line(31);
            let sym = helmholtz();
            let f = covector(&c, &a);
            let xf = hamiltonian_vector(&c, &sym, 0.2, &f, false).unwrap();
            let mut w = tangent(&c, &b, 0.0);
            w = TangentPerturbation::lifted(&c, w.dg.clone()).with_dmu(w.dmu);
            let lhs = pairing_eval(&c, &f, &w).unwrap();
            let rhs = -dtheta_eval(&c, &sym, 0.2, &xf, &w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn polynomial_partials_consistent(a in prop::collection::vec(-1.0f64..1.0, 7),
                                          q in -2.0f64..2.0, p in -2.0f64..2.0) {
            prop_assert!(poly(&a).partials_defect(q, p) <= 1e-6);
        }
    }
}
