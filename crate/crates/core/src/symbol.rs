//! Dispersion symbols `D(q, p, t, U)` and the local wave data derived from
//! them: the frequency `E_t` solving `D(z, t, -E) = 0`, the weight
//! `rho_t = dD/dU` on that root, and the ray velocity `X_E`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(&[f64], &[f64], f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &[f64], f64, f64) -> Vec<f64> + Send + Sync>;
pub type SecondFn = Arc<dyn Fn(&[f64], &[f64], f64, f64) -> UPartials + Send + Sync>;

/// Absolute tolerance on `|D|` for the frequency solve (scaled by `max(1, |E|)`).
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
/// `|dD/dU|` below this is treated as a violation of the single-sheet assumption.
pub const DEGENERATE_DU: f64 = 1e-10;
/// At a double root `D ~ D_UU d^2 / 2` and `D_U ~ D_UU d`, so a converged
/// iterate with `D_U^2 <= DEGENERATE_ROOT |D|` signals one.
pub const DEGENERATE_ROOT: f64 = 100.0;

/// Mixed second partials involving `U`, used for the gradient of `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct UPartials {
    pub duu: f64,
    pub duq: Vec<f64>,
    pub dup: Vec<f64>,
    pub dut: f64,
}

/// The principal symbol and its first partials.
#[derive(Clone)]
pub struct DispersionSymbol {
    eval: ScalarFn,
    du: ScalarFn,
    dq: VectorFn,
    dp: VectorFn,
    dt: ScalarFn,
    second: Option<SecondFn>,
    pub branch_hint: f64,
    pub label: String,
    /// True when some first partial is a finite-difference stand-in.
    pub fd_fallback: bool,
}

impl fmt::Debug for DispersionSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DispersionSymbol")
            .field("label", &self.label)
            .field("branch_hint", &self.branch_hint)
            .field("fd_fallback", &self.fd_fallback)
            .finish()
    }
}

/// Frequency, weight and ray velocity at one phase-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyData {
    pub e: f64,
    pub rho: f64,
    pub qdot: Vec<f64>,
    pub pdot: Vec<f64>,
}

/// `rho_t` together with its phase-space gradient and explicit time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoJet {
    pub rho: f64,
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
    pub dt: f64,
}

/// Builtin symbol families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Builtin {
    /// `D = -U - |p|^2/2 - V(q)`, `V = stiffness |q|^2 / 2 + force q_1`.
    Schrodinger { stiffness: f64, force: f64 },
    /// `D = -U - (|p|^2 + omega^2 |q|^2)/2`.
    Harmonic { omega: f64 },
    /// `D = U^2 - c(q,t)^2 |p|^2` with `c = (c0 + c1 q_1)(1 + rate t)`.
    Helmholtz { c0: f64, c1: f64, rate: f64 },
}

/// Serialized description of a builtin symbol, as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolDescriptor {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_hint: Option<f64>,
}

impl SymbolDescriptor {
    pub fn new(kind: &str) -> Self {
        SymbolDescriptor {
            kind: kind.to_string(),
            params: BTreeMap::new(),
            branch_hint: None,
        }
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn hint(mut self, hint: f64) -> Self {
        self.branch_hint = Some(hint);
        self
    }
}

/// Build a symbol from its descriptor. Unknown kinds and unknown parameter
/// names are rejected.
pub fn make_symbol(desc: &SymbolDescriptor) -> Result<DispersionSymbol> {
    let allowed: &[&str] = match desc.kind.as_str() {
        "schrodinger" => &["stiffness", "force"],
        "harmonic" => &["omega"],
        "helmholtz" => &["c0", "c1", "rate"],
        other => return Err(Error::UnknownSymbol(other.to_string())),
    };
    if let Some(bad) = desc.params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::InvalidParameter {
            name: bad.clone(),
            reason: format!("not a parameter of `{}`", desc.kind),
        });
    }
    let get = |k: &str, d: f64| desc.params.get(k).copied().unwrap_or(d);
    let builtin = match desc.kind.as_str() {
        "schrodinger" => Builtin::Schrodinger {
            stiffness: get("stiffness", 0.0),
            force: get("force", 0.0),
        },
        "harmonic" => Builtin::Harmonic {
            omega: get("omega", 1.0),
        },
        _ => Builtin::Helmholtz {
            c0: get("c0", 1.0),
            c1: get("c1", 0.0),
            rate: get("rate", 0.0),
        },
    };
    for (k, v) in &desc.params {
        if !v.is_finite() {
            return Err(Error::InvalidParameter {
                name: k.clone(),
                reason: "must be finite".into(),
            });
        }
    }
    let mut symbol = DispersionSymbol::builtin(builtin);
    if let Some(h) = desc.branch_hint {
        symbol.branch_hint = h;
    }
    Ok(symbol)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DispersionSymbol {
    pub fn builtin(b: Builtin) -> Self {
        match b {
            Builtin::Schrodinger { stiffness, force } => {
                let v = move |q: &[f64]| {
                    0.5 * stiffness * dot(q, q) + force * q.first().copied().unwrap_or(0.0)
                };
                DispersionSymbol {
                    eval: Arc::new(move |q, p, _t, u| -u - 0.5 * dot(p, p) - v(q)),
                    du: Arc::new(|_, _, _, _| -1.0),
                    dq: Arc::new(move |q, _, _, _| {
                        let mut g: Vec<f64> = q.iter().map(|x| -stiffness * x).collect();
                        if let Some(g0) = g.first_mut() {
                            *g0 -= force;
                        }
                        g
                    }),
                    dp: Arc::new(|_, p, _, _| p.iter().map(|x| -x).collect()),
                    dt: Arc::new(|_, _, _, _| 0.0),
                    second: Some(Arc::new(|q, _, _, _| UPartials {
                        duu: 0.0,
                        duq: vec![0.0; q.len()],
                        dup: vec![0.0; q.len()],
                        dut: 0.0,
                    })),
                    branch_hint: 0.0,
                    label: format!("schrodinger(stiffness={stiffness}, force={force})"),
                    fd_fallback: false,
                }
            }
            Builtin::Harmonic { omega } => {
                let w2 = omega * omega;
                DispersionSymbol {
                    eval: Arc::new(move |q, p, _t, u| -u - 0.5 * (dot(p, p) + w2 * dot(q, q))),
                    du: Arc::new(|_, _, _, _| -1.0),
                    dq: Arc::new(move |q, _, _, _| q.iter().map(|x| -w2 * x).collect()),
                    dp: Arc::new(|_, p, _, _| p.iter().map(|x| -x).collect()),
                    dt: Arc::new(|_, _, _, _| 0.0),
                    second: Some(Arc::new(|q, _, _, _| UPartials {
                        duu: 0.0,
                        duq: vec![0.0; q.len()],
                        dup: vec![0.0; q.len()],
                        dut: 0.0,
                    })),
                    branch_hint: 0.0,
                    label: format!("harmonic(omega={omega})"),
                    fd_fallback: false,
                }
            }
            Builtin::Helmholtz { c0, c1, rate } => {
                // c(q, t) = (c0 + c1 q_1)(1 + rate t)
                let c = move |q: &[f64], t: f64| {
                    (c0 + c1 * q.first().copied().unwrap_or(0.0)) * (1.0 + rate * t)
                };
                DispersionSymbol {
                    eval: Arc::new(move |q, p, t, u| {
                        let cv = c(q, t);
                        u * u - cv * cv * dot(p, p)
                    }),
                    du: Arc::new(|_, _, _, u| 2.0 * u),
                    dq: Arc::new(move |q, p, t, _| {
                        let mut g = vec![0.0; q.len()];
                        if let Some(g0) = g.first_mut() {
                            *g0 = -2.0 * c(q, t) * c1 * (1.0 + rate * t) * dot(p, p);
                        }
                        g
                    }),
                    dp: Arc::new(move |q, p, t, _| {
                        let cv = c(q, t);
                        p.iter().map(|x| -2.0 * cv * cv * x).collect()
                    }),
                    dt: Arc::new(move |q, p, t, _| {
                        let base = c0 + c1 * q.first().copied().unwrap_or(0.0);
                        -2.0 * c(q, t) * base * rate * dot(p, p)
                    }),
                    second: Some(Arc::new(|q, _, _, _| UPartials {
                        duu: 2.0,
                        duq: vec![0.0; q.len()],
                        dup: vec![0.0; q.len()],
                        dut: 0.0,
                    })),
                    branch_hint: 1.0,
                    label: format!("helmholtz(c0={c0}, c1={c1}, rate={rate})"),
                    fd_fallback: false,
                }
            }
        }
    }

    pub fn eval(&self, q: &[f64], p: &[f64], t: f64, u: f64) -> f64 {
        (self.eval)(q, p, t, u)
    }
    pub fn du(&self, q: &[f64], p: &[f64], t: f64, u: f64) -> f64 {
        (self.du)(q, p, t, u)
    }
    pub fn dq(&self, q: &[f64], p: &[f64], t: f64, u: f64) -> Vec<f64> {
        (self.dq)(q, p, t, u)
    }
    pub fn dp(&self, q: &[f64], p: &[f64], t: f64, u: f64) -> Vec<f64> {
        (self.dp)(q, p, t, u)
    }
    pub fn dt(&self, q: &[f64], p: &[f64], t: f64, u: f64) -> f64 {
        (self.dt)(q, p, t, u)
    }

    pub fn has_second_partials(&self) -> bool {
        self.second.is_some()
    }

    /// Newton solve of `D(q, p, t, -E) = 0` from `branch_hint`.
    pub fn frequency(&self, q: &[f64], p: &[f64], t: f64) -> Result<f64> {
        let mut e = self.branch_hint;
        for it in 0..NEWTON_MAX_ITER {
            let g = self.eval(q, p, t, -e);
            let du = self.du(q, p, t, -e);
            if !g.is_finite() || !du.is_finite() {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: g,
                });
            }
            if du.abs() < DEGENERATE_DU {
                return Err(Error::DegenerateSymbol { du });
            }
            // g(E) = D(-E), g'(E) = -dD/dU
            let next = e + g / du;
            if g.abs() <= NEWTON_TOL * e.abs().max(1.0) {
                if du * du <= DEGENERATE_ROOT * g.abs() {
                    return Err(Error::DegenerateSymbol { du });
                }
                // one polishing step keeps E a smooth function of z
                return Ok(next);
            }
            e = next;
        }
        Err(Error::NoConvergence {
            iterations: NEWTON_MAX_ITER,
            residual: self.eval(q, p, t, -e),
        })
    }

    /// Frequency, weight and Hamiltonian velocity `(dE/dp, -dE/dq)`.
    pub fn frequency_data(&self, q: &[f64], p: &[f64], t: f64) -> Result<FrequencyData> {
        let e = self.frequency(q, p, t)?;
        let u = -e;
        let rho = self.du(q, p, t, u);
        if rho.abs() < DEGENERATE_DU {
            return Err(Error::DegenerateSymbol { du: rho });
        }
        let qdot = self.dp(q, p, t, u).into_iter().map(|x| x / rho).collect();
        let pdot = self.dq(q, p, t, u).into_iter().map(|x| -x / rho).collect();
        Ok(FrequencyData { e, rho, qdot, pdot })
    }

    /// `rho_t` with its gradient. Uses the analytic `U`-second partials when the
    /// symbol provides them, central differences of `rho` otherwise.
    pub fn rho_jet(&self, q: &[f64], p: &[f64], t: f64) -> Result<RhoJet> {
        let e = self.frequency(q, p, t)?;
        let u = -e;
        let rho = self.du(q, p, t, u);
        if rho.abs() < DEGENERATE_DU {
            return Err(Error::DegenerateSymbol { du: rho });
        }
        if let Some(second) = &self.second {
            let s = second(q, p, t, u);
            let dq_d = self.dq(q, p, t, u);
            let dp_d = self.dp(q, p, t, u);
            // rho(z) = D_U(z, -E(z)); dE/dz = D_z / D_U
            let dq = s
                .duq
                .iter()
                .zip(&dq_d)
                .map(|(a, d)| a - s.duu * d / rho)
                .collect();
            let dp = s
                .dup
                .iter()
                .zip(&dp_d)
                .map(|(a, d)| a - s.duu * d / rho)
                .collect();
            let dt = s.dut - s.duu * self.dt(q, p, t, u) / rho;
            return Ok(RhoJet { rho, dq, dp, dt });
        }
        let rho_at =
            |q: &[f64], p: &[f64], t: f64| -> Result<f64> { Ok(self.frequency_data(q, p, t)?.rho) };
        let mut dq = Vec::with_capacity(q.len());
        let mut dp = Vec::with_capacity(p.len());
        let mut qq = q.to_vec();
        for k in 0..q.len() {
            let h = 1e-5 * q[k].abs().max(1.0);
            qq[k] = q[k] + h;
            let a = rho_at(&qq, p, t)?;
            qq[k] = q[k] - h;
            let b = rho_at(&qq, p, t)?;
            qq[k] = q[k];
            dq.push((a - b) / (2.0 * h));
        }
        let mut pp = p.to_vec();
        for k in 0..p.len() {
            let h = 1e-5 * p[k].abs().max(1.0);
            pp[k] = p[k] + h;
            let a = rho_at(q, &pp, t)?;
            pp[k] = p[k] - h;
            let b = rho_at(q, &pp, t)?;
            pp[k] = p[k];
            dp.push((a - b) / (2.0 * h));
        }
        let ht = 1e-5 * t.abs().max(1.0);
        let dt = (rho_at(q, p, t + ht)? - rho_at(q, p, t - ht)?) / (2.0 * ht);
        Ok(RhoJet { rho, dq, dp, dt })
    }

    /// Largest relative discrepancy between the supplied first partials and
    /// central differences of `eval` at one point.
    pub fn partials_defect(&self, q: &[f64], p: &[f64], t: f64, u: f64) -> f64 {
        let f = |q: &[f64], p: &[f64], t: f64, u: f64| self.eval(q, p, t, u);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        let fd = |x: f64, g: &dyn Fn(f64) -> f64| {
            let h = 1e-4 * x.abs().max(1.0);
            (g(x + h) - g(x - h)) / (2.0 * h)
        };
        let mut worst = rel(self.du(q, p, t, u), fd(u, &|v| f(q, p, t, v)));
        worst = worst.max(rel(self.dt(q, p, t, u), fd(t, &|s| f(q, p, s, u))));
        let dq = self.dq(q, p, t, u);
        let dp = self.dp(q, p, t, u);
        for k in 0..q.len() {
            let g = |x: f64| {
                let mut qq = q.to_vec();
                qq[k] = x;
                f(&qq, p, t, u)
            };
            worst = worst.max(rel(dq[k], fd(q[k], &g)));
        }
        for k in 0..p.len() {
            let g = |x: f64| {
                let mut pp = p.to_vec();
                pp[k] = x;
                f(q, &pp, t, u)
            };
            worst = worst.max(rel(dp[k], fd(p[k], &g)));
        }
        worst
    }
}

/// Assembles a user-defined symbol from closures.
#[derive(Default)]
pub struct UserSymbolBuilder {
    eval: Option<ScalarFn>,
    du: Option<ScalarFn>,
    dq: Option<VectorFn>,
    dp: Option<VectorFn>,
    dt: Option<ScalarFn>,
    second: Option<SecondFn>,
    branch_hint: f64,
    label: String,
    allow_fd: bool,
}

impl UserSymbolBuilder {
    pub fn new(label: &str) -> Self {
        UserSymbolBuilder {
            label: label.to_string(),
            ..Default::default()
        }
    }
    pub fn eval(
        mut self,
        f: impl Fn(&[f64], &[f64], f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.eval = Some(Arc::new(f));
        self
    }
    pub fn du(
        mut self,
        f: impl Fn(&[f64], &[f64], f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.du = Some(Arc::new(f));
        self
    }
    pub fn dq(
        mut self,
        f: impl Fn(&[f64], &[f64], f64, f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dq = Some(Arc::new(f));
        self
    }
    pub fn dp(
        mut self,
        f: impl Fn(&[f64], &[f64], f64, f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dp = Some(Arc::new(f));
        self
    }
    pub fn dt(
        mut self,
        f: impl Fn(&[f64], &[f64], f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.dt = Some(Arc::new(f));
        self
    }
    pub fn second(
        mut self,
        f: impl Fn(&[f64], &[f64], f64, f64) -> UPartials + Send + Sync + 'static,
    ) -> Self {
        self.second = Some(Arc::new(f));
        self
    }
    pub fn branch_hint(mut self, hint: f64) -> Self {
        self.branch_hint = hint;
        self
    }
    /// Permit missing first partials; they are replaced by central
    /// differences and the symbol is flagged with `fd_fallback`.
    pub fn allow_fd_fallback(mut self) -> Self {
        self.allow_fd = true;
        self
    }

    pub fn build(self) -> Result<DispersionSymbol> {
        let eval = self.eval.ok_or(Error::MissingPartial("eval"))?;
        let mut fd_fallback = false;
        let mut need = |name: &'static str, present: bool| -> Result<()> {
            if !present {
                if !self.allow_fd {
                    return Err(Error::MissingPartial(name));
                }
                fd_fallback = true;
            }
            Ok(())
        };
        need("du", self.du.is_some())?;
        need("dq", self.dq.is_some())?;
        need("dp", self.dp.is_some())?;
        need("dt", self.dt.is_some())?;

        let step = |x: f64| 1e-6 * x.abs().max(1.0);
        let du = self.du.unwrap_or_else(|| {
            let f = eval.clone();
            Arc::new(move |q, p, t, u| {
                let h = step(u);
                (f(q, p, t, u + h) - f(q, p, t, u - h)) / (2.0 * h)
            })
        });
        let dt = self.dt.unwrap_or_else(|| {
            let f = eval.clone();
            Arc::new(move |q, p, t, u| {
                let h = step(t);
                (f(q, p, t + h, u) - f(q, p, t - h, u)) / (2.0 * h)
            })
        });
        let dq = self.dq.unwrap_or_else(|| {
            let f = eval.clone();
            Arc::new(move |q: &[f64], p: &[f64], t, u| {
                let mut qq = q.to_vec();
                (0..q.len())
                    .map(|k| {
                        let h = step(q[k]);
                        qq[k] = q[k] + h;
                        let a = f(&qq, p, t, u);
                        qq[k] = q[k] - h;
                        let b = f(&qq, p, t, u);
                        qq[k] = q[k];
                        (a - b) / (2.0 * h)
                    })
                    .collect()
            })
        });
        let dp = self.dp.unwrap_or_else(|| {
            let f = eval.clone();
            Arc::new(move |q: &[f64], p: &[f64], t, u| {
                let mut pp = p.to_vec();
                (0..p.len())
                    .map(|k| {
                        let h = step(p[k]);
                        pp[k] = p[k] + h;
                        let a = f(q, &pp, t, u);
                        pp[k] = p[k] - h;
                        let b = f(q, &pp, t, u);
                        pp[k] = p[k];
                        (a - b) / (2.0 * h)
                    })
                    .collect()
            })
        });
        Ok(DispersionSymbol {
            eval,
            du,
            dq,
            dp,
            dt,
            second: self.second,
            branch_hint: self.branch_hint,
            label: self.label,
            fd_fallback,
        })
    }
}
