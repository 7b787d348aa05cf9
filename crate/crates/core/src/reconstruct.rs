//! Wave-field synthesis from a chart in one configuration dimension.
//!
//! Away from folds the field is a sum of eikonal branches. Near a fold the
//! curve is locally a graph over `p`, so the field is written as a
//! momentum-space oscillatory integral over a smoothly tapered window; the
//! tapered-off part is added back as branches.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::DEFAULT_FOLD_BAND;
use crate::error::{Error, Result};
use crate::manifold::{reduce_phase, sign, MarkerChart};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSettings {
    /// Nodes whose tangent makes a cosine below this with the `q` axis are folds.
    #[serde(default = "default_threshold")]
    pub caustic_threshold: f64,
    /// Half-width in `q` of the momentum-integral zone around a fold;
    /// `2 eps^(2/3)` when absent.
    #[serde(default)]
    pub margin: Option<f64>,
    /// Quadrature points per `2 pi eps` phase cycle.
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
}

fn default_threshold() -> f64 {
    0.1
}
fn default_oversampling() -> usize {
    64
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        ReconstructSettings {
            caustic_threshold: default_threshold(),
            margin: None,
            oversampling: default_oversampling(),
        }
    }
}

impl ReconstructSettings {
    pub fn margin_for(&self, epsilon: f64) -> f64 {
        self.margin.unwrap_or(2.0 * epsilon.powf(2.0 / 3.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.caustic_threshold > 0.0 && self.caustic_threshold < 1.0) {
            return Err(Error::InvalidSettings(
                "caustic_threshold must lie in (0, 1)".into(),
            ));
        }
        if self.oversampling < 16 {
            return Err(Error::InvalidSettings("oversampling must be >= 16".into()));
        }
        if let Some(m) = self.margin {
            if !(m >= 0.0) {
                return Err(Error::InvalidSettings("margin must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub segment_index: usize,
    pub q: f64,
    pub p: f64,
    pub amplitude: f64,
    /// Unreduced phase.
    pub phase: f64,
    pub maslov: i64,
    /// Smaller of the endpoint projection slopes of the segment.
    pub slope: f64,
}

impl Branch {
    pub fn reduced_phase(&self, epsilon: f64) -> f64 {
        reduce_phase(self.phase, epsilon)
    }

    pub fn value(&self, epsilon: f64) -> Complex64 {
        Complex64::from_polar(
            self.amplitude,
            self.phase / epsilon - self.maslov as f64 * PI / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BranchSum,
    MomentumIntegral,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::BranchSum => "branch_sum",
            Method::MomentumIntegral => "momentum_integral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub q: f64,
    pub value: Complex64,
    pub branches: Vec<Branch>,
    pub method: Method,
}

/// Per-node data shared by all queries on one chart.
struct Prepared<'a> {
    chart: &'a MarkerChart,
    q_slope: Vec<f64>,
    p_slope: Vec<f64>,
    q_density: Vec<f64>,
    p_density: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(chart: &'a MarkerChart) -> Self {
        let n = chart.len();
        let masses = chart.node_masses();
        let q_density = (0..n).map(|k| masses[k] / chart.dual_dq(k).abs()).collect();
        let p_density = (0..n).map(|k| masses[k] / chart.dual_dp(k).abs()).collect();
        Prepared {
            chart,
            q_slope: (0..n).map(|k| chart.projection_slope(k)).collect(),
            p_slope: (0..n).map(|k| chart.momentum_slope(k)).collect(),
            q_density,
            p_density,
        }
    }

    fn is_fold(&self, k: usize, threshold: f64) -> bool {
        self.q_slope[k].abs() < threshold
    }

    /// Counter attached to segment `s`: taken from the endpoint whose tangent
    /// agrees with the segment's direction in `q`.
    fn segment_maslov(&self, s: usize) -> i64 {
        let c = self.chart;
        let (i, j, _) = c.segment(s);
        let dq = c.points[j].q - c.points[i].q;
        let sj = c.maslov[i] + c.segment_increments(s).1;
        if sign(self.q_slope[i]) == sign(dq) {
            c.maslov[i]
        } else if sign(self.q_slope[j]) == sign(dq) {
            sj
        } else {
            c.maslov[i]
        }
    }

    fn branches_at(&self, q: f64) -> Vec<Branch> {
        let c = self.chart;
        let mut out = Vec::new();
        for s in 0..c.segment_count() {
            let (i, j, _) = c.segment(s);
            let (a, b) = (c.points[i], c.points[j]);
            let dq = b.q - a.q;
            if dq == 0.0 {
                continue;
            }
            let (lo, hi) = if dq > 0.0 { (a.q, b.q) } else { (b.q, a.q) };
            // half-open in q so a monotone pass through a node counts once
            if !(q >= lo && q < hi) {
                continue;
            }
            let t = (q - a.q) / dq;
            let dp = b.p - a.p;
            let density = (1.0 - t) * self.q_density[i] + t * self.q_density[j];
            out.push(Branch {
                segment_index: s,
                q,
                p: a.p + t * dp,
                amplitude: density.sqrt(),
                phase: c.phases[i] + dq * (a.p * t + 0.5 * dp * t * t),
                maslov: self.segment_maslov(s),
                slope: self.q_slope[i].abs().min(self.q_slope[j].abs()),
            });
        }
        out
    }

    fn fold_near(&self, q: f64, settings: &ReconstructSettings) -> Vec<usize> {
        let margin = settings.margin_for(self.chart.epsilon);
        (0..self.chart.len())
            .filter(|&k| {
                self.is_fold(k, settings.caustic_threshold)
                    && (self.chart.points[k].q - q).abs() <= margin
            })
            .collect()
    }
}

/// One node of a momentum window, with phase and counter continued along the run.
#[derive(Debug, Clone, Copy)]
struct RunNode {
    index: usize,
    q: f64,
    p: f64,
    phase: f64,
    maslov: i64,
    p_density: f64,
    q_slope: f64,
    /// Sign of `dp` along the label direction.
    dp_dir: f64,
    fold: bool,
}

/// A maximal stretch of the chart on which `p` is strictly monotone and the
/// tangent stays away from horizontal.
struct Run {
    nodes: Vec<RunNode>,
    /// Segment indices covered, in run order.
    segments: Vec<usize>,
    taper: Taper,
}

#[derive(Debug, Clone, Copy)]
struct Taper {
    lo: f64,
    core_lo: f64,
    core_hi: f64,
    hi: f64,
}

fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let f = |y: f64| (-1.0 / y).exp();
    f(x) / (f(x) + f(1.0 - x))
}

impl Taper {
    fn weight(&self, p: f64) -> f64 {
        if p < self.core_lo {
            if self.core_lo > self.lo {
                smooth_step((p - self.lo) / (self.core_lo - self.lo))
            } else {
                1.0
            }
        } else if p > self.core_hi {
            if self.hi > self.core_hi {
                smooth_step((self.hi - p) / (self.hi - self.core_hi))
            } else {
                1.0
            }
        } else {
            1.0
        }
    }
}

fn build_run(prep: &Prepared, seed: usize, threshold: f64) -> Result<Run> {
    let c = prep.chart;
    let n = c.len();
    let regular = |k: usize| prep.p_slope[k].abs() >= threshold;
    let seed_q = c.points[seed].q;
    if !regular(seed) {
        return Err(Error::UnresolvedCaustic { q: seed_q });
    }
    let dir = sign(c.dual_dp(seed));
    let node = |k: usize, phase: f64, maslov: i64| RunNode {
        index: k,
        q: c.points[k].q,
        p: c.points[k].p,
        phase,
        maslov,
        p_density: prep.p_density[k],
        q_slope: prep.q_slope[k],
        dp_dir: dir as f64,
        fold: prep.is_fold(k, threshold),
    };
    let mut back = Vec::new();
    let mut fwd = Vec::new();
    let mut cur = node(seed, c.phases[seed], c.maslov[seed]);
    let mut count = 1;
    while let Some(a) = c.prev(cur.index) {
        if count >= n || !regular(a) {
            break;
        }
        let s = a;
        let dp = c.points[cur.index].p - c.points[a].p;
        if dp == 0.0 || sign(dp) != dir {
            break;
        }
        let (ds, dm) = c.segment_increments(s);
        let prev = node(a, cur.phase - ds, cur.maslov - dm);
        back.push((s, prev));
        cur = prev;
        count += 1;
    }
    cur = node(seed, c.phases[seed], c.maslov[seed]);
    while let Some(b) = c.next(cur.index) {
        if count >= n || !regular(b) {
            break;
        }
        let s = cur.index;
        let dp = c.points[b].p - c.points[cur.index].p;
        if dp == 0.0 || sign(dp) != dir {
            break;
        }
        let (ds, dm) = c.segment_increments(s);
        let next = node(b, cur.phase + ds, cur.maslov + dm);
        fwd.push((s, next));
        cur = next;
        count += 1;
    }
    let mut nodes = Vec::with_capacity(count);
    let mut segments = Vec::with_capacity(count);
    for (s, v) in back.iter().rev() {
        nodes.push(*v);
        segments.push(*s);
    }
    nodes.push(node(seed, c.phases[seed], c.maslov[seed]));
    for (s, v) in &fwd {
        nodes.push(*v);
        segments.push(*s);
    }
    if nodes.len() < 2 {
        return Err(Error::UnresolvedCaustic { q: seed_q });
    }
    let ps: Vec<f64> = nodes.iter().map(|v| v.p).collect();
    let lo = ps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let fold_ps: Vec<f64> = nodes
        .iter()
        .filter(|v| v.fold || v.index == seed)
        .map(|v| v.p)
        .collect();
    let core_lo = fold_ps.iter().cloned().fold(f64::INFINITY, f64::min);
    let core_hi = fold_ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Run {
        nodes,
        segments,
        taper: Taper {
            lo,
            core_lo,
            core_hi,
            hi,
        },
    })
}

impl Run {
    /// Counter of the momentum chart, constant along a run. Stationary points
    /// with `dq/dp > 0` carry an extra `-pi/2` from the Fresnel factor, which
    /// this counter absorbs. It is read off the node with the steepest
    /// projection; on a run lying entirely inside the fold band the node is
    /// taken to sit just past its focus (`dq/dp > 0`), which is the side the
    /// counter update has already committed to for convex ray families.
    fn momentum_counter(&self) -> i64 {
        let best = self
            .nodes
            .iter()
            .max_by(|a, b| a.q_slope.abs().total_cmp(&b.q_slope.abs()))
            .expect("runs hold at least two nodes");
        let past_focus = if best.q_slope.abs() < DEFAULT_FOLD_BAND {
            true
        } else {
            best.q_slope * best.dp_dir > 0.0
        };
        best.maslov - i64::from(past_focus)
    }

    /// Tapered momentum-space integral over the run, without the
    /// `(2 pi i eps)^(-1/2)` prefactor.
    fn integral(&self, q: f64, epsilon: f64, oversampling: usize) -> Complex64 {
        let m = self.momentum_counter();
        let rot = Complex64::from_polar(1.0, -(m as f64) * PI / 2.0);
        let mut total = Complex64::new(0.0, 0.0);
        for w in self.nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (dq, dp) = (b.q - a.q, b.p - a.p);
            // phase derivative in s is dp (q - q(s)); q(s) is linear
            let reach = (q - a.q).abs().max((q - b.q).abs());
            let cycles = dp.abs() * reach / (2.0 * PI * epsilon);
            let intervals = ((oversampling as f64 * cycles).ceil() as usize).max(4);
            let h = 1.0 / intervals as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..=intervals {
                let t = k as f64 * h;
                let p = a.p + t * dp;
                let qs = a.q + t * dq;
                let phase = a.phase + dq * (a.p * t + 0.5 * dp * t * t) - p * qs + p * q;
                let dens = (1.0 - t) * a.p_density + t * b.p_density;
                let amp = dens.sqrt() * self.taper.weight(p);
                let f = Complex64::from_polar(amp, phase / epsilon);
                acc += if k == 0 || k == intervals { 0.5 * f } else { f };
            }
            total += rot * acc * (h * dp.abs());
        }
        total
    }
}

/// Every crossing of the chart with the vertical line at `q`, ordered by segment.
pub fn branches_at(chart: &MarkerChart, q: f64) -> Vec<Branch> {
    Prepared::new(chart).branches_at(q)
}

fn branch_sum(branches: &[Branch], epsilon: f64) -> Complex64 {
    branches.iter().map(|b| b.value(epsilon)).sum()
}

fn field_at_prepared(
    prep: &Prepared,
    q: f64,
    settings: &ReconstructSettings,
) -> Result<FieldSample> {
    let branches = prep.branches_at(q);
    if !prep.fold_near(q, settings).is_empty()
        || branches
            .iter()
            .any(|b| b.slope < settings.caustic_threshold)
    {
        return Err(Error::CausticAtQuery { q });
    }
    Ok(FieldSample {
        q,
        value: branch_sum(&branches, prep.chart.epsilon),
        branches,
        method: Method::BranchSum,
    })
}

/// Branch-sum field at `q`; refuses queries near a fold.
pub fn field_at(
    chart: &MarkerChart,
    q: f64,
    settings: &ReconstructSettings,
) -> Result<FieldSample> {
    settings.validate()?;
    field_at_prepared(&Prepared::new(chart), q, settings)
}

fn momentum_prepared(
    prep: &Prepared,
    q: f64,
    seeds: &[usize],
    settings: &ReconstructSettings,
) -> Result<FieldSample> {
    let eps = prep.chart.epsilon;
    let mut runs: Vec<Run> = Vec::new();
    let mut covered = BTreeSet::new();
    for &seed in seeds {
        if runs.iter().any(|r| r.nodes.iter().any(|v| v.index == seed)) {
            continue;
        }
        let run = build_run(prep, seed, settings.caustic_threshold)?;
        if run.segments.iter().any(|s| covered.contains(s)) {
            return Err(Error::UnresolvedCaustic { q });
        }
        covered.extend(run.segments.iter().copied());
        runs.push(run);
    }
    let prefactor = Complex64::new(0.0, 2.0 * PI * eps).powf(-0.5);
    let mut value = Complex64::new(0.0, 0.0);
    for run in &runs {
        value += prefactor * run.integral(q, eps, settings.oversampling);
    }
    let branches = prep.branches_at(q);
    for b in &branches {
        let weight = match runs.iter().find(|r| r.segments.contains(&b.segment_index)) {
            Some(r) => 1.0 - r.taper.weight(b.p),
            None => 1.0,
        };
        if weight <= 0.0 {
            continue;
        }
        if b.slope < settings.caustic_threshold {
            return Err(Error::UnresolvedCaustic { q });
        }
        value += weight * b.value(eps);
    }
    Ok(FieldSample {
        q,
        value,
        branches,
        method: Method::MomentumIntegral,
    })
}

/// Momentum-integral field at `q`, using the windows around every fold node
/// within the margin, or around the nodes of the crossing segments when no
/// fold is near. Useful for cross-checking against the branch sum.
pub fn field_momentum(
    chart: &MarkerChart,
    q: f64,
    settings: &ReconstructSettings,
) -> Result<FieldSample> {
    settings.validate()?;
    let prep = Prepared::new(chart);
    let mut seeds = prep.fold_near(q, settings);
    if seeds.is_empty() {
        seeds = prep
            .branches_at(q)
            .iter()
            .map(|b| chart.segment(b.segment_index).0)
            .collect();
    }
    let mut sample = momentum_prepared(&prep, q, &seeds, settings)?;
    if seeds.is_empty() {
        sample.method = Method::BranchSum;
    }
    Ok(sample)
}

/// Field along `q_grid`: branch sums where every branch is regular,
/// momentum integrals near folds.
pub fn field_profile(
    chart: &MarkerChart,
    q_grid: &[f64],
    settings: &ReconstructSettings,
) -> Result<Vec<FieldSample>> {
    settings.validate()?;
    let prep = Prepared::new(chart);
    let results: Vec<Result<FieldSample>> = q_grid
        .par_iter()
        .map(|&q| match field_at_prepared(&prep, q, settings) {
            Err(Error::CausticAtQuery { .. }) => {
                let seeds = prep.fold_near(q, settings);
                let seeds = if seeds.is_empty() {
                    // a fold segment without a fold node inside the margin
                    prep.branches_at(q)
                        .iter()
                        .filter(|b| b.slope < settings.caustic_threshold)
                        .map(|b| {
                            let (i, j, _) = chart.segment(b.segment_index);
                            if prep.q_slope[i].abs() <= prep.q_slope[j].abs() {
                                i
                            } else {
                                j
                            }
                        })
                        .collect()
                } else {
                    seeds
                };
                momentum_prepared(&prep, q, &seeds, settings)
            }
            other => other,
        })
        .collect();
    results.into_iter().collect()
}
