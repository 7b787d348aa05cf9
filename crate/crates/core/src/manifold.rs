//! Discretized Lagrangian curves: markers carrying position, density
//! component, parallel-section phase and an integer Maslov counter.
//!
//! Densities are stored as components in the label coordinate; every
//! integral over the curve is the composite trapezoid rule in the label,
//! so the node masses `weight_i * w_i` (with `w_i` the dual-cell width)
//! are the relabeling-invariant content of the density.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(q: f64, p: f64) -> Self {
        PhasePoint { q, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// Periodic labels; the label of marker 0 plus `period` closes the loop.
    Circle {
        period: f64,
    },
    Line,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerChart {
    pub labels: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub weights: Vec<f64>,
    pub phases: Vec<f64>,
    pub maslov: Vec<i64>,
    pub base_index: usize,
    pub topology: Topology,
    pub epsilon: f64,
}

/// Corrected Bohr-Sommerfeld data of a closed chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationData {
    pub loop_action: f64,
    pub maslov_index: i64,
    pub bs_residual: f64,
    pub bs_integer: i64,
}

/// Orientation-preserving relabeling of the marker labels.
#[derive(Clone)]
pub enum GaugeMap {
    Identity,
    /// Circle only: marker `j` of the result is marker `j + k` of the input.
    Shift(usize),
    /// Uniform dilation `x -> factor * x`.
    Scale(f64),
    /// Arbitrary increasing map of the label line. For circles the map must
    /// commute with translation by the period.
    Monotone(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for GaugeMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GaugeMap::Identity => write!(f, "Identity"),
            GaugeMap::Shift(k) => write!(f, "Shift({k})"),
            GaugeMap::Scale(a) => write!(f, "Scale({a})"),
            GaugeMap::Monotone(_) => write!(f, "Monotone(..)"),
        }
    }
}

pub(crate) fn sign(x: f64) -> i64 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

impl MarkerChart {
    /// Validating constructor.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        labels: Vec<f64>,
        points: Vec<PhasePoint>,
        weights: Vec<f64>,
        phases: Vec<f64>,
        maslov: Vec<i64>,
        base_index: usize,
        topology: Topology,
        epsilon: f64,
    ) -> Result<Self> {
        let chart = MarkerChart {
            labels,
            points,
            weights,
            phases,
            maslov,
            base_index,
            topology,
            epsilon,
        };
        chart.validate()?;
        Ok(chart)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n < 2 {
            return Err(Error::InvalidChart("need at least two markers".into()));
        }
        if self.points.len() != n
            || self.weights.len() != n
            || self.phases.len() != n
            || self.maslov.len() != n
        {
            return Err(Error::InvalidChart("field lengths differ".into()));
        }
        if let Some(i) = (1..n).find(|&i| self.labels[i] <= self.labels[i - 1]) {
            return Err(Error::NonMonotoneLabels(i));
        }
        if let Topology::Circle { period } = self.topology {
            if !(period > self.labels[n - 1] - self.labels[0]) {
                return Err(Error::InvalidChart(
                    "circle labels must span less than one period".into(),
                ));
            }
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidChart(
                "weights must be finite and >= 0".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidChart("epsilon must be positive".into()));
        }
        if self.base_index >= n {
            return Err(Error::InvalidChart("base_index out of range".into()));
        }
        if self
            .points
            .iter()
            .any(|z| !(z.q.is_finite() && z.p.is_finite()))
        {
            return Err(Error::InvalidChart("non-finite marker position".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_circle(&self) -> bool {
        matches!(self.topology, Topology::Circle { .. })
    }

    pub fn segment_count(&self) -> usize {
        match self.topology {
            Topology::Circle { .. } => self.len(),
            Topology::Line => self.len() - 1,
        }
    }

    /// Endpoints `(i, j)` and label increment of segment `s`.
    pub fn segment(&self, s: usize) -> (usize, usize, f64) {
        let n = self.len();
        if s + 1 < n {
            (s, s + 1, self.labels[s + 1] - self.labels[s])
        } else {
            match self.topology {
                Topology::Circle { period } => {
                    (n - 1, 0, self.labels[0] + period - self.labels[n - 1])
                }
                Topology::Line => panic!("segment index {s} out of range"),
            }
        }
    }

    pub(crate) fn prev(&self, i: usize) -> Option<usize> {
        match (i, self.topology) {
            (0, Topology::Line) => None,
            (0, Topology::Circle { .. }) => Some(self.len() - 1),
            _ => Some(i - 1),
        }
    }

    pub(crate) fn next(&self, i: usize) -> Option<usize> {
        let n = self.len();
        match (i + 1 == n, self.topology) {
            (true, Topology::Line) => None,
            (true, Topology::Circle { .. }) => Some(0),
            _ => Some(i + 1),
        }
    }

    /// Trapezoid weights (dual-cell widths) in the label coordinate.
    pub fn quad_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        for s in 0..self.segment_count() {
            let (i, j, dx) = self.segment(s);
            w[i] += 0.5 * dx;
            w[j] += 0.5 * dx;
        }
        w
    }

    /// Node masses `weight_i * w_i`.
    pub fn node_masses(&self) -> Vec<f64> {
        self.quad_weights()
            .iter()
            .zip(&self.weights)
            .map(|(w, m)| w * m)
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.node_masses().iter().sum()
    }

    /// Half the signed `q` extent of the dual cell of node `i`.
    pub(crate) fn dual_dq(&self, i: usize) -> f64 {
        let z = &self.points;
        match (self.prev(i), self.next(i)) {
            (Some(a), Some(b)) => 0.5 * (z[b].q - z[a].q),
            (None, Some(b)) => 0.5 * (z[b].q - z[i].q),
            (Some(a), None) => 0.5 * (z[i].q - z[a].q),
            (None, None) => 0.0,
        }
    }

    pub(crate) fn dual_dp(&self, i: usize) -> f64 {
        let z = &self.points;
        match (self.prev(i), self.next(i)) {
            (Some(a), Some(b)) => 0.5 * (z[b].p - z[a].p),
            (None, Some(b)) => 0.5 * (z[b].p - z[i].p),
            (Some(a), None) => 0.5 * (z[i].p - z[a].p),
            (None, None) => 0.0,
        }
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        let (za, zb) = (self.points[a], self.points[b]);
        (zb.q - za.q).hypot(zb.p - za.p)
    }

    /// Half the phase-space arclength of the dual cell of node `i`.
    pub(crate) fn dual_arclength(&self, i: usize) -> f64 {
        let left = self.prev(i).map_or(0.0, |a| self.dist(a, i));
        let right = self.next(i).map_or(0.0, |b| self.dist(i, b));
        0.5 * (left + right)
    }

    /// Signed cosine between the curve tangent at node `i` and the `q` axis.
    /// Depends only on marker positions, so it is relabeling invariant.
    pub fn projection_slope(&self, i: usize) -> f64 {
        let l = self.dual_arclength(i);
        if l > 0.0 {
            self.dual_dq(i) / l
        } else {
            0.0
        }
    }

    /// Signed cosine between the curve tangent and the `p` axis.
    pub fn momentum_slope(&self, i: usize) -> f64 {
        let l = self.dual_arclength(i);
        if l > 0.0 {
            self.dual_dp(i) / l
        } else {
            0.0
        }
    }

    /// Trapezoid value of `int p dq` over segment `s`.
    pub fn segment_action(&self, s: usize) -> f64 {
        let (i, j, _) = self.segment(s);
        let (a, b) = (self.points[i], self.points[j]);
        0.5 * (a.p + b.p) * (b.q - a.q)
    }

    /// Counter increment when passing from node `a` to its label successor
    /// `b` across a vertical tangent. A fold met while the curve turns
    /// clockwise in the `(q, p)` plane adds `+1`; this is the same rule the
    /// time stepper applies to a marker crossing a focus.
    pub(crate) fn counter_step(&self, a: usize, b: usize) -> i64 {
        let (ka, kb) = (self.dual_dq(a), self.dual_dq(b));
        if sign(ka) == sign(kb) {
            return 0;
        }
        let dp = self.dual_dp(a) + self.dual_dp(b);
        sign(kb - ka) * sign(dp)
    }

    /// Phase and counter jumps met when the section is continued across the
    /// circle cut, from marker `n - 1` to marker 0.
    pub(crate) fn cut_offsets(&self) -> (f64, i64) {
        let n = self.len();
        (
            self.phases[n - 1] + self.segment_action(n - 1) - self.phases[0],
            self.maslov[n - 1] + self.counter_step(n - 1, 0) - self.maslov[0],
        )
    }

    /// Phase and counter increments along segment `s`, continued across the cut.
    pub(crate) fn segment_increments(&self, s: usize) -> (f64, i64) {
        let (i, j, _) = self.segment(s);
        if j == 0 {
            (self.segment_action(s), self.counter_step(i, j))
        } else {
            (
                self.phases[j] - self.phases[i],
                self.maslov[j] - self.maslov[i],
            )
        }
    }

    /// Base-point phase `phi` (the section value at the distinguished marker).
    pub fn base_phase(&self) -> f64 {
        self.phases[self.base_index]
    }

    /// Stored phase reduced modulo `epsilon * pi / 2`.
    pub fn reduced_phase(&self, i: usize) -> f64 {
        reduce_phase(self.phases[i], self.epsilon)
    }
}

/// Reduce an unreduced phase to `[0, epsilon * pi / 2)`.
pub fn reduce_phase(phase: f64, epsilon: f64) -> f64 {
    phase.rem_euclid(epsilon * PI / 2.0)
}

/// Chart of the graph of `dS` over `grid`: markers `(q_i, S'(q_i))`,
/// weights `amp(q_i)^2`, phases `S(q_i)`.
pub fn init_from_phase_function(
    s: impl Fn(f64) -> f64,
    ds: impl Fn(f64) -> f64,
    amp: impl Fn(f64) -> f64,
    grid: &[f64],
    epsilon: f64,
) -> Result<MarkerChart> {
    if let Some(i) = (1..grid.len()).find(|&i| grid[i] <= grid[i - 1]) {
        return Err(Error::NonMonotoneLabels(i));
    }
    let points = grid.iter().map(|&q| PhasePoint::new(q, ds(q))).collect();
    let weights = grid
        .iter()
        .map(|&q| {
            let a = amp(q);
            a * a
        })
        .collect();
    let phases = grid.iter().map(|&q| s(q)).collect();
    MarkerChart::new(
        grid.to_vec(),
        points,
        weights,
        phases,
        vec![0; grid.len()],
        0,
        Topology::Line,
        epsilon,
    )
}

/// `n` equally spaced nodes on `[a, b]`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + h * i as f64).collect()
}

/// Clockwise circle of `radius` about `center` (the orientation of harmonic
/// rays), labels `x_i = (i + 1/2) 2 pi / n` so that no marker sits on a
/// vertical tangent. Phases follow the trapezoid section from marker 0 and
/// counters follow the fold rule along the labels.
pub fn init_circle(
    center: PhasePoint,
    radius: f64,
    n: usize,
    epsilon: f64,
    total_weight: f64,
) -> Result<MarkerChart> {
    if n < 4 || !(radius > 0.0) {
        return Err(Error::InvalidChart(
            "circle needs radius > 0 and at least 4 markers".into(),
        ));
    }
    let period = 2.0 * PI;
    let labels: Vec<f64> = (0..n)
        .map(|i| (i as f64 + 0.5) * period / n as f64)
        .collect();
    let points = labels
        .iter()
        .map(|&x| PhasePoint::new(center.q + radius * x.cos(), center.p - radius * x.sin()))
        .collect();
    let mut chart = MarkerChart::new(
        labels,
        points,
        vec![total_weight / period; n],
        vec![0.0; n],
        vec![0; n],
        0,
        Topology::Circle { period },
        epsilon,
    )?;
    chart.rebuild_section();
    Ok(chart)
}

impl MarkerChart {
    /// Recompute phases and counters by integrating along the labels from
    /// marker 0, keeping the base phase.
    pub fn rebuild_section(&mut self) {
        let n = self.len();
        let mut phases = vec![0.0; n];
        let mut maslov = vec![0i64; n];
        phases[0] = self.phases[0];
        maslov[0] = self.maslov[0];
        for s in 0..n - 1 {
            phases[s + 1] = phases[s] + self.segment_action(s);
            maslov[s + 1] = maslov[s] + self.counter_step(s, s + 1);
        }
        let shift = self.phases[self.base_index] - phases[self.base_index];
        self.phases = phases.into_iter().map(|s| s + shift).collect();
        self.maslov = maslov;
    }
}

/// Loop action, Maslov index and corrected Bohr-Sommerfeld residual.
///
/// The reported index counts `-1` at every vertical tangent passed while
/// the loop turns clockwise, which yields `-2` for harmonic-oscillator
/// circles.
pub fn quantization_data(chart: &MarkerChart) -> Result<QuantizationData> {
    if !chart.is_circle() {
        return Err(Error::OpenTopology);
    }
    let n = chart.len();
    let loop_action: f64 = (0..n).map(|s| chart.segment_action(s)).sum();
    let seg_dq = |s: usize| {
        let (i, j, _) = chart.segment(s);
        chart.points[j].q - chart.points[i].q
    };
    let mut maslov_index = 0i64;
    for v in 0..n {
        // vertex v joins segment v-1 and segment v
        let before = seg_dq((v + n - 1) % n);
        let after = seg_dq(v);
        if sign(before) != sign(after) {
            let a = chart.points[(v + n - 1) % n].p;
            let b = chart.points[(v + 1) % n].p;
            maslov_index -= sign(after - before) * sign(b - a);
        }
    }
    let eps = chart.epsilon;
    let value = 0.5 * eps * PI * maslov_index as f64 + loop_action;
    let cycle = 2.0 * PI * eps;
    let bs_integer = (value / cycle).round() as i64;
    let bs_residual = (value - cycle * bs_integer as f64).abs();
    Ok(QuantizationData {
        loop_action,
        maslov_index,
        bs_residual,
        bs_integer,
    })
}

/// Default marker count for the circles used by [`quantize_circles`].
pub const QUANTIZE_MARKERS: usize = 16384;

/// One quantized circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLevel {
    pub n: i64,
    pub radius: f64,
    /// `radius^2`.
    pub level: f64,
    pub bs_residual: f64,
    pub loop_action: f64,
    pub maslov_index: i64,
}

/// Radii of the circles about `center` that satisfy the corrected
/// Bohr-Sommerfeld condition with integer `n = 0, 1, ...`, found by
/// bisection on the signed residual inside `radius_range`.
pub fn quantize_circles(
    center: PhasePoint,
    radius_range: (f64, f64),
    n_levels: usize,
    epsilon: f64,
    markers: usize,
) -> Result<Vec<QuantizedLevel>> {
    let (lo, hi) = radius_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter {
            name: "radius_range".into(),
            reason: "need 0 < min < max".into(),
        });
    }
    let cycle = 2.0 * PI * epsilon;
    let data = |r: f64| quantization_data(&init_circle(center, r, markers, epsilon, 1.0)?);
    let signed = |r: f64, n: i64| -> Result<f64> {
        let d = data(r)?;
        Ok(0.5 * epsilon * PI * d.maslov_index as f64 + d.loop_action - cycle * n as f64)
    };
    let mut levels = Vec::with_capacity(n_levels);
    for n in 0..n_levels as i64 {
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (signed(a, n)?, signed(b, n)?);
        if fa.signum() == fb.signum() {
            return Err(Error::InvalidParameter {
                name: "radius_range".into(),
                reason: format!("level {n} is not bracketed"),
            });
        }
        let rising = fb > fa;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if (signed(m, n)? > 0.0) == rising {
                b = m;
            } else {
                a = m;
            }
        }
        let radius = 0.5 * (a + b);
        let d = data(radius)?;
        levels.push(QuantizedLevel {
            n,
            radius,
            level: radius * radius,
            bs_residual: d.bs_residual,
            loop_action: d.loop_action,
            maslov_index: d.maslov_index,
        });
    }
    Ok(levels)
}

/// Largest mismatch between stored phase increments and the trapezoid
/// line integral of `p dq` along each segment.
pub fn phase_coherence_residual(chart: &MarkerChart) -> f64 {
    let n = chart.len();
    let mut worst = 0.0f64;
    for s in 0..n - 1 {
        let r = (chart.phases[s + 1] - chart.phases[s]) - chart.segment_action(s);
        worst = worst.max(r.abs());
    }
    if chart.is_circle() {
        let cycle = 2.0 * PI * chart.epsilon;
        let loop_action: f64 = (0..n).map(|s| chart.segment_action(s)).sum();
        let k = (loop_action / cycle).round();
        if (loop_action - k * cycle).abs() <= 1e-9 * loop_action.abs().max(1.0) {
            let r = (chart.phases[0] - chart.phases[n - 1]) - chart.segment_action(n - 1);
            let r = r - cycle * (r / cycle).round();
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Relabel the chart. Marker positions, phases and counters ride with the
/// markers; weights are divided by the ratio of dual-cell widths so node
/// masses are preserved.
pub fn gauge_transform(chart: &MarkerChart, g: &GaugeMap) -> Result<MarkerChart> {
    let n = chart.len();
    match g {
        GaugeMap::Identity => Ok(chart.clone()),
        GaugeMap::Shift(k) => {
            let Topology::Circle { .. } = chart.topology else {
                return Err(Error::GaugeTopologyMismatch);
            };
            let k = k % n;
            if k == 0 {
                return Ok(chart.clone());
            }
            // continuation of the section across the cut
            let (cut_phase, cut_counter) = chart.cut_offsets();
            let masses = chart.node_masses();
            let mut out = chart.clone();
            for j in 0..n {
                let old = (j + k) % n;
                let wrapped = old < k;
                out.points[j] = chart.points[old];
                out.phases[j] = chart.phases[old] + if wrapped { cut_phase } else { 0.0 };
                out.maslov[j] = chart.maslov[old] + if wrapped { cut_counter } else { 0 };
            }
            let w_new = out.quad_weights();
            for j in 0..n {
                out.weights[j] = masses[(j + k) % n] / w_new[j];
            }
            Ok(out)
        }
        GaugeMap::Scale(a) => {
            if !(*a > 0.0) {
                return Err(Error::OrientationReversing);
            }
            let a = *a;
            relabel(chart, &|x| a * x, Some(a))
        }
        GaugeMap::Monotone(f) => relabel(chart, f.as_ref(), None),
    }
}

fn relabel(chart: &MarkerChart, f: &dyn Fn(f64) -> f64, scale: Option<f64>) -> Result<MarkerChart> {
    let n = chart.len();
    let labels: Vec<f64> = chart.labels.iter().map(|&x| f(x)).collect();
    if (1..n).all(|i| labels[i] < labels[i - 1]) {
        return Err(Error::OrientationReversing);
    }
    if let Some(i) = (1..n).find(|&i| labels[i] <= labels[i - 1]) {
        return Err(Error::NonMonotoneLabels(i));
    }
    let masses = chart.node_masses();
    let mut out = chart.clone();
    out.labels = labels;
    if let Topology::Circle { period } = chart.topology {
        let new_period = match scale {
            Some(a) => a * period,
            None => {
                let x0 = chart.labels[0];
                let p = f(x0 + period) - f(x0);
                if !(p > 0.0) {
                    return Err(Error::OrientationReversing);
                }
                p
            }
        };
        out.topology = Topology::Circle { period: new_period };
    }
    let w_new = out.quad_weights();
    for i in 0..n {
        out.weights[i] = masses[i] / w_new[i];
    }
    out.validate()?;
    Ok(out)
}

/// Cubic (four-point Lagrange) interpolation of marker positions at label `x`
/// inside segment `s`; falls back to three points at open ends.
fn interpolate_point(chart: &MarkerChart, s: usize, x: f64) -> PhasePoint {
    let (i, j, dx) = chart.segment(s);
    // stencil of (label, point) with labels unwrapped across the circle cut
    let mut stencil: Vec<(f64, PhasePoint)> = Vec::with_capacity(4);
    let xi = chart.labels[i];
    let xj = xi + dx;
    if let Some(a) = chart.prev(i) {
        if a != j {
            stencil.push((xi - chart.segment(a).2, chart.points[a]));
        }
    }
    stencil.push((xi, chart.points[i]));
    stencil.push((xj, chart.points[j]));
    if let Some(b) = chart.next(j) {
        if b != i && chart.prev(i) != Some(b) {
            stencil.push((xj + chart.segment(j).2, chart.points[b]));
        }
    }
    let mut q = 0.0;
    let mut p = 0.0;
    for (k, (xk, zk)) in stencil.iter().enumerate() {
        let mut l = 1.0;
        for (m, (xm, _)) in stencil.iter().enumerate() {
            if m != k {
                l *= (x - xm) / (xk - xm);
            }
        }
        q += l * zk.q;
        p += l * zk.p;
    }
    PhasePoint::new(q, p)
}

const REFINE_MAX_PASSES: usize = 24;

/// Insert midpoint markers wherever neighbors are farther apart than
/// `max_spacing` in `q` or `p`, repeating until the chart is resolved.
pub fn refine(chart: &MarkerChart, max_spacing: f64) -> MarkerChart {
    let mut current = chart.clone();
    if !(max_spacing > 0.0) {
        return current;
    }
    for _ in 0..REFINE_MAX_PASSES {
        let (next, inserted) = refine_pass(&current, max_spacing);
        current = next;
        if !inserted {
            break;
        }
    }
    current
}

fn refine_pass(chart: &MarkerChart, max_spacing: f64) -> (MarkerChart, bool) {
    let n = chart.len();
    let mut out = MarkerChart {
        labels: Vec::with_capacity(2 * n),
        points: Vec::with_capacity(2 * n),
        weights: Vec::with_capacity(2 * n),
        phases: Vec::with_capacity(2 * n),
        maslov: Vec::with_capacity(2 * n),
        base_index: 0,
        topology: chart.topology,
        epsilon: chart.epsilon,
    };
    let mut inserted = false;
    for i in 0..n {
        if i == chart.base_index {
            out.base_index = out.labels.len();
        }
        out.labels.push(chart.labels[i]);
        out.points.push(chart.points[i]);
        out.weights.push(chart.weights[i]);
        out.phases.push(chart.phases[i]);
        out.maslov.push(chart.maslov[i]);
        if i < chart.segment_count() {
            let (a, b, dx) = chart.segment(i);
            let (za, zb) = (chart.points[a], chart.points[b]);
            if (zb.q - za.q).abs() > max_spacing || (zb.p - za.p).abs() > max_spacing {
                let x = chart.labels[a] + 0.5 * dx;
                let zm = interpolate_point(chart, i, x);
                out.labels.push(x);
                out.points.push(zm);
                out.weights
                    .push(0.5 * (chart.weights[a] + chart.weights[b]));
                out.phases
                    .push(chart.phases[a] + 0.5 * (za.p + zm.p) * (zm.q - za.q));
                out.maslov.push(chart.maslov[a]);
                inserted = true;
            }
        }
    }
    (out, inserted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn linear_chart(n: usize) -> MarkerChart {
        init_from_phase_function(|q| q, |_| 1.0, |_| 1.0, &uniform_grid(0.0, 1.0, n), 0.1).unwrap()
    }

    #[test]
    fn init_examples() {
        let c = linear_chart(11);
        for i in 0..11 {
            assert_eq!(c.points[i].p, 1.0);
            assert_eq!(c.weights[i], 1.0);
            assert_eq!(c.phases[i], c.labels[i]);
            assert_eq!(c.maslov[i], 0);
        }
        let c = init_from_phase_function(
            |q| -q * q / 2.0,
            |q| -q,
            |_| 1.0,
            &uniform_grid(-1.0, 1.0, 21),
            0.1,
        )
        .unwrap();
        assert!(c.points.iter().all(|z| z.p == -z.q));
        let c = init_from_phase_function(
            |_| 0.0,
            |_| 0.0,
            |q| (-q * q).exp(),
            &uniform_grid(-2.0, 2.0, 9),
            0.1,
        )
        .unwrap();
        for (q, w) in c.labels.iter().zip(&c.weights) {
            assert_abs_diff_eq!(*w, (-2.0 * q * q).exp(), epsilon = 1e-15);
        }
    }

    #[test]
    fn non_monotone_grid_rejected() {
        let r = init_from_phase_function(|q| q, |_| 1.0, |_| 1.0, &[0.0, 0.5, 0.4], 0.1);
        assert_eq!(r.unwrap_err(), Error::NonMonotoneLabels(2));
    }

    #[test]
    fn circle_quantization_example() {
        let c = init_circle(PhasePoint::new(0.0, 0.0), 1.0, 256, 1.0 / 3.0, 1.0).unwrap();
        let qd = quantization_data(&c).unwrap();
        assert!((qd.loop_action - PI).abs() <= 1e-3, "{}", qd.loop_action);
        assert_eq!(qd.maslov_index, -2);
        assert_eq!(qd.bs_integer, 1);
        assert!(qd.bs_residual <= 1e-3);
    }

    #[test]
    fn reversed_circle_flips_action() {
        let c = init_circle(PhasePoint::new(0.0, 0.0), 1.0, 64, 0.1, 1.0).unwrap();
        let mut r = c.clone();
        r.points.reverse();
        r.rebuild_section();
        let (a, b) = (
            quantization_data(&c).unwrap(),
            quantization_data(&r).unwrap(),
        );
        assert_abs_diff_eq!(a.loop_action, -b.loop_action, epsilon = 1e-12);
        assert_eq!(a.maslov_index, -b.maslov_index);
    }

    #[test]
    fn line_has_no_loop_class() {
        assert_eq!(
            quantization_data(&linear_chart(5)),
            Err(Error::OpenTopology)
        );
    }

    #[test]
    fn circle_counters_wind_once() {
        let c = init_circle(PhasePoint::new(0.0, 0.0), 1.0, 64, 0.1, 1.0).unwrap();
        let n = c.len();
        let total = c.maslov[n - 1] + c.counter_step(n - 1, 0) - c.maslov[0];
        assert_eq!(total, 2);
        assert_eq!(-total, quantization_data(&c).unwrap().maslov_index);
    }

    #[test]
    fn coherence_examples() {
        assert!(phase_coherence_residual(&linear_chart(11)) < 1e-15);
        let cubic = init_from_phase_function(
            |q| q * q * q,
            |q| 3.0 * q * q,
            |_| 1.0,
            &uniform_grid(-1.0, 1.0, 101),
            0.1,
        )
        .unwrap();
        let r = phase_coherence_residual(&cubic);
        assert!(r <= 1e-3 && r > 0.0, "{r}");
        let mut bad = linear_chart(11);
        bad.phases[4] += 0.1;
        assert_abs_diff_eq!(phase_coherence_residual(&bad), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn coherence_converges_second_order() {
        let res = |n| {
            phase_coherence_residual(
                &init_from_phase_function(
                    |q: f64| q.sin(),
                    |q: f64| q.cos(),
                    |_| 1.0,
                    &uniform_grid(-1.0, 1.0, n),
                    0.1,
                )
                .unwrap(),
            )
        };
        let ratio = res(101) / res(201);
        // per-segment error is h^3, so the max residual drops 8x per halving
        assert!(ratio > 7.0 && ratio < 9.0, "{ratio}");
    }

    #[test]
    fn gauge_identity_and_dilation() {
        let c = linear_chart(11);
        assert_eq!(gauge_transform(&c, &GaugeMap::Identity).unwrap(), c);
        let d = gauge_transform(&c, &GaugeMap::Scale(2.0)).unwrap();
        for i in 0..11 {
            assert_abs_diff_eq!(d.weights[i], 0.5 * c.weights[i], epsilon = 1e-15);
        }
        assert_abs_diff_eq!(d.total_weight(), c.total_weight(), epsilon = 1e-12);
        assert_eq!(
            gauge_transform(&c, &GaugeMap::Scale(-1.0)),
            Err(Error::OrientationReversing)
        );
        assert_eq!(
            gauge_transform(&c, &GaugeMap::Monotone(Arc::new(|x| -x))),
            Err(Error::OrientationReversing)
        );
        assert_eq!(
            gauge_transform(&c, &GaugeMap::Shift(1)),
            Err(Error::GaugeTopologyMismatch)
        );
    }

    #[test]
    fn circle_shift_keeps_point_set() {
        let c = init_circle(PhasePoint::new(0.0, 0.0), 1.0, 32, 0.1, 1.0).unwrap();
        let s = gauge_transform(&c, &GaugeMap::Shift(5)).unwrap();
        let mut a: Vec<_> = c.points.iter().map(|z| (z.q, z.p)).collect();
        let mut b: Vec<_> = s.points.iter().map(|z| (z.q, z.p)).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
        assert_eq!(s.base_phase(), c.phases[5]);
        assert_abs_diff_eq!(s.total_weight(), c.total_weight(), epsilon = 1e-14);
        let (qa, qb) = (
            quantization_data(&c).unwrap(),
            quantization_data(&s).unwrap(),
        );
        assert_abs_diff_eq!(qa.loop_action, qb.loop_action, epsilon = 1e-13);
        assert_eq!(qa.maslov_index, qb.maslov_index);
        // the relabeled section stays coherent along the new cut
        assert!(phase_coherence_residual(&s) < 1e-13);
    }

    #[test]
    fn refine_examples() {
        let c = linear_chart(11);
        assert_eq!(refine(&c, 0.5), c);
        let fine = refine(&c, 0.09);
        assert_eq!(fine.len(), 21);
        assert_abs_diff_eq!(fine.total_weight(), c.total_weight(), epsilon = 1e-12);
        let action =
            |c: &MarkerChart| -> f64 { (0..c.segment_count()).map(|s| c.segment_action(s)).sum() };
        assert_abs_diff_eq!(action(&fine), action(&c), epsilon = 1e-12);
        assert!(phase_coherence_residual(&fine) < 1e-14);
    }

    #[test]
    fn refine_circle_closure() {
        let c = init_circle(PhasePoint::new(0.0, 0.0), 1.0, 16, 0.1, 1.0).unwrap();
        let fine = refine(&c, 0.2);
        assert!(fine.len() > 16);
        fine.validate().unwrap();
        assert_abs_diff_eq!(fine.total_weight(), c.total_weight(), epsilon = 1e-12);
        for z in &fine.points {
            assert_abs_diff_eq!(z.q.hypot(z.p), 1.0, epsilon = 5e-3);
        }
    }

    #[test]
    fn quantized_harmonic_levels() {
        let eps = 0.05;
        let levels = quantize_circles(
            PhasePoint::new(0.0, 0.0),
            (0.05, 1.5),
            5,
            eps,
            QUANTIZE_MARKERS,
        )
        .unwrap();
        for l in &levels {
            // oracle: harmonic oscillator levels (n + 1/2) eps with E = r^2 / 2
            assert!(
                (l.level - eps * (2 * l.n + 1) as f64).abs() <= 1e-6,
                "{l:?}"
            );
            assert_eq!(l.maslov_index, -2);
            assert!(l.bs_residual <= 1e-9);
        }
        let err = quantize_circles(PhasePoint::new(0.0, 0.0), (0.5, 0.6), 1, eps, 64);
        assert_eq!(err.unwrap_err().kind(), "InvalidParameter");
    }
}
