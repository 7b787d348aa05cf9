//! Plain-text export of charts, diagnostics and field profiles.
//!
//! Floats are written with `{}`, the shortest representation that parses
//! back to the same value, so files round-trip bit-exactly.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::StepDiagnostics;
use crate::error::{Error, Result};
use crate::manifold::{MarkerChart, PhasePoint, Topology};
use crate::reconstruct::FieldSample;

pub const CHART_COLUMNS: &str = "label,q,p,weight,phase,maslov";
pub const DIAGNOSTICS_COLUMNS: &str = "t,p_phi,energy,coherence,bs_residual,n_markers";
pub const PROFILE_COLUMNS: &str = "q,re,im,abs,n_branches,method";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChartHeader {
    topology: Topology,
    base_index: usize,
    epsilon: f64,
    period: Option<f64>,
}

/// Chart CSV: a `# {json}` header line, the column line, one row per marker.
pub fn chart_to_csv(chart: &MarkerChart) -> String {
    let header = ChartHeader {
        topology: chart.topology,
        base_index: chart.base_index,
        epsilon: chart.epsilon,
        period: match chart.topology {
            Topology::Circle { period } => Some(period),
            Topology::Line => None,
        },
    };
    let mut out = String::new();
    let json = serde_json::to_string(&header).expect("header serializes");
    writeln!(out, "# {json}").unwrap();
    writeln!(out, "{CHART_COLUMNS}").unwrap();
    for i in 0..chart.len() {
        let z = chart.points[i];
        writeln!(
            out,
            "{},{},{},{},{},{}",
            chart.labels[i], z.q, z.p, chart.weights[i], chart.phases[i], chart.maslov[i]
        )
        .unwrap();
    }
    out
}

pub fn chart_from_csv(text: &str) -> Result<MarkerChart> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Parse("missing `# {json}` header line".into()))?;
    let header: ChartHeader =
        serde_json::from_str(header).map_err(|e| Error::Parse(format!("chart header: {e}")))?;
    if lines.next() != Some(CHART_COLUMNS) {
        return Err(Error::Parse(format!("expected columns `{CHART_COLUMNS}`")));
    }
    let (mut labels, mut points, mut weights, mut phases, mut maslov) =
        (vec![], vec![], vec![], vec![], vec![]);
    for (row, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(Error::Parse(format!("row {row}: expected 6 columns")));
        }
        let f = |k: usize| -> Result<f64> {
            cols[k]
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad number `{}`", cols[k])))
        };
        labels.push(f(0)?);
        points.push(PhasePoint::new(f(1)?, f(2)?));
        weights.push(f(3)?);
        phases.push(f(4)?);
        maslov.push(
            cols[5]
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad counter `{}`", cols[5])))?,
        );
    }
    MarkerChart::new(
        labels,
        points,
        weights,
        phases,
        maslov,
        header.base_index,
        header.topology,
        header.epsilon,
    )
}

/// Diagnostics CSV; `bs_residual` is empty on line charts.
pub fn diagnostics_to_csv(rows: &[StepDiagnostics]) -> String {
    let mut out = format!("{DIAGNOSTICS_COLUMNS}\n");
    for d in rows {
        let bs = d.bs_residual.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            d.t, d.p_phi, d.energy, d.coherence, bs, d.n_markers
        )
        .unwrap();
    }
    out
}

pub fn profile_to_csv(samples: &[FieldSample]) -> String {
    let mut out = format!("{PROFILE_COLUMNS}\n");
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.q,
            s.value.re,
            s.value.im,
            s.value.norm(),
            s.branches.len(),
            s.method.as_str()
        )
        .unwrap();
    }
    out
}

/// `frame_000042.csv`.
pub fn frame_file_name(prefix: &str, frame: usize) -> String {
    format!("{prefix}_{frame:06}.csv")
}
