//! Phoneme duration traces: how many frames a synthesized utterance spends
//! on each phoneme, their comparison, and the geometry of the stacked
//! segment chart.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSegment {
    pub label: String,
    pub start: usize,
    pub frames: usize,
}

/// Segments of one synthesized utterance, contiguous from frame 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationTrace {
    /// Row title, e.g. the model or speaker.
    pub name: String,
    pub segments: Vec<TraceSegment>,
}

impl DurationTrace {
    pub fn from_durations(name: &str, labels: &[String], durations: &[usize]) -> Result<Self> {
        if labels.len() != durations.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} durations",
                labels.len(),
                durations.len()
            )));
        }
        let mut start = 0;
        let segments = labels
            .iter()
            .zip(durations)
            .map(|(label, &frames)| {
                let s = TraceSegment {
                    label: label.clone(),
                    start,
                    frames,
                };
                start += frames;
                s
            })
            .collect();
        Ok(Self {
            name: name.into(),
            segments,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.frames).sum()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn durations(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.frames).collect()
    }

    /// Checks that the segments partition `[0, total)`.
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidInput(format!("trace `{}` has no segments", self.name)));
        }
        let mut expected = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start != expected {
                return Err(Error::InvalidInput(format!(
                    "trace `{}`: segment {i} starts at {} instead of {expected}",
                    self.name, s.start
                )));
            }
            expected += s.frames;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationComparison {
    pub labels: Vec<String>,
    /// `b − a` frames per segment.
    pub deltas: Vec<i64>,
    pub total_delta: i64,
    /// Spearman correlation of the two duration sequences.
    pub rank_correlation: f64,
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation. Identical sequences give 1; if only one of
/// them is constant the correlation is undefined and reported as 0.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / libm::sqrt(va * vb)).clamp(-1.0, 1.0)
}

pub fn compare_durations(a: &DurationTrace, b: &DurationTrace) -> Result<DurationComparison> {
    a.validate()?;
    b.validate()?;
    if a.labels() != b.labels() {
        return Err(Error::InvalidInput(format!(
            "traces `{}` and `{}` cover different phoneme sequences",
            a.name, b.name
        )));
    }
    let da: Vec<f64> = a.durations().iter().map(|&d| d as f64).collect();
    let db: Vec<f64> = b.durations().iter().map(|&d| d as f64).collect();
    let deltas: Vec<i64> = a
        .segments
        .iter()
        .zip(&b.segments)
        .map(|(x, y)| y.frames as i64 - x.frames as i64)
        .collect();
    Ok(DurationComparison {
        labels: a.segments.iter().map(|s| s.label.clone()).collect(),
        total_delta: deltas.iter().sum(),
        deltas,
        rank_correlation: spearman(&da, &db),
    })
}

/// FNV-1a, used to key colors by label.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stable color of a phoneme label.
pub fn label_color(label: &str) -> [u8; 3] {
    let h = fnv1a(label.as_bytes());
    let hue = (h % 360) as f64;
    let sat = 0.55 + ((h >> 16) % 30) as f64 / 100.0;
    let val = 0.75 + ((h >> 32) % 20) as f64 / 100.0;
    hsv_to_rgb(hue, sat, val)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - libm::fabs(hp % 2.0 - 1.0));
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |u: f64| libm::round((u + m) * 255.0) as u8;
    [to(r), to(g), to(b)]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotGeometry {
    /// Left offset reserved for row titles.
    pub margin_left: f64,
    pub margin_top: f64,
    /// Width available for the longest trace.
    pub plot_width: f64,
    pub row_height: f64,
    pub row_gap: f64,
}

impl Default for PlotGeometry {
    fn default() -> Self {
        Self {
            margin_left: 120.0,
            margin_top: 20.0,
            plot_width: 800.0,
            row_height: 28.0,
            row_gap: 12.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub label: String,
    pub x: f64,
    pub width: f64,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub name: String,
    pub y: f64,
    pub height: f64,
    pub bars: Vec<Bar>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotLayout {
    pub width: f64,
    pub height: f64,
    /// Horizontal pixels per frame, shared by all rows.
    pub frame_width: f64,
    pub rows: Vec<PlotRow>,
}

/// One row per trace; bar widths are proportional to frame counts on a
/// common scale so row lengths compare directly.
pub fn layout_traces(traces: &[DurationTrace], geom: &PlotGeometry) -> Result<PlotLayout> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("no traces to plot".into()));
    }
    for t in traces {
        t.validate()?;
    }
    let longest = traces.iter().map(DurationTrace::total_frames).max().unwrap_or(0).max(1);
    let frame_width = geom.plot_width / longest as f64;
    let rows = traces
        .iter()
        .enumerate()
        .map(|(i, t)| PlotRow {
            name: t.name.clone(),
            y: geom.margin_top + i as f64 * (geom.row_height + geom.row_gap),
            height: geom.row_height,
            bars: t
                .segments
                .iter()
                .map(|s| Bar {
                    label: s.label.clone(),
                    x: geom.margin_left + s.start as f64 * frame_width,
                    width: s.frames as f64 * frame_width,
                    color: label_color(&s.label),
                })
                .collect(),
        })
        .collect();
    let n = traces.len() as f64;
    Ok(PlotLayout {
        width: geom.margin_left + geom.plot_width + geom.margin_top,
        height: 2.0 * geom.margin_top + n * geom.row_height + (n - 1.0) * geom.row_gap,
        frame_width,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn starts_follow_durations() {
        let t = DurationTrace::from_durations("m", &labels(&["a", "b", "c"]), &[2, 3, 1]).unwrap();
        let starts: Vec<usize> = t.segments.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0, 2, 5]);
        assert_eq!(t.total_frames(), 6);
    }

    #[test]
    fn identical_and_reversed_rankings() {
        let l = labels(&["a", "b", "c", "d"]);
        let a = DurationTrace::from_durations("a", &l, &[1, 2, 3, 4]).unwrap();
        let same = compare_durations(&a, &a).unwrap();
        assert!(same.deltas.iter().all(|&d| d == 0));
        assert_eq!(same.rank_correlation, 1.0);
        let b = DurationTrace::from_durations("b", &l, &[9, 7, 5, 2]).unwrap();
        let r = compare_durations(&a, &b).unwrap();
        assert!((r.rank_correlation + 1.0).abs() < 1e-12);
        assert_eq!(r.deltas, vec![8, 5, 2, -2]);
        assert_eq!(r.total_delta, 13);
        let other = DurationTrace::from_durations("c", &labels(&["a", "b", "x", "d"]), &[1, 2, 3, 4]).unwrap();
        assert!(compare_durations(&a, &other).is_err());
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn colors_are_keyed_by_label() {
        let a = DurationTrace::from_durations("a", &labels(&["y", "uw1"]), &[3, 2]).unwrap();
        let b = DurationTrace::from_durations("b", &labels(&["n", "uw1", "y"]), &[1, 1, 4]).unwrap();
        let layout = layout_traces(&[a, b], &PlotGeometry::default()).unwrap();
        assert_eq!(layout.rows[0].bars[1].color, layout.rows[1].bars[1].color);
        assert_eq!(layout.rows[0].bars[0].color, layout.rows[1].bars[2].color);
        assert!(layout_traces(&[], &PlotGeometry::default()).is_err());
    }
}
