//! PNG rendering of duration traces as stacked segment bars.

use std::path::Path;

use comedic_core::trace::{layout_traces, DurationTrace, PlotGeometry, PlotLayout};
use image::{Rgb, RgbImage};

use crate::error::{Result, SpeechError};

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const SEPARATOR: Rgb<u8> = Rgb([40, 40, 40]);

/// Rasterizes a layout. Bars span `[round(x), round(x + width))`, so
/// neighbours touch without overlapping; each bar gets a one-pixel dark
/// left edge to keep repeated labels apart.
pub fn render(layout: &PlotLayout) -> RgbImage {
    let w = layout.width.ceil().max(1.0) as u32;
    let h = layout.height.ceil().max(1.0) as u32;
    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);
    for row in &layout.rows {
        let y0 = row.y.round() as u32;
        let y1 = ((row.y + row.height).round() as u32).min(h);
        for bar in &row.bars {
            let x0 = bar.x.round() as u32;
            let x1 = ((bar.x + bar.width).round() as u32).min(w);
            for x in x0..x1 {
                let color = if x == x0 && x1 - x0 > 2 { SEPARATOR } else { Rgb(bar.color) };
                for y in y0..y1 {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}

/// Lays out and writes `traces` as a PNG; returns the layout used.
pub fn plot_durations(traces: &[DurationTrace], path: &Path) -> Result<PlotLayout> {
    let layout = layout_traces(traces, &PlotGeometry::default())?;
    render(&layout).save(path).map_err(|e| SpeechError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_segment_is_one_colored_bar() {
        let t = DurationTrace::from_durations("gt", &["a".to_string()], &[10]).unwrap();
        let layout = layout_traces(&[t], &PlotGeometry::default()).unwrap();
        let img = render(&layout);
        let bar = &layout.rows[0].bars[0];
        let y = (layout.rows[0].y + 5.0) as u32;
        let mid = (bar.x + bar.width / 2.0) as u32;
        assert_eq!(img.get_pixel(mid, y).0, bar.color);
        assert_eq!(*img.get_pixel(5, y), BACKGROUND);
    }
}
