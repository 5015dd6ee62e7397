//! SVG scatter figures for 2-d projections with cluster overlays.
//!
//! Rendering is a pure function of the inputs: the same projection, titles,
//! and layout always produce byte-identical SVG. Cluster labels are carried
//! alongside the coordinates and are never recomputed here — the clustering
//! stage owns them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::clustering::{Entity, Representation};
use crate::dataset::canonical_real;
use crate::models::Arch;
use crate::tsne::TsneEmbedding;

/// Categorical palette; labels beyond ten cycle through it.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const PANEL_W: f64 = 380.0;
const PANEL_H: f64 = 310.0;
const PLOT_X: f64 = 18.0;
const PLOT_Y: f64 = 42.0;
const PLOT_W: f64 = 262.0;
const PLOT_H: f64 = 248.0;
const LEGEND_X: f64 = 296.0;
const DOT_RADIUS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum FigureError {
    #[error("projection is empty")]
    Empty,
    #[error("projection has {coords} points but {labels} overlay labels")]
    LengthMismatch { coords: usize, labels: usize },
    #[error("panel grid {rows}x{cols} needs {expected} panels, got {got}")]
    PanelCount {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A 2-d projection with one cluster label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub coords: Vec<[f64; 2]>,
    pub overlay_labels: Vec<usize>,
}

impl Projection2D {
    pub fn new(coords: Vec<[f64; 2]>, overlay_labels: Vec<usize>) -> Result<Self, FigureError> {
        if coords.is_empty() {
            return Err(FigureError::Empty);
        }
        if coords.len() != overlay_labels.len() {
            return Err(FigureError::LengthMismatch {
                coords: coords.len(),
                labels: overlay_labels.len(),
            });
        }
        Ok(Self {
            coords,
            overlay_labels,
        })
    }

    /// Pair projected coordinates with externally computed cluster labels.
    pub fn from_embedding(
        embedding: &TsneEmbedding,
        overlay_labels: Vec<usize>,
    ) -> Result<Self, FigureError> {
        Self::new(embedding.coords.clone(), overlay_labels)
    }
}

/// One titled scatter panel of a (possibly multi-panel) figure.
#[derive(Debug, Clone)]
pub struct FigurePanel<'a> {
    pub title: String,
    pub projection: &'a Projection2D,
}

/// Fill color for a cluster label.
pub fn color_for(label: usize) -> &'static str {
    PALETTE[label % PALETTE.len()]
}

/// Canonical file stem for a single overlay figure.
pub fn overlay_stem(model: Arch, entity: Entity, representation: Representation, seed: u64) -> String {
    format!(
        "{}_{}_{}_{}",
        model.tag(),
        entity.tag(),
        representation.tag(),
        seed
    )
}

fn panel_bounds(coords: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for c in coords {
        for d in 0..2 {
            min[d] = min[d].min(c[d]);
            max[d] = max[d].max(c[d]);
        }
    }
    // Pad by 5% of the span; a degenerate axis gets a unit box so every
    // point still maps to a finite pixel.
    for d in 0..2 {
        let span = max[d] - min[d];
        let pad = if span > 0.0 { 0.05 * span } else { 0.5 };
        min[d] -= pad;
        max[d] += pad;
    }
    (min, max)
}

fn render_panel(out: &mut String, panel: &FigurePanel<'_>) {
    let proj = panel.projection;
    let (min, max) = panel_bounds(&proj.coords);
    let sx = PLOT_W / (max[0] - min[0]);
    let sy = PLOT_H / (max[1] - min[1]);

    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"26\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" fill=\"#222\">{}</text>",
        PLOT_X + PLOT_W / 2.0,
        escape_text(&panel.title)
    );
    let _ = writeln!(
        out,
        "  <rect x=\"{PLOT_X:.1}\" y=\"{PLOT_Y:.1}\" width=\"{PLOT_W:.1}\" height=\"{PLOT_H:.1}\" \
         fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>"
    );
    for (c, &label) in proj.coords.iter().zip(&proj.overlay_labels) {
        let px = PLOT_X + (c[0] - min[0]) * sx;
        // Flip the vertical axis so larger y plots higher.
        let py = PLOT_Y + PLOT_H - (c[1] - min[1]) * sy;
        let _ = writeln!(
            out,
            "  <circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"{DOT_RADIUS}\" fill=\"{}\" \
             fill-opacity=\"0.85\"/>",
            color_for(label)
        );
    }

    let unique: BTreeSet<usize> = proj.overlay_labels.iter().copied().collect();
    for (i, label) in unique.iter().enumerate() {
        let y = PLOT_Y + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            "  <g class=\"legend-entry\"><circle cx=\"{LEGEND_X:.1}\" cy=\"{y:.1}\" r=\"4\" \
             fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" \
             font-size=\"11\" fill=\"#222\">cluster {label}</text></g>",
            color_for(*label),
            LEGEND_X + 9.0,
            y + 3.5
        );
    }
}

fn escape_text(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render a `rows x cols` grid of panels as a standalone SVG document.
pub fn render_figure(
    panels: &[FigurePanel<'_>],
    rows: usize,
    cols: usize,
) -> Result<String, FigureError> {
    let expected = rows * cols;
    if panels.len() != expected || expected == 0 {
        return Err(FigureError::PanelCount {
            rows,
            cols,
            expected,
            got: panels.len(),
        });
    }
    let width = PANEL_W * cols as f64;
    let height = PANEL_H * rows as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#ffffff\"/>"
    );
    for (i, panel) in panels.iter().enumerate() {
        let row = i / cols;
        let col = i % cols;
        let _ = writeln!(
            out,
            "<g class=\"panel\" transform=\"translate({:.1},{:.1})\">",
            PANEL_W * col as f64,
            PANEL_H * row as f64
        );
        render_panel(&mut out, panel);
        let _ = writeln!(out, "</g>");
    }
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

/// Write a single-panel overlay figure to `path`.
pub fn emit_overlay_figure(
    projection: &Projection2D,
    title: &str,
    path: &Path,
) -> Result<(), FigureError> {
    let panels = [FigurePanel {
        title: title.to_string(),
        projection,
    }];
    let svg = render_figure(&panels, 1, 1)?;
    fs::write(path, svg)?;
    Ok(())
}

/// Write a multi-panel figure to `path`.
pub fn emit_panel_grid(
    panels: &[FigurePanel<'_>],
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<(), FigureError> {
    let svg = render_figure(panels, rows, cols)?;
    fs::write(path, svg)?;
    Ok(())
}

/// Dump the projection as `id,x,y,label` rows with full-precision reals.
pub fn write_coords_csv(projection: &Projection2D, path: &Path) -> Result<(), FigureError> {
    let mut out = String::from("id,x,y,label\n");
    for (i, (c, label)) in projection
        .coords
        .iter()
        .zip(&projection.overlay_labels)
        .enumerate()
    {
        let _ = writeln!(
            out,
            "{i},{},{},{label}",
            canonical_real(c[0]),
            canonical_real(c[1])
        );
    }
    fs::write(path, out)?;
    Ok(())
}
