//! Dependency-free figure emission: trajectory overlays and attention-mask
//! heat maps, each as both SVG (to look at) and CSV (to recompute from).
//! Plots draw the ground plane (x east, y north); z is carried in the CSV
//! only.

use crate::error::{CoreError, Result};

const VIEW_W: f64 = 640.0;
const VIEW_H: f64 = 480.0;
const MARGIN: f64 = 40.0;

/// One instance's worth of curves, in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryPlot<'a> {
    pub history: &'a [[f64; 3]],
    pub truth: &'a [[f64; 3]],
    pub prediction: &'a [[f64; 3]],
}

impl TrajectoryPlot<'_> {
    fn series(&self) -> [(&'static str, &'static str, &[[f64; 3]]); 3] {
        [
            ("history", "#4878a8", self.history),
            ("truth", "#3a9a5c", self.truth),
            ("prediction", "#c4453c", self.prediction),
        ]
    }

    fn check(&self) -> Result<()> {
        if self.history.is_empty() && self.truth.is_empty() && self.prediction.is_empty() {
            return Err(CoreError::Invalid("nothing to plot".to_string()));
        }
        Ok(())
    }
}

/// Maps world (x, y) into the SVG viewport; SVG y grows downward, so north
/// is up in the figure.
struct Viewport {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Viewport {
    fn fit(points: impl Iterator<Item = [f64; 3]>) -> Viewport {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in points {
            min_x = min_x.min(p[0]);
            max_x = max_x.max(p[0]);
            min_y = min_y.min(p[1]);
            max_y = max_y.max(p[1]);
        }
        // Degenerate extents (single point, collinear-axis tracks) still
        // need a finite scale.
        let span_x = (max_x - min_x).max(1e-6);
        let span_y = (max_y - min_y).max(1e-6);
        let scale = ((VIEW_W - 2.0 * MARGIN) / span_x).min((VIEW_H - 2.0 * MARGIN) / span_y);
        Viewport { min_x, min_y, scale }
    }

    fn x(&self, wx: f64) -> f64 {
        MARGIN + (wx - self.min_x) * self.scale
    }

    fn y(&self, wy: f64) -> f64 {
        VIEW_H - MARGIN - (wy - self.min_y) * self.scale
    }
}

pub fn trajectory_svg(plot: &TrajectoryPlot) -> Result<String> {
    plot.check()?;
    let vp = Viewport::fit(
        plot.series()
            .iter()
            .flat_map(|(_, _, pts)| pts.iter())
            .copied(),
    );
    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{VIEW_W}\" height=\"{VIEW_H}\" viewBox=\"0 0 {VIEW_W} {VIEW_H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    for (li, (name, color, pts)) in plot.series().iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", vp.x(p[0]), vp.y(p[1])))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        for c in &coords {
            let (x, y) = c.split_once(',').expect("formatted above");
            svg.push_str(&format!(
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = 20.0 + 18.0 * li as f64;
        svg.push_str(&format!(
            "<rect x=\"12\" y=\"{:.0}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n<text x=\"30\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"13\">{name}</text>\n",
            ly - 10.0,
            ly
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Same curves as rows: `series,step,x,y,z`.
pub fn trajectory_csv(plot: &TrajectoryPlot) -> Result<String> {
    plot.check()?;
    let mut out = String::from("series,step,x,y,z\n");
    for (name, _, pts) in plot.series() {
        for (i, p) in pts.iter().enumerate() {
            out.push_str(&format!("{name},{i},{},{},{}\n", p[0], p[1], p[2]));
        }
    }
    Ok(out)
}

fn check_mask(mask: &[f64], k: usize) -> Result<()> {
    if k == 0 || mask.len() != k * k {
        return Err(CoreError::Shape {
            op: "mask_plot",
            detail: format!("mask length {} vs k² = {}", mask.len(), k * k),
        });
    }
    Ok(())
}

/// Heat map of a k×k attention mask. Row 0 is the south edge of the
/// region, so it renders at the bottom.
pub fn mask_svg(mask: &[f64], k: usize) -> Result<String> {
    check_mask(mask, k)?;
    let cell = 32.0;
    let size = cell * k as f64;
    let peak = mask.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    ));
    for row in 0..k {
        for col in 0..k {
            let v = mask[row * k + col];
            let shade = (255.0 * (1.0 - (v / peak).clamp(0.0, 1.0))).round() as u8;
            svg.push_str(&format!(
                "<rect x=\"{:.0}\" y=\"{:.0}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\"><title>cell ({row},{col}): {v:e}</title></rect>\n",
                col as f64 * cell,
                (k - 1 - row) as f64 * cell,
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// The mask values verbatim: k lines of k comma-separated numbers, row 0
/// first.
pub fn mask_csv(mask: &[f64], k: usize) -> Result<String> {
    check_mask(mask, k)?;
    let mut out = String::new();
    for row in 0..k {
        let cells: Vec<String> = (0..k).map(|col| mask[row * k + col].to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
