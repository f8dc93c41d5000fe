//! Top-down SVG rendering of a scene and, optionally, predictions.

use std::fmt::Write;

use crate::geometry::Polyline;
use crate::scene::Scene;

/// Pixels per meter.
const SCALE: f64 = 8.0;
const PAD: f64 = 10.0;
/// Predictions below this score are not drawn.
pub const DRAW_SCORE: f64 = 0.5;

/// A predicted lane as drawn: points and score.
pub struct DrawnLane<'a> {
    pub points: &'a Polyline,
    pub score: f64,
}

struct Canvas {
    x0: f64,
    y1: f64,
    out: String,
}

impl Canvas {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (PAD + (x - self.x0) * SCALE, PAD + (self.y1 - y) * SCALE)
    }

    fn path(&mut self, class: &str, pts: impl Iterator<Item = (f64, f64)>, style: &str) {
        let mut d = String::new();
        for (k, (x, y)) in pts.enumerate() {
            let (u, v) = self.px(x, y);
            let _ = write!(d, "{}{u:.2},{v:.2}", if k == 0 { "M" } else { " L" });
        }
        let _ = writeln!(self.out, r#"<path class="{class}" d="{d}" {style}/>"#);
    }
}

/// Ground-truth lanes solid (virtual ones dashed grey), predictions with
/// score `>= 0.5` dashed red, lane edges as end-to-start arrows and SD roads
/// as wide background strokes. Every drawn element carries a `class`.
pub fn render_svg(scene: &Scene, preds: &[DrawnLane<'_>]) -> String {
    let b = scene.bounds;
    let (w, h) = (
        (b.x[1] - b.x[0]) * SCALE + 2.0 * PAD,
        (b.y[1] - b.y[0]) * SCALE + 2.0 * PAD,
    );
    let mut c = Canvas {
        x0: b.x[0],
        y1: b.y[1],
        out: String::new(),
    };
    let _ = writeln!(
        c.out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    c.out.push_str(concat!(
        r##"<defs><marker id="arrow" markerWidth="8" markerHeight="8" refX="6" refY="3" orient="auto">"##,
        r##"<path d="M0,0 L6,3 L0,6 z" fill="#2a7"/></marker></defs>"##,
        "\n"
    ));
    let _ = writeln!(
        c.out,
        r##"<rect class="frame" x="{PAD}" y="{PAD}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        w - 2.0 * PAD,
        h - 2.0 * PAD
    );
    for sd in &scene.sd_instances {
        c.path(
            "sd",
            sd.polyline.points().iter().map(|p| (p[0], p[1])),
            r##"fill="none" stroke="#ddd" stroke-width="24""##,
        );
    }
    for (i, line) in scene.centerlines.iter().enumerate() {
        let (class, style) = if scene.is_real[i] {
            ("gt-real", r##"fill="none" stroke="#222" stroke-width="2""##)
        } else {
            (
                "gt-virtual",
                r##"fill="none" stroke="#999" stroke-width="2" stroke-dasharray="2,3""##,
            )
        };
        c.path(class, line.points().iter().map(|p| (p[0], p[1])), style);
    }
    for (i, j) in scene.edges() {
        let (a, z) = (scene.centerlines[i].end(), scene.centerlines[j].start());
        let ((x1, y1), (x2, y2)) = (c.px(a[0], a[1]), c.px(z[0], z[1]));
        let _ = writeln!(
            c.out,
            r##"<line class="edge" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#2a7" marker-end="url(#arrow)"/>"##
        );
    }
    for p in preds.iter().filter(|p| p.score >= DRAW_SCORE) {
        c.path(
            "pred",
            p.points.points().iter().map(|q| (q[0], q[1])),
            r##"fill="none" stroke="#d33" stroke-width="1.5" stroke-dasharray="6,4""##,
        );
    }
    c.out.push_str("</svg>\n");
    c.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_scene, SynthParams};

    fn count(svg: &str, class: &str) -> usize {
        svg.matches(&format!("class=\"{class}\"")).count()
    }

    #[test]
    fn empty_scene_has_only_the_frame() {
        let svg = render_svg(&Scene::empty(0), &[]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("class=").count(), 1);
        assert_eq!(count(&svg, "frame"), 1);
    }

    #[test]
    fn element_counts_and_determinism() {
        let s = synth_scene(4, &SynthParams::default()).unwrap();
        let preds: Vec<Polyline> = s.centerlines.iter().map(|l| l.resample(11)).collect();
        let drawn: Vec<DrawnLane> = preds
            .iter()
            .enumerate()
            .map(|(i, p)| DrawnLane {
                points: p,
                score: if i % 2 == 0 { 0.9 } else { 0.1 },
            })
            .collect();
        let svg = render_svg(&s, &drawn);
        let shown = drawn.iter().filter(|d| d.score >= 0.5).count();
        assert_eq!(count(&svg, "gt-real") + count(&svg, "gt-virtual"), s.len());
        assert_eq!(count(&svg, "pred"), shown);
        assert_eq!(count(&svg, "edge"), s.edges().len());
        assert_eq!(count(&svg, "sd"), s.sd_instances.len());
        assert_eq!(
            svg.matches("class=").count(),
            s.len() + shown + s.edges().len() + s.sd_instances.len() + 1
        );
        assert_eq!(svg, render_svg(&s, &drawn));
    }
}
