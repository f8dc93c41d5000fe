//! Supercover rasterisation of polylines onto a [`GridSpec`].

use crate::geometry::Polyline;
use crate::tensor::GridSpec;

/// Clips the segment `a → b` to the axis-aligned box `[lo, hi]²` (given per
/// axis) with Liang–Barsky. Returns `None` when nothing remains.
fn clip(a: (f64, f64), b: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0 - lo.0), (dx, hi.0 - a.0), (-dy, a.1 - lo.1), (dy, hi.1 - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    Some(((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}

/// Pushes the flat index of every in-grid cell the metric segment `a → b`
/// passes through. Corner crossings add both side cells.
pub fn supercover_segment(spec: &GridSpec, a: (f64, f64), b: (f64, f64), out: &mut Vec<usize>) {
    let (h, w) = (spec.height as i64, spec.width as i64);
    // shifted cell space: cell (r, c) covers [c, c+1) x [r, r+1)
    let to_uv = |p: (f64, f64)| {
        let (r, c) = spec.to_cell(p.0, p.1);
        (c + 0.5, r + 0.5)
    };
    let Some((p0, p1)) = clip(to_uv(a), to_uv(b), (-1.0, -1.0), (w as f64 + 1.0, h as f64 + 1.0)) else {
        return;
    };

    let mut push = |r: i64, c: i64| {
        if r >= 0 && r < h && c >= 0 && c < w {
            out.push((r * w + c) as usize);
        }
    };

    let (mut c, mut r) = (p0.0.floor() as i64, p0.1.floor() as i64);
    let (c_end, r_end) = (p1.0.floor() as i64, p1.1.floor() as i64);
    let (du, dv) = (p1.0 - p0.0, p1.1 - p0.1);
    let step_c = if du > 0.0 { 1 } else { -1 };
    let step_r = if dv > 0.0 { 1 } else { -1 };
    let t_delta_u = if du != 0.0 { (1.0 / du).abs() } else { f64::INFINITY };
    let t_delta_v = if dv != 0.0 { (1.0 / dv).abs() } else { f64::INFINITY };
    let mut t_max_u = if du > 0.0 {
        (c as f64 + 1.0 - p0.0) / du
    } else if du < 0.0 {
        (p0.0 - c as f64) / -du
    } else {
        f64::INFINITY
    };
    let mut t_max_v = if dv > 0.0 {
        (r as f64 + 1.0 - p0.1) / dv
    } else if dv < 0.0 {
        (p0.1 - r as f64) / -dv
    } else {
        f64::INFINITY
    };

    let max_steps = (c_end - c).abs() + (r_end - r).abs() + 2;
    push(r, c);
    for _ in 0..max_steps {
        if r == r_end && c == c_end {
            break;
        }
        if t_max_u.min(t_max_v) > 1.0 {
            break;
        }
        if t_max_u < t_max_v {
            c += step_c;
            t_max_u += t_delta_u;
        } else if t_max_v < t_max_u {
            r += step_r;
            t_max_v += t_delta_v;
        } else {
            push(r, c + step_c);
            push(r + step_r, c);
            c += step_c;
            r += step_r;
            t_max_u += t_delta_u;
            t_max_v += t_delta_v;
        }
        push(r, c);
    }
}

/// Occupancy of every cell the polyline's segments pass through, as a
/// row-major `H·W` mask.
pub fn rasterize_polyline(spec: &GridSpec, line: &Polyline) -> Vec<bool> {
    let mut cells = Vec::new();
    for seg in line.points().windows(2) {
        supercover_segment(spec, (seg[0][0], seg[0][1]), (seg[1][0], seg[1][1]), &mut cells);
    }
    let mut mask = vec![false; spec.cells()];
    for idx in cells {
        mask[idx] = true;
    }
    mask
}

/// Chebyshev dilation of a row-major mask by `radius` cells.
pub fn dilate(spec: &GridSpec, mask: &[bool], radius: usize) -> Vec<bool> {
    let (h, w) = (spec.height, spec.width);
    let mut out = vec![false; mask.len()];
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            for rr in r.saturating_sub(radius)..=(r + radius).min(h - 1) {
                for cc in c.saturating_sub(radius)..=(c + radius).min(w - 1) {
                    out[rr * w + cc] = true;
                }
            }
        }
    }
    out
}

/// Rasterised and dilated footprint of a polyline.
pub fn footprint(spec: &GridSpec, line: &Polyline, radius: usize) -> Vec<bool> {
    dilate(spec, &rasterize_polyline(spec, line), radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec {
            height: 20,
            width: 30,
            resolution: 1.0,
            x_min: 0.0,
            y_min: 0.0,
        }
    }

    /// L∞ distance from a cell centre to a segment, in cells.
    fn linf_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
        // minimise max(|x(t)-px|, |y(t)-py|) over t by dense sampling
        let n = 4000;
        (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let x = a.0 + t * (b.0 - a.0);
                let y = a.1 + t * (b.1 - a.1);
                (x - p.0).abs().max((y - p.1).abs())
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn random_segments_match_distance_oracle() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40 {
            let a = (rng.random_range(1.0..29.0), rng.random_range(1.0..19.0));
            let b = (rng.random_range(1.0..29.0), rng.random_range(1.0..19.0));
            let mut cells = Vec::new();
            supercover_segment(&s, a, b, &mut cells);
            let got: std::collections::BTreeSet<usize> = cells.into_iter().collect();
            for r in 0..s.height {
                for c in 0..s.width {
                    let (x, y) = s.to_metric(r as f64, c as f64);
                    let d = linf_to_segment((x, y), a, b);
                    let inside = got.contains(&(r * s.width + c));
                    // skip cells grazing the boundary within the sampling error
                    if (d - 0.5).abs() < 2e-3 {
                        continue;
                    }
                    assert_eq!(inside, d < 0.5, "cell ({r},{c}) d={d}");
                }
            }
        }
    }

    #[test]
    fn axis_aligned_row() {
        let s = spec();
        let line = Polyline::from_xy(&[[3.5, 7.5], [12.5, 7.5], [20.5, 7.5]]).unwrap();
        let mask = rasterize_polyline(&s, &line);
        for r in 0..s.height {
            for c in 0..s.width {
                let expect = r == 7 && (3..=20).contains(&c);
                assert_eq!(mask[r * s.width + c], expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn outside_segments_are_ignored() {
        let s = spec();
        let line = Polyline::from_xy(&[[-100.0, -100.0], [-50.0, -80.0]]).unwrap();
        assert!(rasterize_polyline(&s, &line).iter().all(|&v| !v));
        let far = Polyline::from_xy(&[[-1e6, 5.5], [1e6, 5.5]]).unwrap();
        let mask = rasterize_polyline(&s, &far);
        assert_eq!(mask.iter().filter(|&&v| v).count(), s.width);
    }

    #[test]
    fn dilation_grows_by_one_cell() {
        let s = spec();
        let mut mask = vec![false; s.cells()];
        mask[5 * s.width + 5] = true;
        let d = dilate(&s, &mask, 1);
        assert_eq!(d.iter().filter(|&&v| v).count(), 9);
        let mut corner = vec![false; s.cells()];
        corner[0] = true;
        assert_eq!(dilate(&s, &corner, 1).iter().filter(|&&v| v).count(), 4);
    }
}
