//! Deterministic SVG renderings of scenes, ranked plans and training curves.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::plan::PlanFile;
use crate::scene::{cell_center, Scene, CELL_SIZE, GRID_EXTENT};
use crate::train::EpochMetrics;
use crate::trajectory::WAYPOINT_DT;

const PX_PER_M: f64 = 10.0;
const CANVAS: f64 = 2.0 * GRID_EXTENT * PX_PER_M;

fn px(p: [f64; 2]) -> (f64, f64) {
    ((p[0] + GRID_EXTENT) * PX_PER_M, (GRID_EXTENT - p[1]) * PX_PER_M)
}

fn points(w: &[[f64; 2]]) -> String {
    w.iter()
        .map(|&p| {
            let (x, y) = px(p);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rank 0 is red, the last rank blue.
fn rank_color(rank: usize, n: usize) -> String {
    let hue = if n <= 1 { 0.0 } else { 240.0 * rank as f64 / (n - 1) as f64 };
    format!("hsl({hue:.1},80%,45%)")
}

fn box_polygon(center: [f64; 2], half: [f64; 2]) -> String {
    let corners = [
        [center[0] - half[0], center[1] - half[1]],
        [center[0] + half[0], center[1] - half[1]],
        [center[0] + half[0], center[1] + half[1]],
        [center[0] - half[0], center[1] + half[1]],
    ];
    points(&corners)
}

/// Scene with drivable area, obstacles now and at the horizon, the demonstration
/// and every candidate of `plan` colored by rank.
pub fn render_scene(scene: &Scene, plan: Option<&PlanFile>) -> Result<String> {
    let horizon = scene.horizon();
    if let Some(p) = plan {
        if p.horizon != horizon {
            return Err(Error::Shape(format!("plan has {} waypoints, scene has {horizon}", p.horizon)));
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{CANVAS}" height="{CANVAS}" fill="#3a3a3a"/>"##);

    let _ = writeln!(s, r##"<g class="drivable" fill="#d9d9d9">"##);
    let m = &scene.drivable;
    let cell = CELL_SIZE * PX_PER_M;
    for r in 0..m.rows {
        let mut c = 0;
        while c < m.cols {
            if !m.get(r, c) {
                c += 1;
                continue;
            }
            let start = c;
            while c < m.cols && m.get(r, c) {
                c += 1;
            }
            let (cx, cy) = cell_center(r, start);
            let (x, y) = px([cx - CELL_SIZE / 2.0, cy + CELL_SIZE / 2.0]);
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{cell:.2}"/>"#, (c - start) as f64 * cell);
        }
    }
    let _ = writeln!(s, "</g>");

    let t_end = horizon as f64 * WAYPOINT_DT;
    let _ = writeln!(s, r#"<g class="obstacles">"#);
    for o in &scene.obstacles {
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#8c8c8c" fill-opacity="0.3" stroke="#555555" stroke-dasharray="4,3"/>"##,
            box_polygon(o.center_at(t_end), o.half_extent)
        );
        let _ = writeln!(s, r##"<polygon points="{}" fill="#555555" stroke="#222222"/>"##, box_polygon(o.center, o.half_extent));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<polygon class="ego" points="{}" fill="#1f6fd1"/>"##, box_polygon([0.0, 0.0], [2.25, 0.95]));

    let gt = &scene.gt_trajectory.waypoints;
    let mut d = String::from("M");
    let _ = write!(d, "{:.2},{:.2}", px([0.0, 0.0]).0, px([0.0, 0.0]).1);
    for &p in gt {
        let (x, y) = px(p);
        let _ = write!(d, " L{x:.2},{y:.2}");
    }
    let _ = writeln!(s, r##"<path class="gt" d="{d}" fill="none" stroke="#12a150" stroke-width="3" stroke-dasharray="6,4"/>"##);

    if let Some(p) = plan {
        let n = p.candidates.len();
        let _ = writeln!(s, r#"<g class="candidates" fill="none">"#);
        for (rank, c) in p.candidates.iter().enumerate().rev() {
            let mut w = vec![[0.0, 0.0]];
            w.extend_from_slice(&c.trajectory.waypoints);
            let width = if rank == 0 { 3.0 } else { 1.5 };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{}" stroke-width="{width}" data-rank="{rank}" data-confidence="{:.4}"/>"#,
                points(&w),
                rank_color(rank, n),
                c.confidence
            );
        }
        let _ = writeln!(s, "</g>");
    }

    let legend: [(&str, String, &str); 4] = [
        ("ground truth", "#12a150".into(), "6,4"),
        ("top-1 candidate", rank_color(0, 2), "none"),
        ("lowest-ranked candidate", rank_color(1, 2), "none"),
        ("obstacle at horizon", "#8c8c8c".into(), "4,3"),
    ];
    let _ = writeln!(s, r#"<g class="legend" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r##"<rect x="8" y="8" width="190" height="{}" fill="#ffffff" fill-opacity="0.85"/>"##, 12 + 18 * legend.len());
    for (i, (label, color, dash)) in legend.iter().enumerate() {
        let y = 24 + 18 * i;
        let _ = writeln!(
            s,
            r#"<line x1="16" y1="{y}" x2="44" y2="{y}" stroke="{color}" stroke-width="3" stroke-dasharray="{dash}"/>"#
        );
        let _ = writeln!(s, r#"<text x="52" y="{}">{label}</text>"#, y + 4);
    }
    let _ = writeln!(s, r#"<text x="16" y="{}">{}</text>"#, 28 + 18 * legend.len(), scene.intent);
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Loss curves over epochs, one polyline per series.
pub fn render_metrics(history: &[EpochMetrics]) -> Result<String> {
    if history.is_empty() {
        return Err(Error::MissingInput("metrics history has no rows".into()));
    }
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let series: Vec<(&str, &str, Vec<(usize, f64)>)> = vec![
        ("loss", "#d62728", history.iter().map(|m| (m.epoch, m.loss)).collect()),
        ("l1", "#1f77b4", history.iter().map(|m| (m.epoch, m.l1)).collect()),
        ("bce", "#2ca02c", history.iter().map(|m| (m.epoch, m.bce)).collect()),
        ("val_loss", "#9467bd", history.iter().filter_map(|m| m.val_loss.map(|v| (m.epoch, v))).collect()),
    ];
    let e_min = history.iter().map(|m| m.epoch).min().unwrap_or(0) as f64;
    let e_max = history.iter().map(|m| m.epoch).max().unwrap_or(0) as f64;
    let y_max = series
        .iter()
        .flat_map(|(_, _, v)| v.iter().map(|p| p.1))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let sx = |e: f64| pad + (e - e_min) / (e_max - e_min).max(1.0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - v / y_max * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r##"<g stroke="#000000"><line x1="{pad}" y1="{}" x2="{}" y2="{}"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}"/></g>"##, h - pad, w - pad, h - pad, h - pad);
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}">epoch {e_min}</text>"#, h - pad + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">epoch {e_max}</text>"#, w - pad, h - pad + 16.0);
    let _ = writeln!(s, r#"<text x="4" y="{}">{y_max:.4}</text>"#, pad - 4.0);
    let _ = writeln!(s, r#"<text x="4" y="{}">0</text>"#, h - pad);
    for (i, (name, color, _)) in series.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="20" fill="{color}">{name}</text>"#, pad + 80.0 * i as f64);
    }
    let _ = writeln!(s, "</g>");
    for (name, color, pts) in &series {
        if pts.is_empty() {
            continue;
        }
        let p: Vec<String> = pts.iter().map(|&(e, v)| format!("{:.2},{:.2}", sx(e as f64), sy(v))).collect();
        let _ = writeln!(s, r#"<polyline class="{name}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, p.join(" "));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::Candidate;
    use crate::scene::{generate_scene, RouteIntent};

    #[test]
    fn candidates_become_polylines() {
        let scene = generate_scene(RouteIntent::LeftTurn, 0.5, 3).unwrap();
        let candidates = (0..5)
            .map(|k| Candidate { trajectory: scene.gt_trajectory.clone(), confidence: 1.0 / (k + 1) as f64, origin_anchor: Some(k) })
            .collect();
        let plan = PlanFile { horizon: scene.horizon(), candidates };
        let svg = render_scene(&scene, Some(&plan)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 5);
        assert_eq!(svg, render_scene(&scene, Some(&plan)).unwrap());
        assert_eq!(render_scene(&scene, None).unwrap().matches("<polyline").count(), 0);
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let scene = generate_scene(RouteIntent::Straight, 0.0, 3).unwrap();
        let plan = PlanFile { horizon: 4, candidates: vec![] };
        assert!(render_scene(&scene, Some(&plan)).unwrap_err().is_validation());
    }
}
