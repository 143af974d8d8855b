//! Planar helpers shared by scene generation and evaluation.

/// Distance from `p` to the axis-aligned box `center ± half`.
pub fn point_box_distance(p: [f64; 2], center: [f64; 2], half: [f64; 2]) -> f64 {
    let dx = ((p[0] - center[0]).abs() - half[0]).max(0.0);
    let dy = ((p[1] - center[1]).abs() - half[1]).max(0.0);
    dx.hypot(dy)
}

/// Distance from `p` to segment `a`-`b`.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (t, _) = project_on_segment(p, a, b);
    let q = lerp(a, b, t);
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Clamped projection parameter of `p` onto `a`-`b` and the segment length.
pub fn project_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return (0.0, 0.0);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    (t, len2.sqrt())
}

pub fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance from `p` to a polyline; infinite for an empty polyline.
pub fn point_polyline_distance(p: [f64; 2], line: &[[f64; 2]]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => dist(p, *only),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Arc-length coordinate of the closest point on `line` to `p`.
pub fn arc_length_projection(p: [f64; 2], line: &[[f64; 2]]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut acc = 0.0;
    for w in line.windows(2) {
        let (t, len) = project_on_segment(p, w[0], w[1]);
        let d = dist(p, lerp(w[0], w[1], t));
        if d < best.0 {
            best = (d, acc + t * len);
        }
        acc += len;
    }
    best.1
}

pub fn polyline_length(line: &[[f64; 2]]) -> f64 {
    line.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Point at arc length `s` along `line`, extrapolating the final segment past its end.
pub fn point_at_arc_length(line: &[[f64; 2]], s: f64) -> [f64; 2] {
    let mut acc = 0.0;
    for w in line.windows(2) {
        let len = dist(w[0], w[1]);
        if len > 0.0 && acc + len >= s {
            return lerp(w[0], w[1], (s - acc) / len);
        }
        acc += len;
    }
    let n = line.len();
    let (a, b) = (line[n - 2], line[n - 1]);
    let len = dist(a, b);
    lerp(a, b, 1.0 + (s - acc) / len)
}
