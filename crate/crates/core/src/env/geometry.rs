//! Planar helpers: oriented rectangles and polylines.

/// A vehicle footprint centred on `(x, y)` with heading `psi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.psi.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let mut out = [(0.0, 0.0); 4];
        for (i, (a, b)) in [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].iter().enumerate() {
            out[i] = (self.x + a * c - b * s, self.y + a * s + b * c);
        }
        out
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.psi.sin_cos();
        [(c, s), (-s, c)]
    }
}

fn project(corners: &[(f64, f64); 4], axis: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in corners {
        let d = x * axis.0 + y * axis.1;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis overlap test. Touching edges count as overlap.
pub fn rects_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let reach_a = 0.5 * a.length.hypot(a.width);
    let reach_b = 0.5 * b.length.hypot(b.width);
    if (a.x - b.x).hypot(a.y - b.y) > reach_a + reach_b {
        return false;
    }
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (a0, a1) = project(&ca, axis);
        let (b0, b1) = project(&cb, axis);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}

/// Projection of a point onto a polyline segment range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Index of the segment start.
    pub segment: usize,
    /// Arc length along the polyline.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel.
    pub lateral: f64,
    pub distance: f64,
}

/// Projects `(x, y)` onto segments `from..to` of `pts` whose cumulative arc
/// lengths are `s`.
pub fn project_onto(pts: &[(f64, f64)], s: &[f64], x: f64, y: f64, from: usize, to: usize) -> Option<Projection> {
    if pts.len() < 2 {
        return pts.first().map(|&(px, py)| Projection {
            segment: 0,
            s: 0.0,
            lateral: 0.0,
            distance: (x - px).hypot(y - py),
        });
    }
    let last = pts.len() - 2;
    let to = to.min(last);
    let mut best: Option<Projection> = None;
    for i in from.min(last)..=to {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[i + 1];
        let dx = x1 - x0;
        let dy = y1 - y0;
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { ((x - x0) * dx + (y - y0) * dy) / len2 } else { 0.0 };
        // only the final segment extends past its end, the first before its start
        let t = if i == 0 && i == last {
            t
        } else if i == 0 {
            t.min(1.0)
        } else if i == last {
            t.max(0.0)
        } else {
            t.clamp(0.0, 1.0)
        };
        let px = x0 + t * dx;
        let py = y0 + t * dy;
        let dist = (x - px).hypot(y - py);
        let len = len2.sqrt();
        let lateral = if len > 0.0 { (dx * (y - y0) - dy * (x - x0)) / len } else { 0.0 };
        if best.map_or(true, |b| dist < b.distance) {
            best = Some(Projection { segment: i, s: s[i] + t * len, lateral, distance: dist });
        }
    }
    best
}

/// Cumulative arc lengths of a polyline.
pub fn arc_lengths(pts: &[(f64, f64)]) -> Vec<f64> {
    let mut s = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            let q = pts[i - 1];
            acc += (p.0 - q.0).hypot(p.1 - q.1);
        }
        s.push(acc);
    }
    s
}

/// Point at arc length `target` along the polyline, clamped to its ends.
pub fn point_at(pts: &[(f64, f64)], s: &[f64], target: f64) -> (f64, f64) {
    if target <= 0.0 || pts.len() < 2 {
        return pts[0];
    }
    let total = *s.last().unwrap();
    if target >= total {
        return *pts.last().unwrap();
    }
    let i = match s.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
        Ok(i) => return pts[i],
        Err(i) => i - 1,
    };
    let t = (target - s[i]) / (s[i + 1] - s[i]);
    (pts[i].0 + t * (pts[i + 1].0 - pts[i].0), pts[i].1 + t * (pts[i + 1].1 - pts[i].1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn car(x: f64, y: f64, psi: f64) -> OrientedRect {
        OrientedRect { x, y, psi, length: 4.7, width: 1.85 }
    }

    #[test]
    fn overlapping_and_separated() {
        assert!(rects_overlap(&car(0.0, 0.0, 0.0), &car(4.0, 0.5, 0.2)));
        // side by side with 0.1 m clearance
        assert!(!rects_overlap(&car(0.0, 0.0, 0.0), &car(0.0, 1.95, 0.0)));
        // nose to tail with 0.1 m clearance
        assert!(!rects_overlap(&car(0.0, 0.0, 0.0), &car(4.8, 0.0, 0.0)));
        // crossing at right angle
        assert!(rects_overlap(&car(0.0, 0.0, 0.0), &car(0.0, 0.0, 1.57)));
    }

    #[test]
    fn diagonal_near_miss() {
        // corner-to-corner gap: rotated 45 deg cars whose boxes would overlap
        // under an axis-aligned bounding-box test
        let a = car(0.0, 0.0, std::f64::consts::FRAC_PI_4);
        let b = car(3.4, -3.4, std::f64::consts::FRAC_PI_4);
        assert!(!rects_overlap(&a, &b));
    }

    #[test]
    fn projection_on_straight_line() {
        let pts = vec![(0.0, 0.0), (2.0, 0.0), (4.0, 0.0)];
        let s = arc_lengths(&pts);
        let p = project_onto(&pts, &s, 3.0, 1.0, 0, 10).unwrap();
        assert!((p.s - 3.0).abs() < 1e-12);
        assert!((p.lateral - 1.0).abs() < 1e-12);
        assert_eq!(point_at(&pts, &s, 3.0), (3.0, 0.0));
    }

    /// Brute-force oracle: densely sampled perimeter of each footprint tested
    /// for containment in the other. Two equal convex boxes overlap exactly when
    /// some boundary point of one lies in the other.
    fn sampled_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
        let inside = |r: &OrientedRect, x: f64, y: f64| {
            let (s, c) = r.psi.sin_cos();
            let dx = x - r.x;
            let dy = y - r.y;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            u.abs() <= 0.5 * r.length && v.abs() <= 0.5 * r.width
        };
        for (p, q) in [(a, b), (b, a)] {
            let c = p.corners();
            for k in 0..4 {
                let (x0, y0) = c[k];
                let (x1, y1) = c[(k + 1) % 4];
                let n = ((x1 - x0).hypot(y1 - y0) / 0.002).ceil() as usize;
                for i in 0..=n {
                    let t = i as f64 / n as f64;
                    if inside(q, x0 + t * (x1 - x0), y0 + t * (y1 - y0)) {
                        return true;
                    }
                }
            }
        }
        false
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn overlap_is_symmetric(
            x in -8.0..8.0f64, y in -8.0..8.0f64, pa in -3.2..3.2f64, pb in -3.2..3.2f64,
        ) {
            let a = car(0.0, 0.0, pa);
            let b = car(x, y, pb);
            prop_assert_eq!(rects_overlap(&a, &b), rects_overlap(&b, &a));
        }

        #[test]
        fn sat_agrees_with_sampling_oracle(
            x in -7.0..7.0f64, y in -7.0..7.0f64, pa in -3.2..3.2f64, pb in -3.2..3.2f64,
        ) {
            let a = car(0.0, 0.0, pa);
            let b = car(x, y, pb);
            // sampling can only miss slivers thinner than its spacing
            if sampled_overlap(&a, &b) {
                prop_assert!(rects_overlap(&a, &b));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]
        #[test]
        fn clearance_of_a_decimetre_is_not_a_collision(
            pa in -3.2..3.2f64, pb in -3.2..3.2f64, dir in -3.2..3.2f64,
        ) {
            let a = car(0.0, 0.0, pa);
            let at = |t: f64| car(t * dir.cos(), t * dir.sin(), pb);
            // last touching distance along `dir`, by bisection on the oracle
            let (mut lo, mut hi) = (0.0, 10.0);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if sampled_overlap(&a, &at(mid)) { lo = mid } else { hi = mid }
            }
            prop_assert!(rects_overlap(&a, &at(lo)));
            prop_assert!(!rects_overlap(&a, &at(hi + 0.1)));
        }
    }
}
