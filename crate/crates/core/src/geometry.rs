//! Planar polygon helpers on integer pixel coordinates.

pub type Point = (i32, i32);

/// Signed shoelace area (counter-clockwise positive in a y-up frame).
pub fn signed_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s: i64 = 0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        s += x0 as i64 * y1 as i64 - x1 as i64 * y0 as i64;
    }
    s as f64 / 2.0
}

pub fn perimeter(poly: &[Point]) -> f64 {
    if poly.len() < 2 {
        return 0.0;
    }
    (0..poly.len())
        .map(|i| {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % poly.len()];
            (((x1 - x0) as f64).powi(2) + ((y1 - y0) as f64).powi(2)).sqrt()
        })
        .sum()
}

fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.0 - o.0) as i64 * (b.1 - o.1) as i64 - (a.1 - o.1) as i64 * (b.0 - o.0) as i64
}

/// Andrew's monotone chain; collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Even-odd test for a point that is not on the polygon boundary.
pub fn contains(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) {
            // x-coordinate of the crossing compared exactly
            let lhs = (p.0 - xi) as i64 * (yj - yi) as i64;
            let rhs = (xj - xi) as i64 * (p.1 - yi) as i64;
            let crosses = if yj > yi { lhs < rhs } else { lhs > rhs };
            if crosses {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection test.
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a).signum();
    let d2 = cross(c, d, b).signum();
    let d3 = cross(a, b, c).signum();
    let d4 = cross(a, b, d).signum();
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment(c, d, a))
        || (d2 == 0 && on_segment(c, d, b))
        || (d3 == 0 && on_segment(a, b, c))
        || (d4 == 0 && on_segment(a, b, d))
}

/// True when no two non-adjacent edges of the closed polygon touch.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Integer points of a digital line (Bresenham), endpoints included.
pub fn line_points(a: Point, b: Point) -> Vec<Point> {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_metrics() {
        let sq = [(0, 0), (4, 0), (4, 4), (0, 4)];
        assert_eq!(signed_area(&sq).abs(), 16.0);
        assert_eq!(perimeter(&sq), 16.0);
        assert!(contains(&sq, (2, 2)));
        assert!(!contains(&sq, (5, 2)));
        assert!(is_simple(&sq));
    }

    #[test]
    fn hull_drops_interior_and_collinear() {
        let pts = [(0, 0), (2, 0), (4, 0), (4, 4), (0, 4), (2, 2), (1, 3)];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert_eq!(signed_area(&h), 16.0);
    }

    #[test]
    fn bowtie_is_not_simple() {
        assert!(!is_simple(&[(0, 0), (2, 2), (2, 0), (0, 2)]));
    }

    #[test]
    fn bresenham_endpoints() {
        let l = line_points((0, 0), (3, 1));
        assert_eq!(l.first(), Some(&(0, 0)));
        assert_eq!(l.last(), Some(&(3, 1)));
        assert_eq!(l.len(), 4);
    }
}
