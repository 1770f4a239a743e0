//! Fixed-point triangle scan conversion with a top-left fill rule.
//!
//! Vertices are snapped to 1/256 px so edge functions are exact integers and
//! pixels on an edge shared by two triangles are drawn exactly once.

use crate::geom::Point;

const SUBPIXEL: f64 = 256.0;

#[derive(Debug, Clone, Copy)]
struct Edge {
    ax: i64,
    ay: i64,
    dx: i64,
    dy: i64,
    top_left: bool,
}

impl Edge {
    fn new(a: (i64, i64), b: (i64, i64)) -> Edge {
        let dx = b.0 - a.0;
        let dy = b.1 - a.1;
        Edge {
            ax: a.0,
            ay: a.1,
            dx,
            dy,
            top_left: dy < 0 || (dy == 0 && dx > 0),
        }
    }

    #[inline]
    fn eval(&self, px: i64, py: i64) -> i64 {
        self.dx * (py - self.ay) - self.dy * (px - self.ax)
    }

    #[inline]
    fn covers(&self, w: i64) -> bool {
        w > 0 || (w == 0 && self.top_left)
    }
}

/// A triangle prepared for scan conversion.
#[derive(Debug, Clone, Copy)]
pub struct ScanTriangle {
    edges: [Edge; 3],
    area: f64,
    /// Whether vertices 1 and 2 were swapped to get positive orientation.
    swapped: bool,
    min_x: i64,
    max_x: i64,
    min_y: i64,
    max_y: i64,
}

fn snap(p: Point) -> (i64, i64) {
    (
        (p.x * SUBPIXEL).round() as i64,
        (p.y * SUBPIXEL).round() as i64,
    )
}

impl ScanTriangle {
    /// Returns `None` for degenerate (zero-area) or non-finite triangles.
    pub fn new(v: [Point; 3]) -> Option<ScanTriangle> {
        if !v.iter().all(|p| p.is_finite()) {
            return None;
        }
        let mut s = [snap(v[0]), snap(v[1]), snap(v[2])];
        let mut area = Edge::new(s[0], s[1]).eval(s[2].0, s[2].1);
        if area == 0 {
            return None;
        }
        let swapped = area < 0;
        if swapped {
            s.swap(1, 2);
            area = -area;
        }
        let edges = [
            Edge::new(s[1], s[2]),
            Edge::new(s[2], s[0]),
            Edge::new(s[0], s[1]),
        ];
        let sub = SUBPIXEL as i64;
        let xs = [s[0].0, s[1].0, s[2].0];
        let ys = [s[0].1, s[1].1, s[2].1];
        let min_x = xs.iter().min().unwrap().div_euclid(sub);
        let max_x = (xs.iter().max().unwrap() + sub - 1).div_euclid(sub);
        let min_y = ys.iter().min().unwrap().div_euclid(sub);
        let max_y = (ys.iter().max().unwrap() + sub - 1).div_euclid(sub);
        Some(ScanTriangle {
            edges,
            area: area as f64,
            swapped,
            min_x,
            max_x,
            min_y,
            max_y,
        })
    }

    /// Inclusive pixel row range touched by the triangle.
    pub fn rows(&self) -> (i64, i64) {
        (self.min_y, self.max_y)
    }

    /// Visits covered pixel centers in row `y`, passing barycentric weights
    /// for the vertices in their original order.
    #[inline]
    pub fn scan_row(&self, y: i64, width: i64, mut f: impl FnMut(i64, [f64; 3])) {
        if y < self.min_y || y > self.max_y {
            return;
        }
        let sub = SUBPIXEL as i64;
        let py = y * sub;
        let x0 = self.min_x.max(0);
        let x1 = self.max_x.min(width - 1);
        for x in x0..=x1 {
            let px = x * sub;
            let w0 = self.edges[0].eval(px, py);
            if !self.edges[0].covers(w0) {
                continue;
            }
            let w1 = self.edges[1].eval(px, py);
            if !self.edges[1].covers(w1) {
                continue;
            }
            let w2 = self.edges[2].eval(px, py);
            if !self.edges[2].covers(w2) {
                continue;
            }
            let l0 = w0 as f64 / self.area;
            let l1 = w1 as f64 / self.area;
            let l2 = w2 as f64 / self.area;
            let bary = if self.swapped {
                [l0, l2, l1]
            } else {
                [l0, l1, l2]
            };
            f(x, bary);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coverage(tris: &[[Point; 3]], w: i64, h: i64) -> Vec<u32> {
        let mut hits = vec![0u32; (w * h) as usize];
        for t in tris {
            if let Some(st) = ScanTriangle::new(*t) {
                for y in 0..h {
                    st.scan_row(y, w, |x, _| hits[(y * w + x) as usize] += 1);
                }
            }
        }
        hits
    }

    #[test]
    fn quad_covers_each_pixel_once() {
        let a = Point::new(2.0, 3.0);
        let b = Point::new(9.0, 3.0);
        let c = Point::new(9.0, 8.0);
        let d = Point::new(2.0, 8.0);
        let hits = coverage(&[[a, b, c], [a, c, d]], 12, 12);
        let total: u32 = hits.iter().sum();
        assert_eq!(total, 7 * 5);
        assert!(hits.iter().all(|&h| h <= 1));
        // left/top edges are included, right/bottom excluded
        assert_eq!(hits[(3 * 12 + 2) as usize], 1);
        assert_eq!(hits[(3 * 12 + 9) as usize], 0);
        assert_eq!(hits[(8 * 12 + 2) as usize], 0);
    }

    #[test]
    fn fan_around_shared_vertex_has_no_double_hits() {
        let c = Point::new(5.0, 5.0);
        let ring = [
            Point::new(1.0, 1.0),
            Point::new(9.0, 1.5),
            Point::new(9.5, 9.0),
            Point::new(0.5, 9.5),
        ];
        let tris: Vec<[Point; 3]> = (0..4).map(|i| [c, ring[i], ring[(i + 1) % 4]]).collect();
        let hits = coverage(&tris, 12, 12);
        assert!(hits.iter().all(|&h| h <= 1));
    }

    #[test]
    fn barycentrics_follow_vertex_order() {
        let v = [
            Point::new(0.0, 0.0),
            Point::new(0.0, 10.0),
            Point::new(10.0, 0.0),
        ];
        let st = ScanTriangle::new(v).unwrap();
        st.scan_row(2, 20, |x, b| {
            if x == 3 {
                let p = Point::new(
                    b[0] * v[0].x + b[1] * v[1].x + b[2] * v[2].x,
                    b[0] * v[0].y + b[1] * v[1].y + b[2] * v[2].y,
                );
                assert!((p.x - 3.0).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
            }
        });
    }

    #[test]
    fn degenerate_triangle_is_skipped() {
        let p = Point::new(1.0, 1.0);
        assert!(ScanTriangle::new([p, p, Point::new(5.0, 5.0)]).is_none());
    }
}
