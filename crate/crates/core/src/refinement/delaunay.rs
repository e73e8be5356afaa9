//! Bowyer–Watson Delaunay triangulation of image-1 match positions.

use std::collections::BTreeSet;

use nalgebra::Vector2;

/// Triangles as index triples into `points`, counter-clockwise.
pub(crate) fn triangulate(points: &[Vector2<f64>]) -> Vec<[usize; 3]> {
    let n = points.len();
    let (mut min, mut max) = (points[0], points[0]);
    for p in points {
        min = min.inf(p);
        max = max.sup(p);
    }
    let centre = (min + max) / 2.0;
    let span = (max - min).amax().max(1.0) * 1e3;
    let mut verts: Vec<Vector2<f64>> = points.to_vec();
    verts.push(centre + Vector2::new(-2.0 * span, -span));
    verts.push(centre + Vector2::new(2.0 * span, -span));
    verts.push(centre + Vector2::new(0.0, 2.0 * span));

    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    let mut circles: Vec<(Vector2<f64>, f64)> = vec![circumcircle(&verts, [n, n + 1, n + 2])];
    for p in 0..n {
        let q = verts[p];
        let mut bad = Vec::new();
        for (t, (c, r2)) in circles.iter().enumerate() {
            if (q - c).norm_squared() < *r2 {
                bad.push(t);
            }
        }
        // Boundary edges of the cavity are those belonging to exactly one bad triangle.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &t in &bad {
            let [a, b, c] = tris[t];
            for e in [(a, b), (b, c), (c, a)] {
                if let Some(pos) = edges.iter().position(|&(x, y)| x == e.1 && y == e.0) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        for &t in bad.iter().rev() {
            tris.swap_remove(t);
            circles.swap_remove(t);
        }
        for (a, b) in edges {
            let tri = [a, b, p];
            if orient(&verts, tri) > 0.0 {
                tris.push(tri);
                circles.push(circumcircle(&verts, tri));
            }
        }
    }
    tris.into_iter().filter(|t| t.iter().all(|&v| v < n)).collect()
}

fn orient(v: &[Vector2<f64>], [a, b, c]: [usize; 3]) -> f64 {
    let (ab, ac) = (v[b] - v[a], v[c] - v[a]);
    ab.x * ac.y - ab.y * ac.x
}

fn circumcircle(v: &[Vector2<f64>], [a, b, c]: [usize; 3]) -> (Vector2<f64>, f64) {
    let (pa, pb, pc) = (v[a], v[b], v[c]);
    let (b_rel, c_rel) = (pb - pa, pc - pa);
    let d = 2.0 * (b_rel.x * c_rel.y - b_rel.y * c_rel.x);
    if d == 0.0 {
        return (pa, f64::INFINITY);
    }
    let (bb, cc) = (b_rel.norm_squared(), c_rel.norm_squared());
    let centre = Vector2::new(c_rel.y * bb - b_rel.y * cc, b_rel.x * cc - c_rel.x * bb) / d;
    (pa + centre, centre.norm_squared())
}

/// Unique undirected edges `(lo, hi)` of a triangle list.
pub(crate) fn triangle_edges(tris: &[[usize; 3]]) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for &[a, b, c] in tris {
        for (x, y) in [(a, b), (b, c), (c, a)] {
            edges.insert((x.min(y), x.max(y)));
        }
    }
    edges
}

/// Chain linking points in order of their projection on the widest axis.
pub(crate) fn nearest_chain(points: &[Vector2<f64>]) -> BTreeSet<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let (mut min, mut max) = (points[0], points[0]);
    for p in points {
        min = min.inf(p);
        max = max.sup(p);
    }
    let axis = if max.x - min.x >= max.y - min.y { 0 } else { 1 };
    order.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect()
}
