use robust::{orient2d, orient3d, Coord, Coord3D};

use super::mesh::{dot, sub, Mesh, Vec3};

/// Intersecting pairs of faces that share no vertex.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IntersectionReport {
    pub count: usize,
    /// `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(usize, usize)>,
}

fn c3(v: Vec3) -> Coord3D<f64> {
    Coord3D { x: v[0], y: v[1], z: v[2] }
}

fn o3(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> i8 {
    let s = orient3d(c3(a), c3(b), c3(c), c3(d));
    if s > 0.0 {
        1
    } else if s < 0.0 {
        -1
    } else {
        0
    }
}

fn o2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> i8 {
    let s = orient2d(Coord { x: a[0], y: a[1] }, Coord { x: b[0], y: b[1] }, Coord { x: c[0], y: c[1] });
    if s > 0.0 {
        1
    } else if s < 0.0 {
        -1
    } else {
        0
    }
}

fn same_side(signs: &[i8]) -> bool {
    signs.iter().all(|&s| s >= 0) || signs.iter().all(|&s| s <= 0)
}

/// Drops the coordinate along which the (coplanar) triangle is widest in
/// normal direction. Dropping a coordinate is exact.
fn projector(tri: &[Vec3; 3]) -> impl Fn(Vec3) -> [f64; 2] {
    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let n = [
        (e1[1] * e2[2] - e1[2] * e2[1]).abs(),
        (e1[2] * e2[0] - e1[0] * e2[2]).abs(),
        (e1[0] * e2[1] - e1[1] * e2[0]).abs(),
    ];
    let drop = if n[0] >= n[1] && n[0] >= n[2] {
        0
    } else if n[1] >= n[2] {
        1
    } else {
        2
    };
    move |v: Vec3| match drop {
        0 => [v[1], v[2]],
        1 => [v[2], v[0]],
        _ => [v[0], v[1]],
    }
}

fn on_segment_2d(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
}

fn segments_meet_2d(p1: [f64; 2], q1: [f64; 2], p2: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = o2(p2, q2, p1);
    let d2 = o2(p2, q2, q1);
    let d3 = o2(p1, q1, p2);
    let d4 = o2(p1, q1, q2);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment_2d(p2, q2, p1))
        || (d2 == 0 && on_segment_2d(p2, q2, q1))
        || (d3 == 0 && on_segment_2d(p1, q1, p2))
        || (d4 == 0 && on_segment_2d(p1, q1, q2))
}

fn point_in_triangle_2d(p: [f64; 2], t: &[[f64; 2]; 3]) -> bool {
    same_side(&[o2(t[0], t[1], p), o2(t[1], t[2], p), o2(t[2], t[0], p)])
}

fn coplanar_overlap(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    let proj = projector(a);
    let pa = [proj(a[0]), proj(a[1]), proj(a[2])];
    let pb = [proj(b[0]), proj(b[1]), proj(b[2])];
    for i in 0..3 {
        for j in 0..3 {
            if segments_meet_2d(pa[i], pa[(i + 1) % 3], pb[j], pb[(j + 1) % 3]) {
                return true;
            }
        }
    }
    point_in_triangle_2d(pa[0], &pb) || point_in_triangle_2d(pb[0], &pa)
}

/// Closed segment against closed triangle, exact.
fn segment_hits_triangle(p: Vec3, q: Vec3, t: &[Vec3; 3]) -> bool {
    let sp = o3(t[0], t[1], t[2], p);
    let sq = o3(t[0], t[1], t[2], q);
    if sp * sq > 0 {
        return false;
    }
    if sp == 0 && sq == 0 {
        let proj = projector(t);
        let pt = [proj(t[0]), proj(t[1]), proj(t[2])];
        let (pp, pq) = (proj(p), proj(q));
        return (0..3).any(|i| segments_meet_2d(pp, pq, pt[i], pt[(i + 1) % 3])) || point_in_triangle_2d(pp, &pt);
    }
    same_side(&[o3(p, q, t[0], t[1]), o3(p, q, t[1], t[2]), o3(p, q, t[2], t[0])])
}

/// Exact test for two closed triangles (touching counts as intersecting).
pub fn triangles_intersect(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    let sb = [o3(a[0], a[1], a[2], b[0]), o3(a[0], a[1], a[2], b[1]), o3(a[0], a[1], a[2], b[2])];
    if sb.iter().all(|&s| s > 0) || sb.iter().all(|&s| s < 0) {
        return false;
    }
    let sa = [o3(b[0], b[1], b[2], a[0]), o3(b[0], b[1], b[2], a[1]), o3(b[0], b[1], b[2], a[2])];
    if sa.iter().all(|&s| s > 0) || sa.iter().all(|&s| s < 0) {
        return false;
    }
    if sb.iter().all(|&s| s == 0) {
        return coplanar_overlap(a, b);
    }
    (0..3).any(|i| segment_hits_triangle(a[i], a[(i + 1) % 3], b))
        || (0..3).any(|i| segment_hits_triangle(b[i], b[(i + 1) % 3], a))
}

/// Counts intersecting face pairs that share no vertex index.
///
/// A uniform grid over face bounding boxes provides candidates; each
/// candidate is decided by [`triangles_intersect`]. The result does not
/// depend on face enumeration order beyond the face ids it reports.
pub fn count_self_intersections(mesh: &Mesh) -> IntersectionReport {
    let nf = mesh.faces.len();
    if nf < 2 {
        return IntersectionReport::default();
    }
    let boxes: Vec<(Vec3, Vec3)> = (0..nf)
        .map(|f| {
            let t = mesh.face_vertices(f);
            let mut lo = t[0];
            let mut hi = t[0];
            for v in &t[1..] {
                for c in 0..3 {
                    lo[c] = lo[c].min(v[c]);
                    hi[c] = hi[c].max(v[c]);
                }
            }
            (lo, hi)
        })
        .collect();
    let (lo, hi) = mesh.bounding_box();
    let extent: f64 = boxes.iter().map(|(l, h)| (h[0] - l[0]).max(h[1] - l[1]).max(h[2] - l[2])).sum::<f64>() / nf as f64;
    let span = (0..3).map(|c| hi[c] - lo[c]).fold(0.0, f64::max);
    let cell = extent.max(span / 128.0).max(1e-12);
    let dims: Vec<usize> = (0..3).map(|c| (((hi[c] - lo[c]) / cell).floor() as usize + 1).min(256)).collect();
    let index = |x: f64, c: usize| -> usize { (((x - lo[c]) / cell).floor().max(0.0) as usize).min(dims[c] - 1) };

    let mut cells: std::collections::HashMap<(usize, usize, usize), Vec<usize>> = std::collections::HashMap::new();
    for (f, (bl, bh)) in boxes.iter().enumerate() {
        for i in index(bl[0], 0)..=index(bh[0], 0) {
            for j in index(bl[1], 1)..=index(bh[1], 1) {
                for k in index(bl[2], 2)..=index(bh[2], 2) {
                    cells.entry((i, j, k)).or_default().push(f);
                }
            }
        }
    }
    let mut candidates = Vec::new();
    for members in cells.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                candidates.push((a.min(b), a.max(b)));
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();

    let overlaps = |a: usize, b: usize| (0..3).all(|c| boxes[a].0[c] <= boxes[b].1[c] && boxes[b].0[c] <= boxes[a].1[c]);
    let pairs: Vec<(usize, usize)> = candidates
        .into_iter()
        .filter(|&(a, b)| {
            let fa = mesh.faces[a];
            let fb = mesh.faces[b];
            !fa.iter().any(|v| fb.contains(v)) && overlaps(a, b)
        })
        .filter(|&(a, b)| triangles_intersect(&mesh.face_vertices(a), &mesh.face_vertices(b)))
        .collect();
    IntersectionReport {
        count: pairs.len(),
        pairs,
    }
}

/// Faces whose geometric normal points toward `interior` rather than away
/// from it. Meaningful for star-shaped surfaces around `interior`.
pub fn count_flipped_faces(mesh: &Mesh, interior: Vec3) -> usize {
    (0..mesh.faces.len())
        .filter(|&f| {
            let t = mesh.face_vertices(f);
            let centroid = [
                (t[0][0] + t[1][0] + t[2][0]) / 3.0,
                (t[0][1] + t[1][1] + t[2][1]) / 3.0,
                (t[0][2] + t[1][2] + t[2][2]) / 3.0,
            ];
            dot(mesh.face_cross(f), sub(centroid, interior)) < 0.0
        })
        .count()
}
