//! Procedural meshes used as templates and test fixtures.

use std::collections::HashMap;

use super::{normalize, Landmark, TriangleMesh, Vec3};

/// Subdivided icosahedron projected onto a sphere. Level `k` has
/// `10 * 4^k + 2` vertices; faces wind counter-clockwise seen from outside.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoints.entry(key).or_insert_with(|| {
                    let (pa, pb) = (vertices[a], vertices[b]);
                    vertices.push(normalize([
                        pa[0] + pb[0],
                        pa[1] + pb[1],
                        pa[2] + pb[2],
                    ]));
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    let vertices = vertices
        .into_iter()
        .map(|v| [v[0] * radius, v[1] * radius, v[2] * radius])
        .collect();
    TriangleMesh::new(vertices, faces).expect("icosphere construction is valid")
}

/// Planar grid in the `z = 0` plane with `nx x ny` vertices, normals along +z.
pub fn flat_grid(nx: usize, ny: usize, spacing: f64) -> TriangleMesh {
    assert!(nx >= 2 && ny >= 2, "grid needs at least 2x2 vertices");
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let (b, c, d) = (a + 1, a + nx, a + nx + 1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid construction is valid")
}

/// Surface of the cube `[0, size]^3` with every face split into an
/// `n x n` grid of quads, two triangles each. Outward winding.
pub fn cube_grid(n: usize, size: f64) -> TriangleMesh {
    assert!(n >= 1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // (normal axis, side, u axis, v axis) with u x v pointing outward
    let sides = [
        (0, 0, 2, 1),
        (0, n, 1, 2),
        (1, 0, 0, 2),
        (1, n, 2, 0),
        (2, 0, 1, 0),
        (2, n, 0, 1),
    ];
    let mut vid = |p: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(p).or_insert_with(|| {
            vertices.push([
                p[0] as f64 * size / n as f64,
                p[1] as f64 * size / n as f64,
                p[2] as f64 * size / n as f64,
            ]);
            vertices.len() - 1
        })
    };
    for &(axis, side, u, v) in &sides {
        for j in 0..n {
            for i in 0..n {
                let corner = |di: usize, dj: usize| {
                    let mut p = [0usize; 3];
                    p[axis] = side;
                    p[u] = i + di;
                    p[v] = j + dj;
                    p
                };
                let a = vid(corner(0, 0), &mut vertices);
                let b = vid(corner(1, 0), &mut vertices);
                let c = vid(corner(1, 1), &mut vertices);
                let d = vid(corner(0, 1), &mut vertices);
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    TriangleMesh::new(vertices, faces).expect("cube construction is valid")
}

/// Head-sized template: an icosphere of radius 50 mm with a handful of
/// landmarks at fixed vertices on the front (`-z`) side, which faces the
/// default camera.
pub fn toy_head(subdivisions: u32) -> TriangleMesh {
    let sphere = icosphere(subdivisions, 50.0);
    let targets: [(&str, Vec3); 6] = [
        ("nose_tip", [0.0, 0.0, -1.0]),
        ("right_eye", [-0.4, 0.35, -0.85]),
        ("left_eye", [0.4, 0.35, -0.85]),
        ("chin", [0.0, -0.7, -0.7]),
        ("right_cheek", [-0.7, -0.2, -0.7]),
        ("left_cheek", [0.7, -0.2, -0.7]),
    ];
    let landmarks = targets
        .iter()
        .map(|(name, dir)| {
            let d = normalize(*dir);
            let vertex_index = nearest_vertex(sphere.vertices(), [d[0] * 50.0, d[1] * 50.0, d[2] * 50.0]);
            Landmark {
                name: name.to_string(),
                vertex_index,
            }
        })
        .collect();
    sphere
        .with_landmarks(landmarks)
        .expect("landmark indices come from the mesh")
}

fn nearest_vertex(vertices: &[Vec3], p: Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, v) in vertices.iter().enumerate() {
        let d = (v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2) + (v[2] - p[2]).powi(2);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}
