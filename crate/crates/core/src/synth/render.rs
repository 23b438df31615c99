use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};
use crate::mesh::{dot, norm, normalize, triangle_normal, TriangleMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    GrayscaleLambertian,
    Depth,
}

/// Pinhole camera. `x_cam = rotation * x_world + translation`; the camera
/// looks down `+z` with image rows growing along camera `+y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Camera {
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        let t = self.translation;
        [
            dot(r[0], p) + t[0],
            dot(r[1], p) + t[1],
            dot(r[2], p) + t[2],
        ]
    }

    /// Pixel coordinates `(f x / z + cx, f y / z + cy)` of a camera-space point.
    pub fn project(&self, c: Vec3) -> [f64; 2] {
        [
            self.focal * c[0] / c[2] + self.principal_point[0],
            self.focal * c[1] / c[2] + self.principal_point[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub camera: Camera,
    /// Unit vector pointing from the surface towards the light, camera frame.
    pub light_direction: Vec3,
    pub albedo: f64,
    pub mode: RenderMode,
}

impl RenderConfig {
    /// Frontal view of a head-sized template centred at the origin with its
    /// face towards `-z`: camera 200 mm in front, world `+y` up in the image,
    /// the head fills about 80% of the frame width.
    pub fn frontal(size: usize) -> Self {
        let s = size as f64;
        Self {
            width: size,
            height: size,
            camera: Camera {
                focal: 100.0 * s / 64.0,
                principal_point: [s / 2.0, s / 2.0],
                rotation: [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
                translation: [0.0, 0.0, 200.0],
            },
            light_direction: normalize([0.3, -0.3, -1.0]),
            albedo: 0.9,
            mode: RenderMode::GrayscaleLambertian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::ConfigMismatch(format!(
                "image must be at least 8x8, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.camera.focal > 0.0) {
            return Err(Error::ConfigMismatch("focal length must be positive".into()));
        }
        if (norm(self.light_direction) - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigMismatch("light direction must be a unit vector".into()));
        }
        if !(self.albedo > 0.0 && self.albedo <= 1.0) {
            return Err(Error::ConfigMismatch(format!(
                "albedo must lie in (0, 1], got {}",
                self.albedo
            )));
        }
        Ok(())
    }
}

/// Z-buffered rasterization with flat shading.
///
/// Pixel centres sit at half-integer coordinates. A centre lying exactly on
/// an edge belongs to the triangle only if that edge is a top or left edge,
/// so a shared edge is drawn once. Depth is interpolated perspective-correctly
/// and ties keep the earlier face.
pub fn render(mesh: &TriangleMesh, config: &RenderConfig) -> Result<GrayImage> {
    config.validate()?;
    let cam: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|&p| config.camera.to_camera(p))
        .collect();
    if let Some(v) = cam.iter().position(|c| !(c[2] > 0.0)) {
        return Err(Error::BehindCamera(v));
    }
    let screen: Vec<[f64; 2]> = cam.iter().map(|&c| config.camera.project(c)).collect();
    let (w, h) = (config.width, config.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut image = GrayImage::new(w, h);

    for face in mesh.faces() {
        let [mut i0, mut i1, i2] = *face;
        let n = normalize(triangle_normal(&cam[i0], &cam[i1], &cam[i2]));
        let value_shade = config.albedo * dot(n, config.light_direction).max(0.0);
        let mut area = edge(screen[i0], screen[i1], screen[i2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut i0, &mut i1);
            area = -area;
        }
        let (p0, p1, p2) = (screen[i0], screen[i1], screen[i2]);
        let inv_z = [1.0 / cam[i0][2], 1.0 / cam[i1][2], 1.0 / cam[i2][2]];
        let tl = [top_left(p1, p2), top_left(p2, p0), top_left(p0, p1)];

        let min_x = p0[0].min(p1[0]).min(p2[0]);
        let max_x = p0[0].max(p1[0]).max(p2[0]);
        let min_y = p0[1].min(p1[1]).min(p2[1]);
        let max_y = p0[1].max(p1[1]).max(p2[1]);
        let x_lo = (min_x - 0.5).ceil().max(0.0);
        let x_hi = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let y_lo = (min_y - 0.5).ceil().max(0.0);
        let y_hi = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        for py in y_lo as usize..=y_hi as usize {
            for px in x_lo as usize..=x_hi as usize {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let e = [edge(p1, p2, p), edge(p2, p0, p), edge(p0, p1, p)];
                let inside = e
                    .iter()
                    .zip(&tl)
                    .all(|(&ei, &is_tl)| ei > 0.0 || (ei == 0.0 && is_tl));
                if !inside {
                    continue;
                }
                let z = area / (e[0] * inv_z[0] + e[1] * inv_z[1] + e[2] * inv_z[2]);
                let k = py * w + px;
                if z < depth[k] {
                    depth[k] = z;
                    image.pixels[k] = match config.mode {
                        RenderMode::GrayscaleLambertian => value_shade,
                        RenderMode::Depth => z,
                    };
                }
            }
        }
    }
    Ok(image)
}

/// Twice the signed area of `(a, b, p)`, positive when `p` lies on the
/// interior side of `a -> b` for our orientation.
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera(size: usize, focal: f64) -> RenderConfig {
        RenderConfig {
            width: size,
            height: size,
            camera: Camera {
                focal,
                principal_point: [size as f64 / 2.0; 2],
                rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                translation: [0.0; 3],
            },
            light_direction: [0.0, 0.0, -1.0],
            albedo: 0.75,
            mode: RenderMode::GrayscaleLambertian,
        }
    }

    /// Square of half-width `r` at depth `z`, facing the camera.
    fn square(r: f64, z: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![[-r, -r, z], [r, -r, z], [r, r, z], [-r, r, z]],
            vec![[0, 2, 1], [0, 3, 2]],
        )
        .unwrap()
    }

    #[test]
    fn facing_square_is_flat_albedo() {
        let cfg = axis_camera(16, 10.0);
        let img = render(&square(2.0, 10.0), &cfg).unwrap();
        // square spans pixels [6, 10) in both directions
        for y in 0..16 {
            for x in 0..16 {
                let inside = (6..10).contains(&x) && (6..10).contains(&y);
                let want = if inside { 0.75 } else { 0.0 };
                assert_eq!(img.get(x, y), want, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn shared_diagonal_drawn_once() {
        // a square whose diagonal passes exactly through pixel centres
        let mut cfg = axis_camera(16, 1.0);
        cfg.mode = RenderMode::Depth;
        let z = 1.0;
        let m = TriangleMesh::new(
            vec![[-4.5, -4.5, z], [3.5, -4.5, z], [3.5, 3.5, z], [-4.5, 3.5, z]],
            vec![[0, 2, 1], [0, 3, 2]],
        )
        .unwrap();
        let mut count = vec![0u32; 256];
        for f in m.faces() {
            let verts: Vec<Vec3> = f.iter().map(|&i| m.vertices()[i]).collect();
            let single = TriangleMesh::new(verts, vec![[0, 1, 2]]).unwrap();
            let img = render(&single, &cfg).unwrap();
            for (c, p) in count.iter_mut().zip(&img.pixels) {
                *c += u32::from(*p > 0.0);
            }
        }
        assert!(count.iter().all(|&c| c <= 1));
        assert_eq!(count.iter().filter(|&&c| c == 1).count(), 64);
    }

    #[test]
    fn depth_of_fronto_parallel_plane() {
        let mut cfg = axis_camera(32, 20.0);
        cfg.mode = RenderMode::Depth;
        let d = 37.3;
        let img = render(&square(10.0, d), &cfg).unwrap();
        let covered: Vec<f64> = img.pixels.iter().copied().filter(|&p| p > 0.0).collect();
        assert!(!covered.is_empty());
        assert!(covered.iter().all(|p| (p - d).abs() < 1e-9));
    }

    #[test]
    fn nearer_triangle_wins() {
        let mut cfg = axis_camera(16, 8.0);
        cfg.mode = RenderMode::Depth;
        let m = TriangleMesh::new(
            vec![
                [-2.0, -2.0, 2.0],
                [2.0, -2.0, 2.0],
                [0.0, 2.0, 2.0],
                [-1.0, -1.0, 1.0],
                [1.0, -1.0, 1.0],
                [0.0, 1.0, 1.0],
            ],
            vec![[0, 2, 1], [3, 5, 4]],
        )
        .unwrap();
        let img = render(&m, &cfg).unwrap();
        assert_eq!(img.get(8, 8), 1.0);
        // reversed face order must give the same result
        let m2 = TriangleMesh::new(m.vertices().to_vec(), vec![[3, 5, 4], [0, 2, 1]]).unwrap();
        assert_eq!(render(&m2, &cfg).unwrap(), img);
    }

    #[test]
    fn projection_matches_hand_computation() {
        let cfg = RenderConfig::frontal(64);
        let c = cfg.camera.to_camera([10.0, 20.0, -50.0]);
        assert_eq!(c, [-10.0, -20.0, 150.0]);
        let p = cfg.camera.project(c);
        assert!((p[0] - (100.0 * -10.0 / 150.0 + 32.0)).abs() < 1e-12);
        assert!((p[1] - (100.0 * -20.0 / 150.0 + 32.0)).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_and_bad_config() {
        let cfg = axis_camera(16, 10.0);
        assert!(matches!(render(&square(1.0, -1.0), &cfg), Err(Error::BehindCamera(0))));
        let mut bad = cfg.clone();
        bad.light_direction = [0.0, 0.0, -2.0];
        assert!(render(&square(1.0, 5.0), &bad).is_err());
        let mut bad = cfg;
        bad.width = 4;
        assert!(render(&square(1.0, 5.0), &bad).is_err());
    }
}
