use std::sync::Arc;

use meshgcn::encoder2d::{Conv2d, Encoder2DConfig, ImageEncoder};
use meshgcn::eval::{bidirectional_error, point_to_surface, procrustes_align, region_mask_from_landmarks, AlignMode, RigidTransform};
use meshgcn::mesh::primitives::{flat_grid, icosphere, toy_head};
use meshgcn::mesh::{ScaledLaplacian, Vec3};
use meshgcn::nn::{l1_loss, relu_backward, relu_forward, ChebConv, Dense, Parameters};
use meshgcn::sampling::{build_hierarchy, build_upsampling, decimate_quadric, SamplingPair};
use meshgcn::synth::GrayImage;
use meshgcn::{CsrMatrix, TriangleMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{dense_eigen, dot, grad_rel_err, numeric_grad, random_mesh, rel_err};
use crate::{ensure, Check};

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

/// U diag(g(lambda)) U^T x with T_k(t) = cos(k arccos t).
fn spectral_filter(s: &ScaledLaplacian, layer: &ChebConv, x: &[f64]) -> Vec<f64> {
    let (values, u) = dense_eigen(&s.laplacian);
    let n = values.len();
    let (k1, fi, fo) = (layer.order() + 1, layer.in_channels(), layer.out_channels());
    let w = layer.weight.values();
    let mut y = vec![0.0; n * fo];
    for i in 0..fi {
        let xhat: Vec<f64> = (0..n).map(|e| (0..n).map(|v| u[(v, e)] * x[v * fi + i]).sum()).collect();
        for j in 0..fo {
            let filtered: Vec<f64> = (0..n)
                .map(|e| {
                    let t = (2.0 * values[e] / s.lambda_max - 1.0).clamp(-1.0, 1.0);
                    let g: f64 = (0..k1).map(|k| w[(k * fi + i) * fo + j] * (k as f64 * t.acos()).cos()).sum();
                    g * xhat[e]
                })
                .collect();
            for v in 0..n {
                y[v * fo + j] += (0..n).map(|e| u[(v, e)] * filtered[e]).sum::<f64>();
            }
        }
    }
    for v in 0..n {
        for j in 0..fo {
            y[v * fo + j] += layer.bias.values()[j];
        }
    }
    y
}

pub fn spectral() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for trial in 0..100 {
        let mesh = random_mesh(&mut rng);
        largest = largest.max(mesh.vertex_count());
        let s = ScaledLaplacian::for_mesh(&mesh).map_err(|e| e.to_string())?;
        let order = rng.random_range(0..=10);
        let (fi, fo) = (rng.random_range(1..4), rng.random_range(1..4));
        let mut layer = ChebConv::new(Arc::new(s.scaled.clone()), order, fi, fo, &mut rng);
        let bias: Vec<f64> = (0..fo).map(|_| rng.random_range(-1.0..1.0)).collect();
        layer.bias.assign(&bias).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..mesh.vertex_count() * fi).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = layer.forward(&x, 1).map_err(|e| e.to_string())?;
        let err = rel_err(&y, &spectral_filter(&s, &layer, &x));
        ensure!(err <= 1e-8, "mesh {trial} (K = {order}): relative error {err:.2e}");
        worst = worst.max(err);
    }
    ensure!(largest <= 50, "a random mesh has {largest} vertices");
    Ok(format!("100 meshes up to {largest} vertices, K <= 10, worst relative error {worst:.1e}"))
}

/// Worst norm-wise relative error over the gradient checks of each layer.
#[derive(Default)]
struct Worst(Vec<(&'static str, usize, f64)>);

impl Worst {
    fn record(&mut self, layer: &'static str, err: f64) -> Check {
        ensure!(err <= GRAD_TOL, "{layer}: relative error {err:.2e}");
        match self.0.iter_mut().find(|(l, _, _)| *l == layer) {
            Some(e) => {
                e.1 += 1;
                e.2 = e.2.max(err);
            }
            None => self.0.push((layer, 1, err)),
        }
        Ok(String::new())
    }

    fn summary(&self) -> Check {
        for (layer, n, _) in &self.0 {
            ensure!(*n >= INSTANCES, "{layer}: only {n} instances");
        }
        Ok(self
            .0
            .iter()
            .map(|(l, n, e)| format!("{l} {n}x {e:.0e}"))
            .collect::<Vec<_>>()
            .join(", "))
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn cheb_instance(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Check {
    let mesh = random_mesh(rng);
    let s = ScaledLaplacian::for_mesh(&mesh).map_err(|e| e.to_string())?;
    let order = rng.random_range(0..=8);
    let (fi, fo, batch) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3));
    let mut layer = ChebConv::new(Arc::new(s.scaled.clone()), order, fi, fo, rng);
    let n = mesh.vertex_count();
    let x = random_vec(batch * n * fi, rng);
    let r = random_vec(batch * n * fo, rng);
    let (_, cache) = layer.forward(&x, batch).map_err(|e| e.to_string())?;
    let gx = layer.backward(&cache, &r).map_err(|e| e.to_string())?;
    let probe = layer.clone();
    let f = |l: &ChebConv, x: &[f64]| dot(&l.forward(x, batch).unwrap().0, &r);
    worst.record("chebconv", grad_rel_err(&gx, &numeric_grad(&x, H, |xp| f(&probe, xp))))?;
    let nw = numeric_grad(probe.weight.values(), H, |wp| {
        let mut l = probe.clone();
        l.weight.assign(wp).unwrap();
        f(&l, &x)
    });
    worst.record("chebconv", grad_rel_err(layer.weight.grad().unwrap(), &nw))
}

fn dense_instance(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Check {
    let (fi, fo, batch) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..4));
    let mut layer = Dense::new(fi, fo, rng);
    let x = random_vec(batch * fi, rng);
    let r = random_vec(batch * fo, rng);
    let f = |l: &Dense, x: &[f64]| dot(&relu_forward(&l.forward(x, batch).unwrap().0), &r);
    let (y, cache) = layer.forward(&x, batch).map_err(|e| e.to_string())?;
    let gy = relu_backward(&relu_forward(&y), &r).map_err(|e| e.to_string())?;
    let gx = layer.backward(&cache, &gy).map_err(|e| e.to_string())?;
    let probe = layer.clone();
    worst.record("dense", grad_rel_err(&gx, &numeric_grad(&x, H, |xp| f(&probe, xp))))?;
    let nw = numeric_grad(probe.weight.values(), H, |wp| {
        let mut l = probe.clone();
        l.weight.assign(wp).unwrap();
        f(&l, &x)
    });
    worst.record("dense", grad_rel_err(layer.weight.grad().unwrap(), &nw))
}

fn conv_instance(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Check {
    let k = [1, 3, 5][rng.random_range(0..3)];
    let (s, p) = (rng.random_range(1..3), rng.random_range(0..=k / 2));
    let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
    let (b, h, w) = (rng.random_range(1..3), rng.random_range(k..k + 6), rng.random_range(k..k + 6));
    let mut conv = Conv2d::new(ci, co, k, s, p, rng);
    let x = random_vec(b * h * w * ci, rng);
    let (y, cache) = conv.forward(&x, b, h, w).map_err(|e| e.to_string())?;
    let r = random_vec(y.len(), rng);
    let gx = conv.backward(&cache, &r).map_err(|e| e.to_string())?;
    let probe = conv.clone();
    let f = |c: &Conv2d, x: &[f64]| dot(&c.forward(x, b, h, w).unwrap().0, &r);
    worst.record("conv2d", grad_rel_err(&gx, &numeric_grad(&x, H, |xp| f(&probe, xp))))?;
    let nw = numeric_grad(probe.weight.values(), H, |wp| {
        let mut c = probe.clone();
        c.weight.assign(wp).unwrap();
        f(&c, &x)
    });
    worst.record("conv2d", grad_rel_err(conv.weight.grad().unwrap(), &nw))
}

/// The whole image encoder in training mode, probed on a sample of entries
/// of every tensor of the tap and fusion head.
fn fusion_instance(trial: u64, rng: &mut ChaCha8Rng, worst: &mut Worst) -> Check {
    let taps = [vec![], vec![0], vec![1], vec![0, 1]][rng.random_range(0..4)].clone();
    let config = Encoder2DConfig {
        image_size: 12,
        widths: vec![3, 4, 4],
        strides: vec![2, 2, 1],
        taps,
        tap_channels: rng.random_range(1..3),
        tap_features: rng.random_range(2..5),
        global_features: rng.random_range(2..6),
        latent_size: rng.random_range(1..4),
        latent_relu: rng.random_bool(0.5),
        dropout: 0.25,
        seed: trial,
        ..Encoder2DConfig::default()
    };
    let mut model = ImageEncoder::new(&config).map_err(|e| e.to_string())?;
    model.visit_params_mut(&mut |_, t| {
        for v in t.values_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    });
    let batch = 2;
    let images: Vec<GrayImage> = (0..batch)
        .map(|_| GrayImage::from_pixels(12, 12, (0..144).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
        .collect();
    let x = model.batch_images(&[&images[0], &images[1]]).map_err(|e| e.to_string())?;
    let r = random_vec(batch * config.latent_size, rng);
    let seed = 1000 + trial;
    let probe = |m: &ImageEncoder| dot(&m.forward(&x, batch, true, seed).unwrap().0, &r);
    model.zero_grad();
    let (_, cache) = model.forward(&x, batch, true, seed).map_err(|e| e.to_string())?;
    model.backward(&cache, &r).map_err(|e| e.to_string())?;
    let mut grads = Vec::new();
    model.visit_params(&mut |n, t| {
        if !n.starts_with("backbone") {
            grads.push((n.to_string(), t.grad().unwrap().to_vec()))
        }
    });
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (name, grad) in &grads {
        for _ in 0..6 {
            let i = rng.random_range(0..grad.len());
            let bump = |m: &mut ImageEncoder, d: f64| {
                m.visit_params_mut(&mut |n, t| {
                    if n == name {
                        t.values_mut()[i] += d;
                    }
                })
            };
            bump(&mut model, H);
            let up = probe(&model);
            bump(&mut model, -2.0 * H);
            let down = probe(&model);
            bump(&mut model, H);
            analytic.push(grad[i]);
            numeric.push((up - down) / (2.0 * H));
        }
    }
    worst.record("fusion head", grad_rel_err(&analytic, &numeric))
}

fn l1_instance(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Check {
    let n = rng.random_range(1..40);
    // keep every residual well clear of the kink at zero
    let t = random_vec(n, rng);
    let p: Vec<f64> = t
        .iter()
        .map(|v| v + rng.random_range(0.01..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let (_, g) = l1_loss(&p, &t).map_err(|e| e.to_string())?;
    let ng = numeric_grad(&p, H, |pp| l1_loss(pp, &t).unwrap().0);
    worst.record("l1 loss", grad_rel_err(&g, &ng))
}

pub fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = Worst::default();
    for trial in 0..INSTANCES {
        cheb_instance(&mut rng, &mut worst)?;
        dense_instance(&mut rng, &mut worst)?;
        conv_instance(&mut rng, &mut worst)?;
        fusion_instance(trial as u64, &mut rng, &mut worst)?;
        l1_instance(&mut rng, &mut worst)?;
    }
    worst.summary()
}

fn check_pair(level: usize, pair: &SamplingPair) -> Check {
    let (qd, qu) = (&pair.q_down, &pair.q_up);
    for r in 0..qd.rows() {
        let row: Vec<_> = qd.row(r).collect();
        ensure!(row.len() == 1 && row[0].1 == 1.0, "level {level}: Q_d row {r} is not one-hot");
    }
    for r in 0..qu.rows() {
        let sum: f64 = qu.row(r).map(|(_, v)| v).sum();
        ensure!((sum - 1.0).abs() <= 1e-12, "level {level}: Q_u row {r} sums to {sum}");
        ensure!(qu.row_nnz(r) <= 3, "level {level}: Q_u row {r} has {} entries", qu.row_nnz(r));
    }
    let diff = qd
        .matmul(qu)
        .and_then(|p| p.add_scaled(1.0, &CsrMatrix::identity(pair.coarse_count), -1.0))
        .map_err(|e| e.to_string())?;
    let worst = diff.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(worst <= 1e-12, "level {level}: |Q_d Q_u - I| = {worst:.1e}");
    Ok(String::new())
}

pub fn sampling() -> Check {
    let h = build_hierarchy(&icosphere(3, 50.0), 4, 2).map_err(|e| e.to_string())?;
    let sizes = h.level_sizes();
    ensure!(sizes == vec![642, 161, 41], "level sizes {sizes:?}");
    for (level, pair) in h.pairs.iter().enumerate() {
        check_pair(level, pair)?;
    }
    let grid = flat_grid(13, 13, 2.0);
    let mut mesh = grid.clone();
    let mut collapses = 0;
    let mut target = grid.vertex_count();
    while target / 4 >= 4 {
        target /= 4;
        let d = decimate_quadric(&mesh, target).map_err(|e| e.to_string())?;
        ensure!(d.collapse_costs.iter().all(|&c| c == 0.0), "non-zero quadric cost on a plane");
        collapses += d.collapse_costs.len();
        let qu = build_upsampling(&mesh, &d.coarse, &d.q_down).map_err(|e| e.to_string())?;
        let fine = mesh.flat_vertices();
        let back = d.q_down.mul_dense(&fine, 3).and_then(|c| qu.mul_dense(&c, 3)).map_err(|e| e.to_string())?;
        ensure!(rel_err(&back, &fine) <= 1e-12, "planar round trip is not exact");
        mesh = d.coarse;
    }
    Ok(format!("642 -> 161 -> 41, {collapses} zero-cost collapses on a 169-vertex plane"))
}

fn quat_rotation(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn sampled_distance(p: Vec3, t: [Vec3; 3]) -> f64 {
    // (n + 1)(n + 2) / 2 = 100,128 samples including edges and corners
    let n = 446;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n - i {
            let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
            let q: Vec3 = std::array::from_fn(|k| (1.0 - u - v) * t[0][k] + u * t[1][k] + v * t[2][k]);
            best = best.min((0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>());
        }
    }
    best.sqrt()
}

pub fn evaluation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_motion: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(3..20);
        let src: Vec<Vec3> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-50.0..50.0)))
            .collect();
        let truth = RigidTransform {
            rotation: quat_rotation(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
            translation: std::array::from_fn(|_| rng.random_range(-100.0..100.0)),
            scale: 1.0,
        };
        let dst: Vec<Vec3> = src.iter().map(|&p| truth.apply(p)).collect();
        let got = procrustes_align(&src, &dst, AlignMode::Rigid).map_err(|e| e.to_string())?;
        for i in 0..3 {
            for j in 0..3 {
                worst_motion = worst_motion.max((got.rotation[i][j] - truth.rotation[i][j]).abs());
            }
            worst_motion = worst_motion.max((got.translation[i] - truth.translation[i]).abs());
        }
    }
    ensure!(worst_motion <= 1e-10, "Procrustes error {worst_motion:.1e}");

    let head = toy_head(2);
    let on_surface = point_to_surface(head.vertices(), &head).map_err(|e| e.to_string())?;
    ensure!(on_surface.iter().all(|&d| d == 0.0), "vertices are off their own surface");

    let mut pairs = 0;
    let mut worst_gap: f64 = 0.0;
    while pairs < 1000 {
        let t: [Vec3; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let Ok(m) = TriangleMesh::new(t.to_vec(), vec![[0, 1, 2]]) else {
            continue;
        };
        let p: Vec3 = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let exact = point_to_surface(&[p], &m).map_err(|e| e.to_string())?[0];
        let sampled = sampled_distance(p, t);
        ensure!(exact <= sampled + 1e-12, "closest point {exact} beats every sample {sampled}");
        // the sample spacing bounds how far the grid can be from the truth
        ensure!(sampled - exact <= 1e-3 * m.bounding_diagonal(), "{exact} vs sampled {sampled}");
        worst_gap = worst_gap.max(sampled - exact);
        pairs += 1;
    }

    let recon = flat_grid(11, 11, 2.0);
    let scan = recon
        .with_vertices(recon.vertices().iter().map(|p| [p[0], p[1], p[2] + 0.75]).collect())
        .map_err(|e| e.to_string())?;
    let v = recon.vertices();
    let corners = [v[0], v[10], v[v.len() - 11], v[v.len() - 1]];
    let mask = region_mask_from_landmarks(&recon, &corners, 2.0).map_err(|e| e.to_string())?;
    let report = bidirectional_error(&recon, &scan, &mask).map_err(|e| e.to_string())?;
    ensure!((report.combined - 0.75).abs() <= 1e-9, "shifted plane: combined {}", report.combined);
    Ok(format!(
        "Procrustes {worst_motion:.0e}, {pairs} point-triangle pairs within {worst_gap:.1e} of the sampled oracle, shift 0.75 -> {:.12}",
        report.combined
    ))
}
