mod common;

use meshgcn::autoencoder::{build_model, AutoencoderConfig, AutoencoderModel, Normalization};
use meshgcn::checkpoint::Checkpoint;
use meshgcn::encoder2d::{
    reconstruct_from_image, train_stage2, Conv2d, Encoder2DConfig, ImageEncoder, ImagePair, Stage2Trainer,
};
use meshgcn::mesh::primitives::toy_head;
use meshgcn::nn::Parameters;
use meshgcn::sampling::build_hierarchy;
use meshgcn::synth::{build_toy_shape_model, generate_dataset, GrayImage, RenderConfig, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct nested-loop cross-correlation over `[B, H, W, C]`.
fn brute_conv(conv: &Conv2d, x: &[f64], b: usize, h: usize, w: usize, k: usize, s: usize, p: usize) -> Vec<f64> {
    let (ci, co) = (conv.in_channels(), conv.out_channels());
    let (ho, wo) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
    let wt = conv.weight.values();
    let mut y = vec![0.0; b * ho * wo * co];
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..co {
                    let mut acc = conv.bias.values()[o];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as i64 - p as i64;
                            let ix = (ox * s + kx) as i64 - p as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for c in 0..ci {
                                let xv = x[((n * h + iy as usize) * w + ix as usize) * ci + c];
                                acc += xv * wt[((ky * k + kx) * ci + c) * co + o];
                            }
                        }
                    }
                    y[((n * ho + oy) * wo + ox) * co + o] = acc;
                }
            }
        }
    }
    y
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &(k, s, p, ci, co) in &[(3, 1, 1, 1, 1), (3, 2, 1, 2, 3), (3, 1, 0, 3, 2), (1, 1, 0, 4, 2), (3, 3, 2, 1, 2)] {
        let mut conv = Conv2d::new(ci, co, k, s, p, &mut rng);
        let bias: Vec<f64> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
        conv.bias.assign(&bias).unwrap();
        let (b, h, w) = (2, 8, 7);
        let x: Vec<f64> = (0..b * h * w * ci).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = conv.forward(&x, b, h, w).unwrap();
        let want = brute_conv(&conv, &x, b, h, w, k, s, p);
        assert_eq!(y.len(), want.len());
        for (a, e) in y.iter().zip(&want) {
            assert!((a - e).abs() <= 1e-12, "k{k} s{s} p{p}: {a} vs {e}");
        }
    }
}

#[test]
fn conv2d_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
    let (b, h, w) = (2, 7, 6);
    let x: Vec<f64> = (0..b * h * w * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (y, cache) = conv.forward(&x, b, h, w).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gx = conv.backward(&cache, &r).unwrap();
    let f = |c: &Conv2d, x: &[f64]| common::dot(&c.forward(x, b, h, w).unwrap().0, &r);
    let numeric = common::numeric_grad(&x, 1e-6, |xp| f(&conv, xp));
    assert!(common::grad_rel_err(&gx, &numeric) < 1e-6);
    let gw = conv.weight.grad().unwrap().to_vec();
    let w0 = conv.weight.values().to_vec();
    let numeric = common::numeric_grad(&w0, 1e-6, |wp| {
        let mut c = conv.clone();
        c.weight.assign(wp).unwrap();
        f(&c, &x)
    });
    assert!(common::grad_rel_err(&gw, &numeric) < 1e-6);
    let gb = conv.bias.grad().unwrap().to_vec();
    let want: Vec<f64> = (0..3).map(|o| r.iter().skip(o).step_by(3).sum()).collect();
    assert!(common::rel_err(&gb, &want) < 1e-12);
}

fn small_config(image_size: usize) -> Encoder2DConfig {
    Encoder2DConfig {
        image_size,
        widths: vec![3, 4, 5],
        strides: vec![2, 2, 2],
        taps: vec![0, 1],
        tap_channels: 2,
        tap_features: 4,
        global_features: 5,
        latent_size: 3,
        batch_size: 2,
        dropout: 0.25,
        ..Encoder2DConfig::default()
    }
}

fn random_image(side: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    GrayImage::from_pixels(side, side, (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn encoder_gradients_match_finite_differences() {
    for (trial, latent_relu) in [(0u64, false), (1, true)] {
        let mut cfg = small_config(16);
        cfg.latent_relu = latent_relu;
        cfg.seed = trial;
        let mut model = ImageEncoder::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20 + trial);
        model.visit_params_mut(&mut |_, t| {
            for v in t.values_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
        });
        let batch = 2;
        let images = [random_image(16, &mut rng), random_image(16, &mut rng)];
        let x = model.batch_images(&[&images[0], &images[1]]).unwrap();
        let r: Vec<f64> = (0..batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        // training mode: the dropout masks are a fixed function of the seed
        let probe = |m: &ImageEncoder, x: &[f64]| common::dot(&m.forward(x, batch, true, 77).unwrap().0, &r);

        model.zero_grad();
        let (_, cache) = model.forward(&x, batch, true, 77).unwrap();
        let gx = model.backward(&cache, &r).unwrap();
        let mut grads = Vec::new();
        model.visit_params(&mut |n, t| grads.push((n.to_string(), t.grad().unwrap().to_vec())));
        let h = 1e-6;
        for (name, grad) in &grads {
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for _ in 0..10 {
                let i = rng.random_range(0..grad.len());
                let bump = |m: &mut ImageEncoder, d: f64| {
                    m.visit_params_mut(&mut |n, t| {
                        if n == name {
                            t.values_mut()[i] += d;
                        }
                    })
                };
                bump(&mut model, h);
                let up = probe(&model, &x);
                bump(&mut model, -2.0 * h);
                let down = probe(&model, &x);
                bump(&mut model, h);
                analytic.push(grad[i]);
                numeric.push((up - down) / (2.0 * h));
            }
            let err = common::grad_rel_err(&analytic, &numeric);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let mut xp = x.clone();
        for _ in 0..10 {
            let i = rng.random_range(0..x.len());
            xp[i] = x[i] + h;
            let up = probe(&model, &xp);
            xp[i] = x[i] - h;
            let down = probe(&model, &xp);
            xp[i] = x[i];
            analytic.push(gx[i]);
            numeric.push((up - down) / (2.0 * h));
        }
        assert!(common::grad_rel_err(&analytic, &numeric) < 1e-4);
    }
}

#[test]
fn output_size_does_not_depend_on_image_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for side in [16, 32] {
        let model = ImageEncoder::new(&small_config(side)).unwrap();
        let img = random_image(side, &mut rng);
        assert_eq!(model.encode2d(&img).unwrap().len(), 3);
    }
    let mut no_taps = small_config(16);
    no_taps.taps.clear();
    let model = ImageEncoder::new(&no_taps).unwrap();
    assert_eq!(model.encode2d(&random_image(16, &mut rng)).unwrap().len(), 3);
}

#[test]
fn black_image_gives_finite_latent() {
    let model = ImageEncoder::new(&Encoder2DConfig::toy()).unwrap();
    let z = model.encode2d(&GrayImage::new(64, 64)).unwrap();
    assert_eq!(z.len(), 16);
    assert!(z.iter().all(|v| v.is_finite()));
}

struct Fixture {
    decoder: AutoencoderModel,
    samples: Vec<Sample>,
    latents: Vec<Vec<f64>>,
}

fn fixture() -> Fixture {
    let head = toy_head(2);
    let shape_model = build_toy_shape_model(&head, 4, 3).unwrap();
    let samples = generate_dataset(&shape_model, &head, 12, &RenderConfig::frontal(16), 5).unwrap();
    let cfg = AutoencoderConfig {
        latent_size: 3,
        cheb_order: 2,
        encoder_levels: 3,
        channels: vec![4, 5],
        ..AutoencoderConfig::toy()
    };
    let mut decoder = build_model(&cfg, &build_hierarchy(&head, 4, 2).unwrap()).unwrap();
    let shapes: Vec<Vec<f64>> = samples.iter().map(|s| s.shape.clone()).collect();
    decoder.set_normalization(Normalization::fit(&shapes).unwrap()).unwrap();
    let latents = decoder.encode_many(&shapes).unwrap();
    Fixture {
        decoder,
        samples,
        latents,
    }
}

impl Fixture {
    fn train(&self) -> Vec<ImagePair<'_>> {
        self.samples[..8]
            .iter()
            .zip(&self.latents)
            .map(|(s, z)| ImagePair {
                image: &s.image,
                target: z,
            })
            .collect()
    }

    fn val(&self) -> Vec<ImagePair<'_>> {
        self.samples[8..]
            .iter()
            .map(|s| ImagePair {
                image: &s.image,
                target: &s.shape,
            })
            .collect()
    }
}

#[test]
fn stage2_leaves_the_autoencoder_untouched() {
    let f = fixture();
    let before = f.decoder.to_checkpoint().unwrap().to_bytes().unwrap();
    let mut cfg = small_config(16);
    cfg.epochs = 3;
    let (model, history) = train_stage2(&f.train(), &f.val(), &cfg, &f.decoder).unwrap();
    assert_eq!(history.epochs.len(), 3);
    assert_eq!(f.decoder.to_checkpoint().unwrap().to_bytes().unwrap(), before);
    let img = &f.samples[0].image;
    let a = reconstruct_from_image(&model, &f.decoder, img).unwrap();
    assert_eq!(a.len(), f.decoder.vertex_count() * 3);
    assert_eq!(a, reconstruct_from_image(&model, &f.decoder, img).unwrap());
}

#[test]
fn latent_size_must_match() {
    let f = fixture();
    let mut cfg = small_config(16);
    cfg.latent_size = 4;
    assert!(Stage2Trainer::new(&cfg, &f.decoder).is_err());
    assert!(train_stage2(&[], &f.val(), &small_config(16), &f.decoder).is_err());
}

#[test]
fn single_pair_is_memorized() {
    let f = fixture();
    let mut cfg = small_config(16);
    cfg.dropout = 0.0;
    cfg.learning_rate = 0.01;
    cfg.batch_size = 1;
    let train = &f.train()[..1];
    let mut trainer = Stage2Trainer::new(&cfg, &f.decoder).unwrap().without_timing();
    let first = trainer.run_epoch(train, &f.val(), &f.decoder).unwrap().train_loss;
    for _ in 0..300 {
        trainer.run_epoch(train, &f.val(), &f.decoder).unwrap();
    }
    let z = trainer.model().encode2d(train[0].image).unwrap();
    let l1: f64 = z.iter().zip(train[0].target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0;
    assert!(l1 < 0.02 * first, "latent L1 {l1}, first epoch {first}");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let f = fixture();
    let mut cfg = small_config(16);
    cfg.seed = 9;
    let (train, val) = (f.train(), f.val());
    let mut full = Stage2Trainer::new(&cfg, &f.decoder).unwrap().without_timing();
    for _ in 0..4 {
        full.run_epoch(&train, &val, &f.decoder).unwrap();
    }
    let mut part = Stage2Trainer::new(&cfg, &f.decoder).unwrap().without_timing();
    for _ in 0..2 {
        part.run_epoch(&train, &val, &f.decoder).unwrap();
    }
    let bytes = part.to_checkpoint().unwrap().to_bytes().unwrap();
    let mut resumed = Stage2Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    for _ in 0..2 {
        resumed.run_epoch(&train, &val, &f.decoder).unwrap();
    }
    assert_eq!(resumed.history(), full.history());
    assert_eq!(
        resumed.to_checkpoint().unwrap().to_bytes().unwrap(),
        full.to_checkpoint().unwrap().to_bytes().unwrap()
    );
}
