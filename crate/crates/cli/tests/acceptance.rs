//! Acceptance criteria. Each test prints exactly one `PASS` or `FAIL` line
//! (past the harness's output capture) and then asserts on the same verdict.
//!
//! Tests needing the real corpus or multi-day training are ignored; they run
//! with `--ignored` once the inputs exist:
//! - `EEGMMIDB_DIR`: the PhysioNet motor imagery corpus.
//! - `ACVAE_FULL_RUNS`: a directory of evaluated full-scale run directories,
//!   three seeds per variant.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use acvae_core::dataio::{assemble_datasets, read_cache, CacheContents, Label, TrialSet, CHANNELS, TRIAL_SAMPLES};
use acvae_core::diffcore::batchnorm::{batchnorm_backward, batchnorm_train};
use acvae_core::diffcore::conv::{conv2d_grouped, conv2d_grouped_backward, conv2d_transpose_grouped, conv2d_transpose_grouped_backward};
use acvae_core::diffcore::gaussian::{kl_standard_normal_backward, sigma_from_logvar, sigma_from_logvar_backward, standard_normal};
use acvae_core::diffcore::gradcheck::{check_gradients, GradCheckError, GradCheckOptions, GradCheckReport};
use acvae_core::diffcore::softmax::one_hot;
use acvae_core::diffcore::*;
use acvae_core::evaluation::{summarize, ExperimentReport};
use acvae_core::models::{Decoder, Encoder, Mlp, ModelConfig, ParamSet, ParameterStore, ReconMode, SpatialConvMode, Variant};
use acvae_core::objectives::{loss_acvae, loss_adversary, loss_cvae};
use acvae_core::training::{generator_gradients, Batch, TrainHistory};
use ndarray::{Array, Array1, Array2, Array4, Axis, Dimension, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const GRAD_TOL: f64 = 1e-4;
const ADJOINT_TOL: f64 = 1e-8;
const ADJOINT_SHAPES: usize = 50;
const LOSS_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-6;

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    let line = format!("{} {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

fn rand_array<Sh: ShapeBuilder>(rng: &mut ChaCha8Rng, dim: Sh, lo: f64, hi: f64) -> Array<f64, Sh::Dim> {
    Array::from_shape_simple_fn(dim, || rng.random_range(lo..hi))
}

fn dot<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn flat<D: Dimension>(a: &Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn as4(v: &[f64], d: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_vec(d, v.to_vec()).unwrap()
}

fn as2(v: &[f64], d: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(d, v.to_vec()).unwrap()
}

/// Collects named gradient checks and keeps the worst relative error.
#[derive(Default)]
struct GradSuite {
    checks: usize,
    worst: f64,
    failures: Vec<String>,
}

impl GradSuite {
    fn record(&mut self, name: &str, r: std::result::Result<GradCheckReport, GradCheckError>) {
        self.checks += 1;
        match r {
            Ok(rep) => self.worst = self.worst.max(rep.max_relative_error),
            Err(GradCheckError::Failed(rep)) => {
                self.worst = self.worst.max(rep.max_relative_error);
                self.failures.push(format!("{name} ({rep})"));
            }
            Err(e) => self.failures.push(format!("{name} ({e})")),
        }
    }
}

fn primitive_checks(suite: &mut GradSuite, opts: GradCheckOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let pad = Padding::new(1, 0, 2, 1);
    for groups in [1usize, 2] {
        let (xd, kd) = ((2, 4, 3, 6), (4, 4 / groups, 2, 3));
        let x = rand_array(&mut rng, xd, -1.0, 1.0);
        let k = rand_array(&mut rng, kd, -1.0, 1.0);
        let r = rand_array(&mut rng, conv2d_grouped(x.view(), k.view(), pad, groups).unwrap().raw_dim(), -1.0, 1.0);
        let g = conv2d_grouped_backward(x.view(), k.view(), pad, r.view(), true, groups).unwrap();
        let fx = |v: &[f64]| dot(&conv2d_grouped(as4(v, xd).view(), k.view(), pad, groups).unwrap(), &r);
        suite.record("conv2d input", check_gradients(fx, &flat(&x), &flat(&g.input.unwrap()), opts));
        let fk = |v: &[f64]| dot(&conv2d_grouped(x.view(), as4(v, kd).view(), pad, groups).unwrap(), &r);
        suite.record("conv2d kernels", check_gradients(fk, &flat(&k), &flat(&g.kernels), opts));

        let yd = (2, 4, 3, 5);
        let y = rand_array(&mut rng, yd, -1.0, 1.0);
        let r = rand_array(&mut rng, conv2d_transpose_grouped(y.view(), k.view(), pad, groups).unwrap().raw_dim(), -1.0, 1.0);
        let (dy, dk) = conv2d_transpose_grouped_backward(y.view(), k.view(), pad, r.view(), groups).unwrap();
        let fy = |v: &[f64]| dot(&conv2d_transpose_grouped(as4(v, yd).view(), k.view(), pad, groups).unwrap(), &r);
        suite.record("deconv input", check_gradients(fy, &flat(&y), &flat(&dy), opts));
        let fk = |v: &[f64]| dot(&conv2d_transpose_grouped(y.view(), as4(v, kd).view(), pad, groups).unwrap(), &r);
        suite.record("deconv kernels", check_gradients(fk, &flat(&k), &flat(&dk), opts));
    }

    let x = rand_array(&mut rng, (4, 6), -1.0, 1.0);
    let w = rand_array(&mut rng, (3, 6), -1.0, 1.0);
    let b: Array1<f64> = rand_array(&mut rng, 3, -1.0, 1.0);
    let r = rand_array(&mut rng, (4, 3), -1.0, 1.0);
    let g = dense_backward(x.view(), w.view(), r.view()).unwrap();
    suite.record("dense input", check_gradients(|v| dot(&dense(as2(v, (4, 6)).view(), w.view(), b.view()).unwrap(), &r), &flat(&x), &flat(&g.input), opts));
    suite.record("dense weight", check_gradients(|v| dot(&dense(x.view(), as2(v, (3, 6)).view(), b.view()).unwrap(), &r), &flat(&w), &flat(&g.weight), opts));
    let fb = |v: &[f64]| dot(&dense(x.view(), w.view(), Array1::from_vec(v.to_vec()).view()).unwrap(), &r);
    suite.record("dense bias", check_gradients(fb, &flat(&b), &flat(&g.bias), opts));

    // Probe ReLU away from its kink.
    let x: Array1<f64> = Array1::from_shape_simple_fn(40, || rng.random_range(0.05..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 });
    let r: Array1<f64> = rand_array(&mut rng, 40, -1.0, 1.0);
    let g = relu_backward(r.view(), relu(x.view()).view());
    suite.record("relu", check_gradients(|v| dot(&relu(Array1::from_vec(v.to_vec()).view()), &r), &flat(&x), &flat(&g), opts));

    let (_, mask) = dropout(x.view(), 0.25, Mode::Train, &mut ChaCha8Rng::seed_from_u64(7));
    let g = dropout_backward(r.view(), mask.view(), 0.25);
    let fd = |v: &[f64]| dot(&dropout(Array1::from_vec(v.to_vec()).view(), 0.25, Mode::Train, &mut ChaCha8Rng::seed_from_u64(7)).0, &r);
    suite.record("dropout", check_gradients(fd, &flat(&x), &flat(&g), opts));

    let xd = (5, 3, 2, 4);
    let x = rand_array(&mut rng, xd, -2.0, 3.0);
    let gamma: Array1<f64> = rand_array(&mut rng, 3, 0.5, 1.5);
    let beta: Array1<f64> = rand_array(&mut rng, 3, -0.5, 0.5);
    let r = rand_array(&mut rng, xd, -1.0, 1.0);
    let (_, cache) = batchnorm_train(x.view(), gamma.view(), beta.view(), 1e-5).unwrap();
    let g = batchnorm_backward(r.view(), &cache, gamma.view()).unwrap();
    let bn = |x: &Array4<f64>, ga: &Array1<f64>, be: &Array1<f64>| dot(&batchnorm_train(x.view(), ga.view(), be.view(), 1e-5).unwrap().0, &r);
    suite.record("batchnorm input", check_gradients(|v| bn(&as4(v, xd), &gamma, &beta), &flat(&x), &flat(&g.input), opts));
    suite.record("batchnorm gamma", check_gradients(|v| bn(&x, &Array1::from_vec(v.to_vec()), &beta), &flat(&gamma), &flat(&g.gamma), opts));
    suite.record("batchnorm beta", check_gradients(|v| bn(&x, &gamma, &Array1::from_vec(v.to_vec())), &flat(&beta), &flat(&g.beta), opts));

    let logits = rand_array(&mut rng, (5, 7), -3.0, 3.0);
    let t = one_hot::<f64>(&[0, 6, 3, 3, 1], 7);
    let g = softmax_xent_backward(logits.view(), t.view()).unwrap();
    suite.record("softmax cross-entropy", check_gradients(|v| softmax_xent(as2(v, (5, 7)).view(), t.view()).unwrap(), &flat(&logits), &flat(&g), opts));

    let mu = rand_array(&mut rng, (3, 4), -1.0, 1.0);
    let lv = rand_array(&mut rng, (3, 4), -2.0, 2.0);
    let kl = |mu: &Array2<f64>, lv: &Array2<f64>| kl_standard_normal(mu.view(), sigma_from_logvar(lv.view(), 10.0).view()).unwrap().mean().unwrap();
    let sigma = sigma_from_logvar(lv.view(), 10.0);
    let (dmu, dsigma) = kl_standard_normal_backward(mu.view(), sigma.view(), 1.0 / 3.0);
    let dlv = sigma_from_logvar_backward(lv.view(), sigma.view(), dsigma.view(), 10.0);
    suite.record("kl mean", check_gradients(|v| kl(&as2(v, (3, 4)), &lv), &flat(&mu), &flat(&dmu), opts));
    suite.record("kl log-variance", check_gradients(|v| kl(&mu, &as2(v, (3, 4))), &flat(&lv), &flat(&dlv), opts));

    let sigma = rand_array(&mut rng, (3, 4), 0.2, 2.0);
    let eps = rand_array(&mut rng, (3, 4), -2.0, 2.0);
    let r = rand_array(&mut rng, (3, 4), -1.0, 1.0);
    let fm = |v: &[f64]| dot(&reparameterize(as2(v, (3, 4)).view(), sigma.view(), eps.view()).unwrap(), &r);
    suite.record("reparameterize mean", check_gradients(fm, &flat(&mu), &flat(&r), opts));
    let fs = |v: &[f64]| dot(&reparameterize(mu.view(), as2(v, (3, 4)).view(), eps.view()).unwrap(), &r);
    suite.record("reparameterize sigma", check_gradients(fs, &flat(&sigma), &flat(&(&r * &eps)), opts));
}

const B: usize = 4;

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: 4,
        samples: 12,
        kernel_width: 5,
        latent_dim: 3,
        subjects: 3,
        classes: 2,
        filters: 2,
        hidden: 4,
        dropout: 0.0,
        variant,
        init_seed: 7,
        ..ModelConfig::default()
    }
}

fn network_checks(suite: &mut GradSuite, opts: GradCheckOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for mode in [SpatialConvMode::Full, SpatialConvMode::Depthwise] {
        let cfg = ModelConfig { spatial_conv_mode: mode, ..tiny(Variant::Acvae) };
        let enc = Encoder::<f64>::new(&cfg, &mut rng);
        let x = rand_array(&mut rng, (B, cfg.channels, cfg.samples), -3.0, 3.0);
        let (w1, w2) = (rand_array(&mut rng, (B, 3), -1.0, 1.0), rand_array(&mut rng, (B, 3), -1.0, 1.0));
        let (_, cache) = enc.forward(x.view(), Mode::Train, &mut rng).unwrap();
        let grads = enc.backward(&cache.unwrap(), w1.view(), Some(w2.view())).unwrap();
        let f = |v: &[f64]| {
            let mut e = enc.clone();
            e.params.assign_flat(v);
            let (p, _) = e.forward(x.view(), Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            dot(&p.mu, &w1) + dot(&p.sigma, &w2)
        };
        suite.record(&format!("encoder {mode:?}"), check_gradients(f, &enc.params.to_flat(), &grads.to_flat(), opts));
    }

    for (variant, faithful) in [(Variant::Acvae, false), (Variant::Avae, false), (Variant::Acvae, true)] {
        let cfg = ModelConfig { faithful_final_layer: faithful, ..tiny(variant) };
        let dec = Decoder::<f64>::new(&cfg, &mut rng);
        let z = rand_array(&mut rng, (B, 3), -1.0, 1.0);
        let s = variant.conditioned().then(|| one_hot::<f64>(&[0, 2, 1, 2], 3));
        let r = rand_array(&mut rng, (B, cfg.channels, cfg.samples), -1.0, 1.0);
        let (_, cache) = dec.forward(z.view(), s.as_ref().map(|s| s.view()), Mode::Train, &mut rng).unwrap();
        let (grads, d_z) = dec.backward(&cache.unwrap(), r.view()).unwrap();
        let eval = |d: &Decoder<f64>, z: &Array2<f64>| {
            dot(&d.forward(z.view(), s.as_ref().map(|s| s.view()), Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0, &r)
        };
        let fp = |v: &[f64]| {
            let mut d = dec.clone();
            d.params.assign_flat(v);
            eval(&d, &z)
        };
        let name = format!("decoder {variant} faithful={faithful}");
        suite.record(&name, check_gradients(fp, &dec.params.to_flat(), &grads.to_flat(), opts));
        suite.record(&format!("{name} latent"), check_gradients(|v| eval(&dec, &as2(v, (B, 3))), &flat(&z), &flat(&d_z), opts));
    }

    // Adversary (S outputs) and classifier (2 outputs) share the MLP graph.
    for (name, out) in [("adversary", 3usize), ("classifier", 2)] {
        let mlp = Mlp::<f64>::new(3, 4, out, &mut rng);
        let z = rand_array(&mut rng, (B, 3), -1.0, 1.0);
        let r = rand_array(&mut rng, (B, out), -1.0, 1.0);
        let (_, cache) = mlp.forward(z.view()).unwrap();
        let (grads, d_z) = mlp.backward(&cache, r.view()).unwrap();
        let fp = |v: &[f64]| {
            let mut m = mlp.clone();
            m.params.assign_flat(v);
            dot(&m.logits(z.view()).unwrap(), &r)
        };
        suite.record(name, check_gradients(fp, &mlp.params.to_flat(), &grads.to_flat(), opts));
        let fz = |v: &[f64]| dot(&mlp.logits(as2(v, (B, 3)).view()).unwrap(), &r);
        suite.record(&format!("{name} input"), check_gradients(fz, &flat(&z), &flat(&d_z), opts));
    }

    let cfg = tiny(Variant::Acvae);
    let store = ParameterStore::<f64>::new(&cfg).unwrap();
    let set = TrialSet {
        x: rand_array(&mut rng, (B, cfg.channels, cfg.samples), -3.0, 3.0).mapv(|v| v as f32),
        labels: vec![Label::Left, Label::Right, Label::Right, Label::Left],
        subject_index: vec![Some(0), Some(2), Some(1), Some(2)],
        subject_ids: vec!["A".into(), "C".into(), "B".into(), "C".into()],
    };
    let batch = Batch::gather(&set, &[0, 1, 2, 3], Some(cfg.subjects)).unwrap();
    let eps: Array2<f64> = standard_normal(&mut ChaCha8Rng::seed_from_u64(5), (B, cfg.latent_dim));
    let pass = generator_gradients(&store, &batch, Some(eps.view()), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let n_enc = store.encoder.params.parameter_count();
    let point: Vec<f64> = store.encoder.params.to_flat().into_iter().chain(store.decoder.as_ref().unwrap().params.to_flat()).collect();
    let analytic: Vec<f64> = pass.encoder.to_flat().into_iter().chain(pass.decoder.to_flat()).collect();
    let f = |v: &[f64]| {
        let mut s = store.clone();
        s.encoder.params.assign_flat(&v[..n_enc]);
        s.decoder.as_mut().unwrap().params.assign_flat(&v[n_enc..]);
        generator_gradients(&s, &batch, Some(eps.view()), &mut ChaCha8Rng::seed_from_u64(0)).unwrap().loss.total
    };
    // The summed reconstruction is large; a wider step keeps roundoff below truncation error.
    suite.record("generator objective", check_gradients(f, &point, &analytic, GradCheckOptions { step: 1e-5, ..opts }));
}

#[test]
fn gradient_verification() {
    let opts = GradCheckOptions { step: 1e-6, tolerance: GRAD_TOL, max_coords: 300, seed: 3 };
    let mut suite = GradSuite::default();
    primitive_checks(&mut suite, opts);
    network_checks(&mut suite, opts);
    let pass = suite.failures.is_empty();
    let detail = if pass {
        format!("{} checks, worst relative error {:.2e} (tolerance {GRAD_TOL:.0e})", suite.checks, suite.worst)
    } else {
        format!("{} of {} checks failed: {}", suite.failures.len(), suite.checks, suite.failures.join("; "))
    };
    assert!(verdict("gradient verification", pass, &detail), "{detail}");
}

#[test]
fn conv_deconv_adjointness() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < ADJOINT_SHAPES {
        let groups = if rng.random::<bool>() { 1 } else { rng.random_range(2..4) };
        let (b, cin, cout) = (rng.random_range(1..3), groups * rng.random_range(1..3), groups * rng.random_range(1..3));
        let (h, w, kh, kw) = (rng.random_range(1..7), rng.random_range(1..9), rng.random_range(1..4), rng.random_range(1..5));
        let pad = Padding::new(rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0..3), rng.random_range(0..3));
        if kh > h + pad.top + pad.bottom || kw > w + pad.left + pad.right {
            continue;
        }
        let a = rand_array(&mut rng, (b, cin, h, w), -1.0, 1.0);
        let k = rand_array(&mut rng, (cout, cin / groups, kh, kw), -1.0, 1.0);
        let ca = conv2d_grouped(a.view(), k.view(), pad, groups).unwrap();
        let bb = rand_array(&mut rng, ca.raw_dim(), -1.0, 1.0);
        let tb = conv2d_transpose_grouped(bb.view(), k.view(), pad, groups).unwrap();
        let (lhs, rhs) = (dot(&ca, &bb), dot(&a, &tb));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
        tested += 1;
    }
    let pass = worst <= ADJOINT_TOL;
    let detail = format!("{tested} random shapes, worst relative gap {worst:.2e} (tolerance {ADJOINT_TOL:.0e})");
    assert!(verdict("conv/deconv adjointness", pass, &detail), "{detail}");
}

#[test]
fn loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut gaps = [0.0f64; 4];
    for _ in 0..200 {
        let (b, k, d) = (rng.random_range(1..6), rng.random_range(2..12), rng.random_range(1..6));
        let x = rand_array(&mut rng, (b, 3, 5), -2.0, 2.0);
        let xhat = rand_array(&mut rng, (b, 3, 5), -2.0, 2.0);
        let mu = rand_array(&mut rng, (b, d), -1.0, 1.0);
        let sigma = rand_array(&mut rng, (b, d), 0.2, 2.0);
        let logits = rand_array(&mut rng, (b, k), -3.0, 3.0);
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let s = one_hot::<f64>(&idx, k);
        let lambda = rng.random_range(0.1..4.0);
        let cvae = loss_cvae(x.view(), xhat.view(), mu.view(), sigma.view(), ReconMode::Sum).unwrap();
        let zero = loss_acvae(x.view(), xhat.view(), mu.view(), sigma.view(), logits.view(), s.view(), 0.0, ReconMode::Sum).unwrap();
        gaps[0] = gaps[0].max((zero.total - cvae.total).abs());
        let full = loss_acvae(x.view(), xhat.view(), mu.view(), sigma.view(), logits.view(), s.view(), lambda, ReconMode::Sum).unwrap();
        gaps[1] = gaps[1].max((loss_adversary(logits.view(), s.view()).unwrap() + full.adversarial_term).abs());
        let prior = kl_standard_normal(Array2::<f64>::zeros((b, d)).view(), Array2::<f64>::ones((b, d)).view()).unwrap();
        gaps[2] = gaps[2].max(prior.iter().fold(0.0, |m, v| m.max(v.abs())));
        let uniform = softmax_xent(Array2::<f64>::zeros((b, k)).view(), s.view()).unwrap();
        gaps[3] = gaps[3].max((uniform - (k as f64).ln()).abs());
    }
    let pass = gaps.iter().all(|&g| g <= LOSS_TOL);
    let detail = format!(
        "200 draws; |acvae(λ=0) − cvae| {:.1e}, |L_A + adversarial term| {:.1e}, |KL(0,1)| {:.1e}, |CE(uniform) − log K| {:.1e} (tolerance {LOSS_TOL:.0e})",
        gaps[0], gaps[1], gaps[2], gaps[3]
    );
    assert!(verdict("loss identities", pass, &detail), "{detail}");
}

#[test]
fn architecture_shapes() {
    let cfg = ModelConfig::default();
    let (c, t, w, dz, s) = (64, 320, 100, 100, 90);
    let mut rows: Vec<(&str, Vec<usize>, Vec<usize>)> = Vec::new();
    let fixed = cfg.channels == c && cfg.samples == t && cfg.kernel_width == w && cfg.latent_dim == dz && cfg.subjects == s;
    let store = ParameterStore::<f32>::new(&cfg).unwrap();
    let enc = &store.encoder.params;
    let dec = &store.decoder().unwrap().params;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x = Array4::from_shape_simple_fn((2, 1, c, t), || rng.random_range(-1.0f32..1.0));
    rows.push(("encoder input 1×C×T", x.shape()[1..].to_vec(), vec![1, c, t]));
    rows.push(("encoder temporal kernels 40×(1×W)", enc.temporal.shape().to_vec(), vec![40, 1, 1, w]));
    let h1 = conv2d(x.view(), enc.temporal.view(), Padding::same_width(w)).unwrap();
    rows.push(("encoder temporal output 40×C×T", h1.shape()[1..].to_vec(), vec![40, c, t]));
    rows.push(("encoder spatial kernels 40×(C×1)", enc.spatial.shape().to_vec(), vec![40, 40, c, 1]));
    let h2 = conv2d(h1.view(), enc.spatial.view(), Padding::NONE).unwrap();
    rows.push(("encoder spatial output 40×1×T", h2.shape()[1..].to_vec(), vec![40, 1, t]));
    rows.push(("encoder batch norms", vec![enc.bn1_gamma.len(), enc.bn2_gamma.len()], vec![40, 40]));
    rows.push(("encoder flatten 40T", vec![h2.len() / 2], vec![40 * t]));
    rows.push(("encoder μ head 40T→d_z", enc.mu_weight.shape().to_vec(), vec![dz, 40 * t]));
    rows.push(("encoder σ head 40T→d_z", enc.logvar_weight.shape().to_vec(), vec![dz, 40 * t]));
    let x3 = x.index_axis(Axis(1), 0).to_owned();
    let (post, _) = store.encoder.forward(x3.view(), Mode::Eval, &mut rng).unwrap();
    rows.push(("sampled z d_z", vec![post.mu.ncols(), post.sigma.ncols()], vec![dz, dz]));
    rows.push(("decoder input (d_z+S)→40T", dec.fc_weight.shape().to_vec(), vec![40 * t, dz + s]));
    let a0 = Array4::from_shape_simple_fn((2, 40, 1, t), || rng.random_range(-1.0f32..1.0));
    rows.push(("decoder spatial kernels 40×(C×1)", dec.spatial.shape().to_vec(), vec![40, 40, c, 1]));
    let d1 = conv2d_transpose(a0.view(), dec.spatial.view(), Padding::NONE).unwrap();
    rows.push(("decoder spatial output 40×C×T", d1.shape()[1..].to_vec(), vec![40, c, t]));
    rows.push(("decoder batch norm", vec![dec.bn_gamma.len()], vec![40]));
    rows.push(("decoder temporal kernels 40×(1×W)", dec.temporal.shape().to_vec(), vec![40, 1, 1, w]));
    let d2 = conv2d_transpose(d1.view(), dec.temporal.view(), Padding::same_width(w)).unwrap();
    rows.push(("decoder temporal output 1×C×T", d2.shape()[1..].to_vec(), vec![1, c, t]));
    let sh = one_hot::<f32>(&[0, 89], s);
    let (xhat, _) = store.decoder().unwrap().forward(post.mu.view(), Some(sh.view()), Mode::Eval, &mut rng).unwrap();
    rows.push(("reconstruction C×T", xhat.shape()[1..].to_vec(), vec![c, t]));
    rows.push(("adversary d_z→S", store.adversary().unwrap().logits(post.mu.view()).unwrap().shape().to_vec(), vec![2, s]));
    rows.push(("classifier d_z→2", store.classifier.logits(post.mu.view()).unwrap().shape().to_vec(), vec![2, 2]));

    let bad: Vec<String> = rows.iter().filter(|(_, got, want)| got != want).map(|(n, got, want)| format!("{n}: {got:?} ≠ {want:?}")).collect();
    let pass = fixed && bad.is_empty();
    let detail = if pass {
        format!("{} rows match for C={c}, T={t}, W={w}, d_z={dz}, S={s}", rows.len())
    } else if !fixed {
        "default configuration is not C=64, T=320, W=100, d_z=100, S=90".to_string()
    } else {
        bad.join("; ")
    };
    assert!(verdict("architecture shapes", pass, &detail), "{detail}");
}

/// Dataset invariants of a prepared cache: 103 subjects of 45 trials, the
/// 3240/810/585 split and zero training channel means.
fn dataset_invariants(contents: &CacheContents) -> (bool, String) {
    let mut per_subject: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &contents.trials {
        *per_subject.entry(t.subject_id.as_str()).or_default() += 1;
    }
    let sp = &contents.splits;
    let subjects = sp.pool_subjects.len() + sp.heldout_subjects.len();
    let odd: Vec<_> = per_subject.iter().filter(|(_, &n)| n != 45).collect();
    let data = match assemble_datasets(contents) {
        Ok(d) => d,
        Err(e) => return (false, format!("cannot assemble datasets: {e}")),
    };
    let heldout: usize = data.heldout.iter().map(|h| h.len()).sum();
    let residual = (0..CHANNELS)
        .map(|ch| data.train.x.index_axis(Axis(1), ch).iter().map(|&v| v as f64).sum::<f64>() / (data.train.len() * TRIAL_SAMPLES) as f64)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let pass = subjects == 103
        && per_subject.len() == 103
        && odd.is_empty()
        && (data.train.len(), data.validation.len(), heldout) == (3240, 810, 585)
        && residual <= RESIDUAL_TOL;
    let detail = format!(
        "{subjects} subjects, {} with a trial count other than 45, splits {}/{}/{}, training residual {residual:.1e} (tolerance {RESIDUAL_TOL:.0e})",
        odd.len(),
        data.train.len(),
        data.validation.len(),
        heldout
    );
    (pass, detail)
}

fn acvae(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_acvae")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().expect("spawn acvae")
}

/// The 109-subject synthetic corpus (six irregular subjects) prepared with
/// the default configuration; shared by the tests below.
fn synthetic_workspace() -> &'static (TempDir, PathBuf) {
    static WS: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let o = acvae(&["synth-corpus", "--out", "corpus"], &root);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let o = acvae(&["prepare", "--set", "corpus_dir=\"corpus\""], &root);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (dir, root)
    })
}

#[test]
fn dataset_invariants_synthetic_corpus() {
    let (_, root) = synthetic_workspace();
    let (pass, detail) = dataset_invariants(&read_cache(&root.join("cache")).unwrap());
    assert!(verdict("dataset invariants (synthetic stand-in corpus)", pass, &detail), "{detail}");
}

#[test]
#[ignore = "needs the PhysioNet EEG motor movement/imagery corpus; set EEGMMIDB_DIR"]
fn dataset_invariants_real_corpus() {
    let corpus = std::env::var("EEGMMIDB_DIR").expect("EEGMMIDB_DIR must point at the corpus");
    let dir = TempDir::new().unwrap();
    let o = acvae(&["prepare", "--set", &format!("corpus_dir={}", serde_json::to_string(&corpus).unwrap())], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (pass, detail) = dataset_invariants(&read_cache(&dir.path().join("cache")).unwrap());
    assert!(verdict("dataset invariants (real corpus)", pass, &detail), "{detail}");
}

#[test]
fn smoke_reproduction() {
    let (_, root) = synthetic_workspace();
    let o = acvae(&["train", "--smoke", "--variant", "ACVAE", "--run-dir", "smoke", "--no-eval", "--set", "corpus_dir=\"corpus\""], root);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = root.join("smoke");
    let stage1 = TrainHistory::read(&run.join("stage1")).unwrap();
    let stage2 = TrainHistory::read(&run.join("stage2")).unwrap();
    let subjects = 10.0;

    let totals: Vec<f64> = stage1.epochs.iter().filter_map(|e| e.mean_total).collect();
    let diffs: Vec<f64> = totals.windows(2).map(|p| p[1] - p[0]).collect();
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
    let adversary = stage1.last_epoch().and_then(|e| e.adversary_train_accuracy).unwrap_or(0.0);
    let classifier = stage2.last_epoch().and_then(|e| e.classifier_train_accuracy).unwrap_or(0.0);

    let loss_ok = !diffs.is_empty() && mean_diff < 0.0;
    let adversary_ok = adversary > 3.0 / subjects;
    let classifier_ok = classifier > 0.55;
    let detail = format!(
        "stage-1 loss {:.1} → {:.1} (mean epoch change {mean_diff:.2}), adversary train accuracy {:.3} (3× chance {:.3}), stage-2 train accuracy {classifier:.3} (> 0.55)",
        totals.first().copied().unwrap_or(f64::NAN),
        totals.last().copied().unwrap_or(f64::NAN),
        adversary,
        3.0 / subjects
    );
    let pass = loss_ok && adversary_ok && classifier_ok;
    assert!(verdict("smoke reproduction", pass, &detail), "{detail}");
}

/// Evaluated runs under `ACVAE_FULL_RUNS`, grouped by variant.
fn full_runs() -> Vec<ExperimentReport> {
    let root = std::env::var("ACVAE_FULL_RUNS").expect("ACVAE_FULL_RUNS must point at evaluated run directories");
    let mut reports = Vec::new();
    for entry in std::fs::read_dir(&root).unwrap() {
        let dir = entry.unwrap().path();
        if dir.join("report.json").is_file() {
            reports.push(ExperimentReport::read(&dir).unwrap());
        }
    }
    reports.sort_by_key(|r| (r.variant.as_str(), r.train_seed, r.init_seed));
    reports
}

fn seed_mean(reports: &[ExperimentReport], variant: Variant, f: impl Fn(&ExperimentReport) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = reports.iter().filter(|r| r.variant == variant).filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn seeds_per_variant(reports: &[ExperimentReport]) -> bool {
    [Variant::Acvae, Variant::Cvae, Variant::Avae, Variant::Cnn].iter().all(|v| reports.iter().filter(|r| r.variant == *v).count() >= 3)
}

#[test]
#[ignore = "needs full-scale runs of every variant with three seeds (tens of CPU hours each); set ACVAE_FULL_RUNS"]
fn full_adversary_ordering() {
    let reports = full_runs();
    let order = [Variant::Acvae, Variant::Cvae, Variant::Avae];
    let train: Vec<f64> = order.iter().map(|&v| seed_mean(&reports, v, |r| r.adversary_train).unwrap_or(f64::NAN)).collect();
    let val: Vec<f64> = order.iter().map(|&v| seed_mean(&reports, v, |r| r.adversary_validation).unwrap_or(f64::NAN)).collect();
    let chance5 = 5.0 / 90.0;
    let ordered = train[0] < train[1] && train[1] < train[2] && val[0] < val[1] && val[1] < val[2];
    let in_range = train.iter().zip([0.48, 0.56, 0.68]).all(|(a, p)| (a - p).abs() <= 0.15)
        && val.iter().zip([0.13, 0.15, 0.21]).all(|(a, p)| (a - p).abs() <= 0.10);
    let above = train.iter().chain(&val).all(|&a| a >= chance5);
    let pass = seeds_per_variant(&reports) && ordered && in_range && above;
    let detail = format!("train {train:.3?}, validation {val:.3?} for A-cVAE/cVAE/A-VAE; ordered {ordered}, in range {in_range}, ≥ 5× chance {above}");
    assert!(verdict("adversary ordering", pass, &detail), "{detail}");
}

#[test]
#[ignore = "needs full-scale runs of every variant with three seeds (tens of CPU hours each); set ACVAE_FULL_RUNS"]
fn full_transfer_means() {
    let reports = full_runs();
    let comparison = summarize(&reports).unwrap();
    let mean = |v: Variant| comparison.boxes.iter().find(|b| b.variant == v).map_or(f64::NAN, |b| b.summary.mean);
    let acvae = mean(Variant::Acvae);
    let others = [Variant::Cvae, Variant::Avae, Variant::Cnn].map(mean);
    let in_band = (0.58..=0.70).contains(&acvae);
    let not_worse = others.iter().all(|&o| acvae >= o - 0.01);
    let beats_avae = acvae >= others[1] + 0.03;
    let pass = seeds_per_variant(&reports) && in_band && not_worse && beats_avae;
    let detail = format!(
        "A-cVAE {:.1}% vs cVAE {:.1}%, A-VAE {:.1}%, CNN {:.1}%; band [58%, 70%] {in_band}, ≥ others − 1 pp {not_worse}, ≥ A-VAE + 3 pp {beats_avae}",
        100.0 * acvae,
        100.0 * others[0],
        100.0 * others[1],
        100.0 * others[2]
    );
    assert!(verdict("transfer means", pass, &detail), "{detail}");
}

#[test]
#[ignore = "needs full-scale runs of every variant with three seeds (tens of CPU hours each); set ACVAE_FULL_RUNS"]
fn full_means_above_chance() {
    let reports = full_runs();
    let comparison = summarize(&reports).unwrap();
    let means: Vec<(String, f64)> = comparison.boxes.iter().map(|b| (b.variant.as_str().to_string(), b.summary.mean)).collect();
    let pass = seeds_per_variant(&reports) && means.len() == 4 && means.iter().all(|(_, m)| *m > 0.5);
    let detail = means.iter().map(|(v, m)| format!("{v} {:.1}%", 100.0 * m)).collect::<Vec<_>>().join(", ");
    assert!(verdict("all variants above chance", pass, &detail), "{detail}");
}
