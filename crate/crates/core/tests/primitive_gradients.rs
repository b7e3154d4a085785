//! Finite-difference checks of every hand-derived backward pass, plus the
//! conv / transposed-conv adjoint identity.

use acvae_core::diffcore::batchnorm::{batchnorm_backward, batchnorm_train};
use acvae_core::diffcore::conv::{conv2d_grouped, conv2d_grouped_backward, conv2d_transpose_grouped, conv2d_transpose_grouped_backward};
use acvae_core::diffcore::gaussian::{kl_standard_normal_backward, sigma_from_logvar, sigma_from_logvar_backward};
use acvae_core::diffcore::gradcheck::GradCheckOptions;
use acvae_core::diffcore::softmax::one_hot;
use acvae_core::diffcore::*;
use ndarray::{Array, Array1, Array2, Array4, Dimension, IxDyn, ShapeBuilder};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array<Sh: ShapeBuilder>(rng: &mut ChaCha8Rng, dim: Sh, lo: f64, hi: f64) -> Array<f64, Sh::Dim> {
    Array::from_shape_simple_fn(dim, || rng.random_range(lo..hi))
}

fn dot<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn flat<D: Dimension>(a: &Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn reshape4(v: &[f64], dim: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_vec(dim, v.to_vec()).unwrap()
}

fn assert_pass(name: &str, r: std::result::Result<GradCheckReport, gradcheck::GradCheckError>) {
    match r {
        Ok(rep) => println!("{name}: {rep}"),
        Err(e) => panic!("{name}: {e}"),
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pad = Padding::new(1, 0, 2, 1);
    for groups in [1usize, 2] {
        let xd = (2, 4, 3, 6);
        let kd = (4, 4 / groups, 2, 3);
        let x = rand_array(&mut rng, xd, -1.0, 1.0);
        let k = rand_array(&mut rng, kd, -1.0, 1.0);
        let y = conv2d_grouped(x.view(), k.view(), pad, groups).unwrap();
        let r = rand_array(&mut rng, y.raw_dim(), -1.0, 1.0);
        let g = conv2d_grouped_backward(x.view(), k.view(), pad, r.view(), true, groups).unwrap();
        let opts = GradCheckOptions::with_tolerance(1e-6);
        assert_pass(
            "conv2d input",
            check_gradients(
                |v| dot(&conv2d_grouped(reshape4(v, xd).view(), k.view(), pad, groups).unwrap(), &r),
                &flat(&x),
                &flat(&g.input.unwrap()),
                opts,
            ),
        );
        assert_pass(
            "conv2d kernels",
            check_gradients(
                |v| dot(&conv2d_grouped(x.view(), reshape4(v, kd).view(), pad, groups).unwrap(), &r),
                &flat(&k),
                &flat(&g.kernels),
                opts,
            ),
        );
    }
}

#[test]
fn conv2d_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pad = Padding::new(0, 1, 1, 1);
    for groups in [1usize, 3] {
        let yd = (2, 3, 4, 5);
        let kd = (3, 6 / groups, 2, 3);
        let y = rand_array(&mut rng, yd, -1.0, 1.0);
        let k = rand_array(&mut rng, kd, -1.0, 1.0);
        let x = conv2d_transpose_grouped(y.view(), k.view(), pad, groups).unwrap();
        let r = rand_array(&mut rng, x.raw_dim(), -1.0, 1.0);
        let (dy, dk) = conv2d_transpose_grouped_backward(y.view(), k.view(), pad, r.view(), groups).unwrap();
        let opts = GradCheckOptions::with_tolerance(1e-6);
        assert_pass(
            "deconv input",
            check_gradients(
                |v| dot(&conv2d_transpose_grouped(reshape4(v, yd).view(), k.view(), pad, groups).unwrap(), &r),
                &flat(&y),
                &flat(&dy),
                opts,
            ),
        );
        assert_pass(
            "deconv kernels",
            check_gradients(
                |v| dot(&conv2d_transpose_grouped(y.view(), reshape4(v, kd).view(), pad, groups).unwrap(), &r),
                &flat(&k),
                &flat(&dk),
                opts,
            ),
        );
    }
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Array2<f64> = rand_array(&mut rng, (4, 6), -1.0, 1.0);
    let w: Array2<f64> = rand_array(&mut rng, (3, 6), -1.0, 1.0);
    let b: Array1<f64> = rand_array(&mut rng, 3, -1.0, 1.0);
    let r: Array2<f64> = rand_array(&mut rng, (4, 3), -1.0, 1.0);
    let g = dense_backward(x.view(), w.view(), r.view()).unwrap();
    let opts = GradCheckOptions::with_tolerance(1e-6);
    let as2 = |v: &[f64], d| Array2::from_shape_vec(d, v.to_vec()).unwrap();
    assert_pass(
        "dense x",
        check_gradients(|v| dot(&dense(as2(v, (4, 6)).view(), w.view(), b.view()).unwrap(), &r), &flat(&x), &flat(&g.input), opts),
    );
    assert_pass(
        "dense w",
        check_gradients(|v| dot(&dense(x.view(), as2(v, (3, 6)).view(), b.view()).unwrap(), &r), &flat(&w), &flat(&g.weight), opts),
    );
    assert_pass(
        "dense b",
        check_gradients(
            |v| dot(&dense(x.view(), w.view(), Array1::from_vec(v.to_vec()).view()).unwrap(), &r),
            &flat(&b),
            &flat(&g.bias),
            opts,
        ),
    );
}

#[test]
fn relu_gradient_off_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Array1<f64> = Array1::from_shape_simple_fn(50, || {
        let m = rng.random_range(1e-2..2.0);
        if rng.random::<bool>() { m } else { -m }
    });
    assert!(x.iter().all(|v| v.abs() > 1e-3));
    let r: Array1<f64> = rand_array(&mut rng, 50, -1.0, 1.0);
    let y = relu(x.view());
    let g = relu_backward(r.view(), y.view());
    assert_pass(
        "relu",
        check_gradients(|v| dot(&relu(Array1::from_vec(v.to_vec()).view()), &r), &flat(&x), &flat(&g), GradCheckOptions::with_tolerance(1e-6)),
    );
}

#[test]
fn batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xd = (5, 3, 2, 4);
    let x = rand_array(&mut rng, xd, -2.0, 3.0);
    let gamma: Array1<f64> = rand_array(&mut rng, 3, 0.5, 1.5);
    let beta: Array1<f64> = rand_array(&mut rng, 3, -0.5, 0.5);
    let r = rand_array(&mut rng, xd, -1.0, 1.0);
    let (_, cache) = batchnorm_train(x.view(), gamma.view(), beta.view(), 1e-5).unwrap();
    let g = batchnorm_backward(r.view(), &cache, gamma.view()).unwrap();
    let opts = GradCheckOptions::with_tolerance(1e-4);
    let f_x = |v: &[f64]| dot(&batchnorm_train(reshape4(v, xd).view(), gamma.view(), beta.view(), 1e-5).unwrap().0, &r);
    assert_pass("batchnorm x", check_gradients(f_x, &flat(&x), &flat(&g.input), opts));
    let f_g = |v: &[f64]| dot(&batchnorm_train(x.view(), Array1::from_vec(v.to_vec()).view(), beta.view(), 1e-5).unwrap().0, &r);
    assert_pass("batchnorm gamma", check_gradients(f_g, &flat(&gamma), &flat(&g.gamma), opts));
    let f_b = |v: &[f64]| dot(&batchnorm_train(x.view(), gamma.view(), Array1::from_vec(v.to_vec()).view(), 1e-5).unwrap().0, &r);
    assert_pass("batchnorm beta", check_gradients(f_b, &flat(&beta), &flat(&g.beta), opts));
}

#[test]
fn softmax_xent_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits: Array2<f64> = rand_array(&mut rng, (5, 7), -3.0, 3.0);
    let t = one_hot::<f64>(&[0, 6, 3, 3, 1], 7);
    let g = softmax_xent_backward(logits.view(), t.view()).unwrap();
    let f = |v: &[f64]| softmax_xent(Array2::from_shape_vec((5, 7), v.to_vec()).unwrap().view(), t.view()).unwrap();
    assert_pass("softmax_xent", check_gradients(f, &flat(&logits), &flat(&g), GradCheckOptions::with_tolerance(1e-6)));
}

#[test]
fn kl_through_logvar_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mu: Array2<f64> = rand_array(&mut rng, (3, 4), -1.0, 1.0);
    let lv: Array2<f64> = rand_array(&mut rng, (3, 4), -2.0, 2.0);
    let kl_mean = |mu: &Array2<f64>, lv: &Array2<f64>| {
        let s = sigma_from_logvar(lv.view(), 10.0);
        kl_standard_normal(mu.view(), s.view()).unwrap().mean().unwrap()
    };
    let sigma = sigma_from_logvar(lv.view(), 10.0);
    let (dmu, dsigma) = kl_standard_normal_backward(mu.view(), sigma.view(), 1.0 / 3.0);
    let dlv = sigma_from_logvar_backward(lv.view(), sigma.view(), dsigma.view(), 10.0);
    let opts = GradCheckOptions::with_tolerance(1e-6);
    let as2 = |v: &[f64]| Array2::from_shape_vec((3, 4), v.to_vec()).unwrap();
    assert_pass("kl mu", check_gradients(|v| kl_mean(&as2(v), &lv), &flat(&mu), &flat(&dmu), opts));
    assert_pass("kl logvar", check_gradients(|v| kl_mean(&mu, &as2(v)), &flat(&lv), &flat(&dlv), opts));
}

#[test]
fn reparameterize_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mu: Array2<f64> = rand_array(&mut rng, (2, 3), -1.0, 1.0);
    let sigma: Array2<f64> = rand_array(&mut rng, (2, 3), 0.2, 2.0);
    let eps: Array2<f64> = rand_array(&mut rng, (2, 3), -2.0, 2.0);
    let r: Array2<f64> = rand_array(&mut rng, (2, 3), -1.0, 1.0);
    let as2 = |v: &[f64]| Array2::from_shape_vec((2, 3), v.to_vec()).unwrap();
    let opts = GradCheckOptions::with_tolerance(1e-6);
    assert_pass(
        "reparam mu",
        check_gradients(|v| dot(&reparameterize(as2(v).view(), sigma.view(), eps.view()).unwrap(), &r), &flat(&mu), &flat(&r), opts),
    );
    assert_pass(
        "reparam sigma",
        check_gradients(
            |v| dot(&reparameterize(mu.view(), as2(v).view(), eps.view()).unwrap(), &r),
            &flat(&sigma),
            &flat(&(&r * &eps)),
            opts,
        ),
    );
}

#[test]
fn dropout_gradient_matches_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Array1<f64> = rand_array(&mut rng, 40, -1.0, 1.0);
    let r: Array1<f64> = rand_array(&mut rng, 40, -1.0, 1.0);
    let (_, mask) = dropout(x.view(), 0.25, Mode::Train, &mut ChaCha8Rng::seed_from_u64(100));
    let g = dropout_backward(r.view(), mask.view(), 0.25);
    // Same seed → same mask on every evaluation, so the map is linear in x.
    let f = |v: &[f64]| {
        let (y, _) = dropout(Array1::from_vec(v.to_vec()).view(), 0.25, Mode::Train, &mut ChaCha8Rng::seed_from_u64(100));
        dot(&y, &r)
    };
    assert_pass("dropout", check_gradients(f, &flat(&x), &flat(&g), GradCheckOptions::with_tolerance(1e-6)));
}

fn adjoint_gap(seed: u64, dims: [usize; 8], pad: Padding) -> f64 {
    let [b, cin, h, w, cout, kh, kw, _] = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_array(&mut rng, (b, cin, h, w), -1.0, 1.0);
    let k = rand_array(&mut rng, (cout, cin, kh, kw), -1.0, 1.0);
    let ca = conv2d(a.view(), k.view(), pad).unwrap();
    let bb = rand_array(&mut rng, ca.raw_dim(), -1.0, 1.0);
    let tb = conv2d_transpose(bb.view(), k.view(), pad).unwrap();
    assert_eq!(tb.dim(), a.dim());
    let lhs = dot(&ca, &bb);
    let rhs = dot(&a, &tb);
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn conv_transpose_is_adjoint(
        seed in 0u64..10_000,
        b in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 1usize..7, w in 1usize..9, kh in 1usize..4, kw in 1usize..5,
        pt in 0usize..2, pb in 0usize..2, pl in 0usize..3, pr in 0usize..3,
    ) {
        prop_assume!(kh <= h + pt + pb && kw <= w + pl + pr);
        let gap = adjoint_gap(seed, [b, cin, h, w, cout, kh, kw, 0], Padding::new(pt, pb, pl, pr));
        prop_assert!(gap <= 1e-8, "relative gap {}", gap);
    }
}

#[test]
fn adam_step_shapes_follow_params() {
    let mut adam = Adam::<f64>::new(AdamConfig::default());
    let mut p = Array::<f64, _>::zeros(IxDyn(&[2, 3]));
    let g = Array::<f64, _>::ones(IxDyn(&[2, 3]));
    adam.step(vec![p.view_mut()], vec![g.view()]).unwrap();
    assert_eq!(adam.steps_taken(), 1);
    assert!(p.iter().all(|&v| (v + 1e-3).abs() < 1e-9));
}
