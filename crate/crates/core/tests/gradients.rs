//! Analytic gradients against central finite differences (64-bit).

use pstn_core::cpab::{build_basis, Boundary, Tessellation};
use pstn_core::model::{kl_to_prior, sample_theta, Localizer, LossOptions, Model, ModelSpec, Prior, Variant};
use pstn_core::nn::{Dense, Layer, Sequential};
use pstn_core::testing::{central_diff, central_jacobian, max_rel_err};
use pstn_core::transform::{Family, Warper};
use pstn_core::warp::{make_grid_2d, sample, sample_backward};
use pstn_core::{rng_from_seed, Rng, Tensor};
use rand::Rng as _;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn bilinear_sample_wrt_image_and_coordinates() {
    let mut rng = rng_from_seed(1);
    for _ in 0..10 {
        let src = Tensor::from_vec(&[2, 5, 6], uniform(60, -1.0, 1.0, &mut rng)).unwrap();
        let base = make_grid_2d::<f64>(4, 3).unwrap();
        let coords = base.coords().iter().map(|&c| c * 1.1 + rng.random_range(-0.2..0.2)).collect();
        let grid = pstn_core::warp::SampleGrid::from_coords(&[4, 3], coords).unwrap();
        let dir = uniform(24, -1.0, 1.0, &mut rng);
        let g = Tensor::from_vec(&[2, 4, 3], dir.clone()).unwrap();
        let (gsrc, gcoord) = sample_backward(&src, &grid, &g).unwrap();

        let num_src = central_diff(src.data(), H, |v| {
            dot(sample(&Tensor::from_vec(&[2, 5, 6], v.to_vec()).unwrap(), &grid).unwrap().data(), &dir)
        });
        assert!(max_rel_err(gsrc.data(), &num_src) < TOL);

        let num_coord = central_diff(grid.coords(), H, |v| {
            let gr = pstn_core::warp::SampleGrid::from_coords(&[4, 3], v.to_vec()).unwrap();
            dot(sample(&src, &gr).unwrap().data(), &dir)
        });
        let err = max_rel_err(&gcoord, &num_coord);
        assert!(err < TOL, "{err}");
    }
}

fn check_warper_theta(warper: &Warper<f64>, src_shape: &[usize], scale: f64, seeds: u64) {
    let n: usize = src_shape.iter().product();
    let d = warper.num_params();
    for seed in 0..seeds {
        let mut rng = rng_from_seed(seed);
        let src = Tensor::from_vec(src_shape, uniform(n, 0.0, 1.0, &mut rng)).unwrap();
        let theta = uniform(d, -scale, scale, &mut rng);
        let dir = uniform(n, -1.0, 1.0, &mut rng);
        let g = Tensor::from_vec(src_shape, dir.clone()).unwrap();
        let (gsrc, gtheta) = warper.warp_backward(&src, &theta, &g).unwrap();
        let num_theta = central_diff(&theta, H, |t| dot(warper.warp(&src, t).unwrap().data(), &dir));
        let err = max_rel_err(&gtheta, &num_theta);
        assert!(err < TOL, "{:?} seed {seed}: θ error {err}", warper.family());
        let num_src = central_diff(src.data(), H, |v| {
            dot(warper.warp(&Tensor::from_vec(src_shape, v.to_vec()).unwrap(), &theta).unwrap().data(), &dir)
        });
        assert!(max_rel_err(gsrc.data(), &num_src) < TOL);
    }
}

#[test]
fn affine_warp_wrt_theta_and_image() {
    check_warper_theta(&Warper::affine(&[7, 6]).unwrap(), &[2, 7, 6], 0.4, 10);
}

#[test]
fn cpab_warp_wrt_theta_and_image() {
    let w1 = Warper::cpab(&[20], Tessellation::Intervals { cells: 6 }, Boundary::ZeroVelocity, 50).unwrap();
    check_warper_theta(&w1, &[1, 20], 1.0, 5);
    let w2 = Warper::cpab(&[6, 6], Tessellation::Triangles { nx: 2, ny: 2 }, Boundary::ZeroVelocity, 30).unwrap();
    check_warper_theta(&w2, &[1, 6, 6], 0.8, 3);
}

#[test]
fn cpab_flow_sensitivity() {
    let cases = [
        (Tessellation::Intervals { cells: 5 }, Boundary::ZeroVelocity, 1),
        (Tessellation::Intervals { cells: 3 }, Boundary::Free, 1),
        (Tessellation::Triangles { nx: 2, ny: 2 }, Boundary::ZeroVelocity, 2),
        (Tessellation::Triangles { nx: 2, ny: 3 }, Boundary::Free, 2),
    ];
    for (tess, boundary, dim) in cases {
        let basis = build_basis(tess, boundary).unwrap();
        for seed in 0..5 {
            let mut rng = rng_from_seed(seed);
            let theta = uniform(basis.dim(), -0.7, 0.7, &mut rng);
            let points = uniform(8 * dim, 0.05, 0.95, &mut rng);
            let (_, jac) = basis.integrate_with_grad(&theta, &points, 100).unwrap();
            let numeric = central_jacobian(&theta, H, |t| basis.integrate(t, &points, 100).unwrap());
            let flat: Vec<f64> = numeric.into_iter().flatten().collect();
            let err = max_rel_err(&jac, &flat);
            assert!(err < TOL, "{tess:?} {boundary:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn kl_gradient() {
    let mut rng = rng_from_seed(4);
    for _ in 0..20 {
        let d = 4;
        let mu = uniform(d, -0.5, 0.5, &mut rng);
        let sigma = uniform(d, 0.01, 0.3, &mut rng);
        let prior = Prior { sigma_p: rng.random_range(0.02..0.2) };
        let (_, dmu, dsigma) = kl_to_prior(&mu, &sigma, prior).unwrap();
        let num_mu = central_diff(&mu, H, |m| kl_to_prior(m, &sigma, prior).unwrap().0);
        let num_sigma = central_diff(&sigma, 1e-8, |s| kl_to_prior(&mu, s, prior).unwrap().0);
        assert!(max_rel_err(&dmu, &num_mu) < TOL);
        assert!(max_rel_err(&dsigma, &num_sigma) < TOL);
    }
}

#[test]
fn reparametrized_sample_path() {
    let mut rng = rng_from_seed(5);
    let mu = uniform(3, -1.0, 1.0, &mut rng);
    let sigma = uniform(3, 0.1, 1.0, &mut rng);
    let seed = 99;
    let draw = |m: &[f64], s: &[f64]| sample_theta(m, s, &mut rng_from_seed(seed)).0;
    let (_, eps) = sample_theta(&mu, &sigma, &mut rng_from_seed(seed));
    let jmu = central_jacobian(&mu, H, |m| draw(m, &sigma));
    let jsigma = central_jacobian(&sigma, H, |s| draw(&mu, s));
    for i in 0..3 {
        for j in 0..3 {
            let (want_mu, want_sigma) = if i == j { (1.0, eps[i]) } else { (0.0, 0.0) };
            assert!((jmu[i][j] - want_mu).abs() < 1e-8);
            assert!((jsigma[i][j] - want_sigma).abs() < 1e-8);
        }
    }
}

/// 4×4 single-channel toy problem with a 2-class linear classifier.
fn toy_model(variant: Variant, family: Family, seed: u64) -> Model<f64> {
    let mut rng = rng_from_seed(seed);
    let mut spec = ModelSpec::new(variant, family, &[1, 4, 4], 2);
    spec.sigma_p = 0.1;
    spec.s_train = 2;
    spec.n_steps = 20;
    let classifier = Sequential::new(&[1, 4, 4], vec![Layer::Flatten, Layer::Dense(Dense::new(16, 2, &mut rng))]).unwrap();
    let localizer = (variant != Variant::Cnn).then(|| {
        let d = Warper::<f64>::build(family, &[4, 4], spec.tessellation, spec.n_steps).unwrap().num_params();
        let trunk = Sequential::new(&[1, 4, 4], vec![Layer::Flatten, Layer::Dense(Dense::new(16, 5, &mut rng)), Layer::Relu]).unwrap();
        Localizer::new(trunk, d, spec.sigma_p).unwrap()
    });
    let mut model = Model::from_parts(spec, localizer, classifier).unwrap();
    // move the heads off their identity initialization
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    model
}

fn set_flat(model: &mut Model<f64>, flat: &[f64]) {
    let mut off = 0;
    for p in model.params_mut() {
        let n = p.len();
        p.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

fn check_model_loss(variant: Variant, family: Family) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut model = toy_model(variant, family, seed);
        let mut rng = rng_from_seed(100 + seed);
        let x = Tensor::from_vec(&[3, 1, 4, 4], uniform(48, 0.0, 1.0, &mut rng)).unwrap();
        let y = [0, 1, 1];
        let opts = LossOptions { samples: 2, sigma_scale: 1.0 };
        model.zero_grad();
        model.elbo_loss_with(&x, &y, opts, &mut rng_from_seed(7)).unwrap();
        let analytic: Vec<f64> = model.params().iter().flat_map(|p| p.grad().unwrap().to_vec()).collect();
        let flat: Vec<f64> = model.params().iter().flat_map(|p| p.data().to_vec()).collect();
        let mut probe = model.clone();
        let numeric = central_diff(&flat, H, |v| {
            set_flat(&mut probe, v);
            probe.elbo_loss_with(&x, &y, opts, &mut rng_from_seed(7)).unwrap().total
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    worst
}

#[test]
fn pstn_affine_loss_end_to_end() {
    let err = check_model_loss(Variant::Pstn, Family::Affine);
    assert!(err < TOL, "{err}");
}

#[test]
fn pstn_diffeo_loss_end_to_end() {
    let err = check_model_loss(Variant::Pstn, Family::Diffeo);
    assert!(err < TOL, "{err}");
}

#[test]
fn stn_and_cnn_loss_end_to_end() {
    assert!(check_model_loss(Variant::Stn, Family::Affine) < TOL);
    assert!(check_model_loss(Variant::Cnn, Family::None) < TOL);
}
