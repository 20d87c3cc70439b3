use pstn_core::model::{augment, kl_to_prior, sample_theta, LossOptions, Model, ModelSpec, Prior, Variant};
use pstn_core::transform::{Family, Warper};
use pstn_core::{rng_from_seed, Error, Rng, Tensor};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn batch(n: usize, shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let len = full.iter().product();
    Tensor::from_vec(&full, uniform(len, 0.0, 1.0, rng)).unwrap()
}

#[test]
fn kl_closed_form_examples() {
    let p = Prior { sigma_p: 0.05 };
    assert_eq!(kl_to_prior(&[0.0, 0.0], &[0.05, 0.05], p).unwrap().0, 0.0);
    let (kl, _, _) = kl_to_prior(&[0.1], &[0.05], p).unwrap();
    assert!((kl - 0.1f64.powi(2) / (2.0 * 0.05f64.powi(2))).abs() < 1e-12);
    assert!((kl - 2.0).abs() < 1e-12);
    assert!(matches!(kl_to_prior(&[0.0], &[0.0], p), Err(Error::Numeric(_))));
    assert!(matches!(kl_to_prior(&[0.0], &[0.1], Prior { sigma_p: -1.0 }), Err(Error::Numeric(_))));
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = rng_from_seed(21);
    for _ in 0..10 {
        let d = 3;
        let mu = uniform(d, -0.2, 0.2, &mut rng);
        let sigma = uniform(d, 0.02, 0.2, &mut rng);
        let sp = rng.random_range(0.02..0.2);
        let (kl, _, _) = kl_to_prior(&mu, &sigma, Prior { sigma_p: sp }).unwrap();
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for j in 0..d {
                let e = normal(&mut rng);
                let t = mu[j] + sigma[j] * e;
                // ln q(t) - ln p(t)
                acc += (sp / sigma[j]).ln() - 0.5 * e * e + 0.5 * (t / sp).powi(2);
            }
        }
        let mc = acc / n as f64;
        assert!((mc - kl).abs() / kl < 0.01, "kl {kl} mc {mc}");
    }
}

#[test]
fn reparametrized_samples() {
    let mut rng = rng_from_seed(1);
    assert_eq!(sample_theta(&[0.3, -0.2], &[0.0, 0.0], &mut rng).0, vec![0.3, -0.2]);
    let (mu, sigma) = ([0.5, -1.0], [0.2, 0.05]);
    let n = 100_000;
    let mut mean = [0.0; 2];
    for _ in 0..n {
        let (t, _) = sample_theta(&mu, &sigma, &mut rng);
        mean[0] += t[0] / n as f64;
        mean[1] += t[1] / n as f64;
    }
    for j in 0..2 {
        assert!((mean[j] - mu[j]).abs() < 4.0 * sigma[j] / (n as f64).sqrt());
    }
}

#[test]
fn augment_identity_noise_and_determinism() {
    let mut rng = rng_from_seed(2);
    let w = Warper::<f64>::affine(&[6, 6]).unwrap();
    let img = batch(1, &[6, 6], &mut rng).reshape(&[1, 6, 6]).unwrap();
    assert_eq!(augment(&w, &img, &[0.0; 4], 0.0, &mut rng).unwrap(), img);

    let theta = [0.1, -0.05, 0.2, 0.0];
    let clean = w.warp(&img, &theta).unwrap();
    let draws = 10_000;
    let mut mean = vec![0.0; 36];
    for _ in 0..draws {
        let s = augment(&w, &img, &theta, 0.1, &mut rng).unwrap();
        for (m, v) in mean.iter_mut().zip(s.data()) {
            *m += v / draws as f64;
        }
    }
    let tol = 5.0 * 0.1 / (draws as f64).sqrt();
    assert!(mean.iter().zip(clean.data()).all(|(m, c)| (m - c).abs() < tol));

    let run = |seed| {
        let mut r = rng_from_seed(seed);
        let (t, _) = sample_theta(&[0.0; 4], &[0.1; 4], &mut r);
        augment(&w, &img, &t, 0.1, &mut r).unwrap()
    };
    assert_eq!(run(9), run(9));
}

fn spec(variant: Variant, family: Family) -> ModelSpec {
    let mut s = ModelSpec::new(variant, family, &[1, 16, 16], 3);
    s.sigma_p = 0.1;
    s
}

#[test]
fn pstn_with_zero_sigma_is_stn() {
    for seed in 0..3 {
        let mut pstn = Model::<f64>::new(spec(Variant::Pstn, Family::Affine), &mut rng_from_seed(seed)).unwrap();
        let mut stn = Model::<f64>::new(spec(Variant::Stn, Family::Affine), &mut rng_from_seed(seed)).unwrap();
        // move the posterior mean off the identity
        let mut rng = rng_from_seed(50 + seed);
        for (a, b) in pstn.params_mut().into_iter().zip(stn.params_mut()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data_mut()) {
                let d = rng.random_range(-0.05..0.05);
                *x += d;
                *y += d;
            }
        }
        let x = batch(5, &[1, 16, 16], &mut rng);
        let y = [0, 1, 2, 1, 0];
        let opts = LossOptions { samples: 1, sigma_scale: 0.0 };
        let a = pstn.elbo_loss_with(&x, &y, opts, &mut rng_from_seed(1)).unwrap();
        let b = stn.elbo_loss_with(&x, &y, opts, &mut rng_from_seed(1)).unwrap();
        assert!((a.class_loss - b.class_loss).abs() < 1e-10);
        assert_eq!(b.kl, 0.0);
    }
}

#[test]
fn stn_with_identity_warp_is_cnn() {
    for seed in 0..3 {
        let mut stn = Model::<f64>::new(spec(Variant::Stn, Family::Affine), &mut rng_from_seed(seed)).unwrap();
        let mut cnn = Model::<f64>::new(spec(Variant::Cnn, Family::None), &mut rng_from_seed(seed)).unwrap();
        let mut rng = rng_from_seed(70 + seed);
        let x = batch(4, &[1, 16, 16], &mut rng);
        let y = [2, 0, 1, 1];
        // freshly built localizers output the identity warp
        let a = stn.elbo_loss(&x, &y, &mut rng_from_seed(3)).unwrap();
        let b = cnn.elbo_loss(&x, &y, &mut rng_from_seed(3)).unwrap();
        assert!((a.total - b.total).abs() < 1e-10);
        assert_eq!(stn.localize(&x).unwrap().mu.data().iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }
}

#[test]
fn initial_pstn_posterior_is_the_prior() {
    let mut model = Model::<f64>::new(spec(Variant::Pstn, Family::Affine), &mut rng_from_seed(4)).unwrap();
    let x = batch(3, &[1, 16, 16], &mut rng_from_seed(5));
    let post = model.localize(&x).unwrap();
    assert!(post.sigma.data().iter().all(|s| (s - 0.1).abs() < 1e-15));
    let terms = model.elbo_loss(&x, &[0, 1, 2], &mut rng_from_seed(6)).unwrap();
    assert!(terms.kl.abs() < 1e-12);
    assert_eq!(terms.reconstruction, 0.0);
    assert!((terms.elbo() + terms.class_loss + terms.kl).abs() < 1e-15);
}

#[test]
fn predictions_are_normalized_and_sample_invariant_without_sigma() {
    let mut rng = rng_from_seed(8);
    let model = Model::<f64>::new(spec(Variant::Pstn, Family::Affine), &mut rng).unwrap();
    let x = batch(6, &[1, 16, 16], &mut rng);
    let p = model.predict(&x, 10, &mut rng).unwrap();
    assert_eq!(p.shape(), &[6, 3]);
    for b in 0..6 {
        assert!((p.item(b).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let one = model.predict_scaled(&x, 1, 0.0, &mut rng).unwrap();
    let many = model.predict_scaled(&x, 50, 0.0, &mut rng).unwrap();
    assert_eq!(one, many);

    let cnn = Model::<f64>::new(spec(Variant::Cnn, Family::None), &mut rng).unwrap();
    assert_eq!(cnn.predict(&x, 1, &mut rng).unwrap(), cnn.predict(&x, 10, &mut rng).unwrap());
}

#[test]
fn predictive_variance_shrinks_with_samples() {
    let mut rng = rng_from_seed(9);
    let mut s = spec(Variant::Pstn, Family::Affine);
    s.sigma_p = 0.3;
    let model = Model::<f64>::new(s, &mut rng).unwrap();
    let x = batch(1, &[1, 16, 16], &mut rng);
    let variance = |samples: usize, rng: &mut Rng| {
        let reps = 200;
        let outs: Vec<f64> = (0..reps).map(|_| model.predict(&x, samples, rng).unwrap().data()[0]).collect();
        let m = outs.iter().sum::<f64>() / reps as f64;
        outs.iter().map(|o| (o - m).powi(2)).sum::<f64>() / (reps - 1) as f64
    };
    let v1 = variance(1, &mut rng);
    let v10 = variance(10, &mut rng);
    let v100 = variance(100, &mut rng);
    assert!(v1 > 0.0);
    for (ratio, lo, hi) in [(v1 / v10, 6.0, 16.0), (v10 / v100, 6.0, 16.0)] {
        assert!((lo..hi).contains(&ratio), "variance ratio {ratio}");
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut rng = rng_from_seed(0);
    let mut model = Model::<f64>::new(spec(Variant::Pstn, Family::Affine), &mut rng).unwrap();
    let x = batch(2, &[1, 16, 16], &mut rng);
    assert!(matches!(model.elbo_loss(&x, &[0], &mut rng), Err(Error::Config(_))));
    assert!(matches!(model.elbo_loss(&x, &[0, 5], &mut rng), Err(Error::Data(_))));
    let opts = LossOptions { samples: 0, sigma_scale: 1.0 };
    assert!(model.elbo_loss_with(&x, &[0, 1], opts, &mut rng).is_err());
    assert!(matches!(model.predict(&batch(1, &[1, 8, 8], &mut rng), 1, &mut rng), Err(Error::Config(_))));
    let bad = ModelSpec::new(Variant::Stn, Family::None, &[1, 16, 16], 3);
    assert!(Model::<f64>::new(bad, &mut rng).is_err());
    assert!(Model::<f64>::new(ModelSpec::new(Variant::Cnn, Family::None, &[1, 4, 4], 3), &mut rng).is_err());
}

#[test]
fn diffeo_models_build_for_series_and_images() {
    let mut rng = rng_from_seed(3);
    let m1 = Model::<f64>::new(ModelSpec::new(Variant::Pstn, Family::Diffeo, &[1, 64], 5), &mut rng).unwrap();
    assert_eq!(m1.warper().num_params(), 15);
    let m2 = Model::<f32>::new(ModelSpec::new(Variant::Pstn, Family::Diffeo, &[1, 16, 16], 5), &mut rng).unwrap();
    assert_eq!(m2.warper().num_params(), 10);
    let x = batch(2, &[1, 64], &mut rng);
    let p = m1.predict(&x, 3, &mut rng).unwrap();
    assert!(p.all_finite());
}
