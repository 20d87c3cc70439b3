//! The CNN / STN / P-STN model assemblies.
//!
//! All three share one classifier interface. STN and P-STN put a localizer in
//! front that maps the observed input to a diagonal Gaussian over warp
//! parameters; STN warps with the mean, P-STN samples warps with the
//! reparametrization trick and adds a closed-form KL term to its prior.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpab::{Tessellation, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::nn::{softmax, softmax_cross_entropy, Conv1d, Conv2d, Dense, Layer, Mode, Sequential};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transform::{Displacement, Family, Warper};
use crate::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cnn,
    Stn,
    #[default]
    Pstn,
}

/// Hyperparameters that fully determine a model's structure and sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub family: Family,
    /// Per-example input shape `[C, L]` or `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    /// Prior standard deviation over `θ`; also the localizer's initial posterior σ.
    pub sigma_p: f64,
    pub sigma_noise: f64,
    pub s_train: usize,
    pub s_test: usize,
    pub tessellation: Tessellation,
    pub n_steps: usize,
    /// Multiplier on the KL term (1 for the plain ELBO).
    pub kl_weight: f64,
}

impl ModelSpec {
    pub fn new(variant: Variant, family: Family, input_shape: &[usize], classes: usize) -> Self {
        let tessellation = if input_shape.len() == 2 {
            Tessellation::Intervals { cells: 16 }
        } else {
            Tessellation::Triangles { nx: 2, ny: 2 }
        };
        Self {
            variant,
            family: if variant == Variant::Cnn { Family::None } else { family },
            input_shape: input_shape.to_vec(),
            classes,
            sigma_p: 0.05,
            sigma_noise: 0.0,
            s_train: 1,
            s_test: 10,
            tessellation,
            n_steps: DEFAULT_STEPS,
            kl_weight: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.input_shape.len()) || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} is not [C, L] or [C, H, W]", self.input_shape)));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if !(self.sigma_p > 0.0) {
            return Err(Error::Config(format!("sigma_p must be positive, got {}", self.sigma_p)));
        }
        if self.sigma_noise < 0.0 {
            return Err(Error::Config("sigma_noise must be non-negative".into()));
        }
        if self.s_train == 0 || self.s_test == 0 {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        match (self.variant, self.family) {
            (Variant::Cnn, Family::None) => Ok(()),
            (Variant::Cnn, f) => Err(Error::Config(format!("cnn takes no transformation family, got {f:?}"))),
            (_, Family::None) => Err(Error::Config("stn/pstn need an affine or diffeo family".into())),
            _ => Ok(()),
        }
    }
}

/// Diagonal Gaussian `q(θ | I_obs)` for a batch: `mu`, `sigma` are `[B, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior<T> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

impl<T: Scalar> GaussianPosterior<T> {
    pub fn dim(&self) -> usize {
        self.mu.item_len()
    }

    pub fn batch(&self) -> usize {
        self.mu.batch()
    }
}

/// Isotropic zero-mean Gaussian prior `N(0, σ_p² I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prior<T> {
    pub sigma_p: T,
}

/// `KL(N(μ, diag σ²) ‖ N(0, σ_p² I))` for one example and its gradients
/// w.r.t. `μ` and `σ`.
pub fn kl_to_prior<T: Scalar>(mu: &[T], sigma: &[T], prior: Prior<T>) -> Result<(T, Vec<T>, Vec<T>)> {
    let sp = prior.sigma_p;
    if !(sp > T::zero()) {
        return Err(Error::Numeric(format!("prior sigma must be positive, got {sp}")));
    }
    if let Some(i) = sigma.iter().position(|&s| !(s > T::zero())) {
        return Err(Error::Numeric(format!("posterior sigma[{i}] = {} is not positive", sigma[i])));
    }
    let half = T::lit(0.5);
    let var_p = sp * sp;
    let mut kl = T::zero();
    let mut dmu = Vec::with_capacity(mu.len());
    let mut dsigma = Vec::with_capacity(mu.len());
    for (&m, &s) in mu.iter().zip(sigma) {
        kl += (sp / s).ln() + (s * s + m * m) / (T::lit(2.0) * var_p) - half;
        dmu.push(m / var_p);
        dsigma.push(s / var_p - s.recip());
    }
    Ok((kl, dmu, dsigma))
}

/// Reparametrized draw `θ = μ + σ ⊙ ε` for one example. Returns `(θ, ε)`.
pub fn sample_theta<T: Scalar>(mu: &[T], sigma: &[T], rng: &mut Rng) -> (Vec<T>, Vec<T>) {
    let eps: Vec<T> = (0..mu.len())
        .map(|_| T::lit(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)))
        .collect();
    let theta = mu.iter().zip(sigma).zip(&eps).map(|((&m, &s), &e)| m + s * e).collect();
    (theta, eps)
}

/// `I_s = T_θ(I_obs) + σ_noise ε` for one example.
pub fn augment<T: Scalar>(warper: &Warper<T>, input: &Tensor<T>, theta: &[T], sigma_noise: T, rng: &mut Rng) -> Result<Tensor<T>> {
    let mut out = warper.warp(input, theta)?;
    add_noise(&mut out, sigma_noise, rng);
    Ok(out)
}

fn add_noise<T: Scalar>(x: &mut Tensor<T>, sigma: T, rng: &mut Rng) {
    if sigma > T::zero() {
        for v in x.data_mut() {
            *v += sigma * T::lit(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
        }
    }
}

/// Per-batch loss components. The reconstruction term is constant under the
/// model (the warp is linear in its input and the image prior is flat), so it
/// is carried as an explicit zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms<T> {
    /// Monte-Carlo mean of `-log p(y | I_s)`.
    pub class_loss: T,
    /// Batch mean of `KL(q(θ | I_obs) ‖ p(θ))`.
    pub kl: T,
    pub reconstruction: T,
    /// Minimized objective `class_loss + kl_weight · kl`.
    pub total: T,
}

impl<T: Scalar> ElboTerms<T> {
    /// The (unweighted) lower bound: log-likelihood estimate minus KL.
    pub fn elbo(&self) -> T {
        -self.class_loss - self.kl + self.reconstruction
    }
}

/// Shared trunk with separate mean and log-variance heads.
#[derive(Clone, Debug)]
pub struct Localizer<T> {
    pub trunk: Sequential<T>,
    pub mu_head: Sequential<T>,
    pub logvar_head: Sequential<T>,
}

impl<T: Scalar> Localizer<T> {
    /// Heads start at zero weights: `μ = 0` and `σ = sigma_init` for every input.
    pub fn new(trunk: Sequential<T>, dim: usize, sigma_init: f64) -> Result<Self> {
        let features = trunk.output_shape();
        if features.len() != 1 {
            return Err(Error::Config(format!("localizer trunk must end flat, got {features:?}")));
        }
        let f = features[0];
        let head = |bias: T| Sequential::new(&[f], vec![Layer::Dense(Dense::zeroed(f, dim, bias))]);
        Ok(Self {
            trunk,
            mu_head: head(T::zero())?,
            logvar_head: head(T::lit(2.0 * sigma_init.ln()))?,
        })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<GaussianPosterior<T>> {
        let h = self.trunk.infer(x)?;
        let mu = self.mu_head.infer(&h)?;
        let sigma = self.logvar_head.infer(&h)?.map(|lv| (lv * T::lit(0.5)).exp());
        check_posterior(&mu, &sigma)?;
        Ok(GaussianPosterior { mu, sigma })
    }

    fn forward(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<GaussianPosterior<T>> {
        let h = self.trunk.forward(x, Mode::Train, Some(rng))?;
        let mu = self.mu_head.forward(&h, Mode::Train, None)?;
        let sigma = self.logvar_head.forward(&h, Mode::Train, None)?.map(|lv| (lv * T::lit(0.5)).exp());
        check_posterior(&mu, &sigma)?;
        Ok(GaussianPosterior { mu, sigma })
    }

    fn backward(&mut self, dmu: &Tensor<T>, dlogvar: &Tensor<T>) -> Result<()> {
        let mut g = self.mu_head.backward(dmu)?;
        let g2 = self.logvar_head.backward(dlogvar)?;
        for (a, &b) in g.data_mut().iter_mut().zip(g2.data()) {
            *a += b;
        }
        self.trunk.backward(&g)?;
        Ok(())
    }

    fn parts(&self) -> [(&'static str, &Sequential<T>); 3] {
        [("trunk", &self.trunk), ("mu", &self.mu_head), ("logvar", &self.logvar_head)]
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.parts().into_iter().flat_map(|(_, s)| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.trunk.params_mut();
        out.extend(self.mu_head.params_mut());
        out.extend(self.logvar_head.params_mut());
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.parts()
            .into_iter()
            .flat_map(|(p, s)| s.param_names().into_iter().map(move |n| format!("{p}.{n}")))
            .collect()
    }
}

fn check_posterior<T: Scalar>(mu: &Tensor<T>, sigma: &Tensor<T>) -> Result<()> {
    mu.check_finite("localizer mean")?;
    sigma.check_finite("localizer sigma")?;
    if let Some(i) = sigma.data().iter().position(|&s| !(s > T::zero())) {
        return Err(Error::Numeric(format!("localizer sigma underflowed to zero at index {i}")));
    }
    Ok(())
}

/// Default localizer trunk: conv(8, 5) → pool → relu → conv(10, 5) → pool → relu → dense(32) → relu.
pub fn default_localizer_trunk<T: Scalar>(input_shape: &[usize], rng: &mut Rng) -> Result<Sequential<T>> {
    conv_stack(input_shape, [8, 10], 32, rng)
}

/// Default classifier: conv(10, 5) → pool → relu → conv(20, 5) → pool → relu → dense(50) → relu → dense(classes).
pub fn default_classifier<T: Scalar>(input_shape: &[usize], classes: usize, rng: &mut Rng) -> Result<Sequential<T>> {
    let net = conv_stack(input_shape, [10, 20], 50, rng)?;
    let mut layers = net.layers().to_vec();
    layers.push(Layer::Dense(Dense::new(50, classes, rng)));
    Sequential::new(input_shape, layers)
}

fn conv_stack<T: Scalar>(input_shape: &[usize], channels: [usize; 2], hidden: usize, rng: &mut Rng) -> Result<Sequential<T>> {
    let c = input_shape[0];
    let mut layers = Vec::new();
    let two_d = input_shape.len() == 3;
    let mut in_ch = c;
    for &out_ch in &channels {
        if two_d {
            layers.push(Layer::Conv2d(Conv2d::new(in_ch, out_ch, 5, rng)));
            layers.push(Layer::MaxPool2d(2));
        } else {
            layers.push(Layer::Conv1d(Conv1d::new(in_ch, out_ch, 5, rng)));
            layers.push(Layer::MaxPool1d(2));
        }
        layers.push(Layer::Relu);
        in_ch = out_ch;
    }
    layers.push(Layer::Flatten);
    let probe = Sequential::<T>::new(input_shape, layers.clone()).map_err(|e| {
        Error::Config(format!("input {input_shape:?} is too small for the default conv stack: {e}"))
    })?;
    let flat = probe.output_shape()[0];
    layers.push(Layer::Dense(Dense::new(flat, hidden, rng)));
    layers.push(Layer::Relu);
    Sequential::new(input_shape, layers)
}

/// One model: optional localizer, a warp family, and a classifier.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    warper: Warper<T>,
    localizer: Option<Localizer<T>>,
    classifier: Sequential<T>,
}

/// Knobs for one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossOptions<T> {
    pub samples: usize,
    /// Multiplies the posterior σ before sampling (0 gives the mean warp).
    pub sigma_scale: T,
}

impl<T: Scalar> Model<T> {
    /// Builds the default architectures for `spec`.
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let classifier = default_classifier(&spec.input_shape, spec.classes, rng)?;
        let warper = Warper::build(spec.family, &spec.input_shape[1..], spec.tessellation, spec.n_steps)?;
        let localizer = match spec.variant {
            Variant::Cnn => None,
            _ => Some(Localizer::new(
                default_localizer_trunk(&spec.input_shape, rng)?,
                warper.num_params(),
                spec.sigma_p,
            )?),
        };
        Ok(Self {
            spec,
            warper,
            localizer,
            classifier,
        })
    }

    /// Assembles a model from caller-built networks.
    pub fn from_parts(spec: ModelSpec, localizer: Option<Localizer<T>>, classifier: Sequential<T>) -> Result<Self> {
        spec.validate()?;
        let warper = Warper::build(spec.family, &spec.input_shape[1..], spec.tessellation, spec.n_steps)?;
        if classifier.input_shape() != spec.input_shape.as_slice() || classifier.output_shape() != [spec.classes] {
            return Err(Error::Config("classifier does not map the input shape to class logits".into()));
        }
        match (&localizer, spec.variant) {
            (None, Variant::Cnn) => {}
            (Some(l), Variant::Stn | Variant::Pstn) => {
                if l.trunk.input_shape() != spec.input_shape.as_slice() || l.mu_head.output_shape() != [warper.num_params()] {
                    return Err(Error::Config("localizer does not match input shape / warp dimension".into()));
                }
            }
            _ => return Err(Error::Config("only stn/pstn carry a localizer".into())),
        }
        Ok(Self {
            spec,
            warper,
            localizer,
            classifier,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn warper(&self) -> &Warper<T> {
        &self.warper
    }

    pub fn localizer(&self) -> Option<&Localizer<T>> {
        self.localizer.as_ref()
    }

    pub fn localizer_mut(&mut self) -> Option<&mut Localizer<T>> {
        self.localizer.as_mut()
    }

    pub fn classifier(&self) -> &Sequential<T> {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Sequential<T> {
        &mut self.classifier
    }

    pub fn set_sigma_noise(&mut self, sigma_noise: f64) {
        self.spec.sigma_noise = sigma_noise;
    }

    fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.spec.input_shape.len() + 1 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::Config(format!(
                "model expects [B, {:?}] inputs, got {:?}",
                self.spec.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Posterior over `θ` for every input of the batch.
    pub fn localize(&self, x: &Tensor<T>) -> Result<GaussianPosterior<T>> {
        self.check_batch(x)?;
        match &self.localizer {
            Some(l) => l.infer(x),
            None => Err(Error::Config("cnn models have no localizer".into())),
        }
    }

    /// The σ actually used for sampling: zero for STN (mean warp only).
    fn effective_sigma(&self, sigma: &[T], scale: T) -> Vec<T> {
        match self.spec.variant {
            Variant::Pstn => sigma.iter().map(|&s| s * scale).collect(),
            _ => vec![T::zero(); sigma.len()],
        }
    }

    /// Monte-Carlo ELBO loss with the configured training sample count.
    /// Accumulates gradients into every parameter's grad buffer.
    pub fn elbo_loss(&mut self, x: &Tensor<T>, labels: &[usize], rng: &mut Rng) -> Result<ElboTerms<T>> {
        let opts = LossOptions {
            samples: self.spec.s_train,
            sigma_scale: T::one(),
        };
        self.elbo_loss_with(x, labels, opts, rng)
    }

    pub fn elbo_loss_with(&mut self, x: &Tensor<T>, labels: &[usize], opts: LossOptions<T>, rng: &mut Rng) -> Result<ElboTerms<T>> {
        self.check_batch(x)?;
        if opts.samples == 0 {
            return Err(Error::Config("need at least one Monte-Carlo sample".into()));
        }
        if labels.len() != x.batch() {
            return Err(Error::Config(format!("{} labels for a batch of {}", labels.len(), x.batch())));
        }
        let batch = x.batch();
        let s_count = opts.samples;
        let sigma_noise = T::lit(self.spec.sigma_noise);
        let prior = Prior { sigma_p: T::lit(self.spec.sigma_p) };

        let posterior = match &mut self.localizer {
            Some(l) => Some(l.forward(x, rng)?),
            None => None,
        };
        let d = self.warper.num_params();
        let inputs: Vec<Tensor<T>> = (0..batch).map(|b| item_tensor(x, b)).collect();

        // Monte-Carlo warps, laid out sample-major: index s * batch + b
        let mut warped = Vec::with_capacity(s_count * batch);
        let mut disps: Vec<Displacement<T>> = Vec::with_capacity(s_count * batch);
        let mut epsilons: Vec<Vec<T>> = Vec::with_capacity(s_count * batch);
        for _ in 0..s_count {
            for (b, input) in inputs.iter().enumerate() {
                let theta = match &posterior {
                    Some(p) => {
                        let sigma = self.effective_sigma(p.sigma.item(b), opts.sigma_scale);
                        let (theta, eps) = sample_theta(p.mu.item(b), &sigma, rng);
                        epsilons.push(eps);
                        theta
                    }
                    None => Vec::new(),
                };
                let disp = self.warper.displace(&theta, true)?;
                let mut img = self.warper.warp_displaced(input, &disp)?;
                add_noise(&mut img, sigma_noise, rng);
                warped.push(img);
                disps.push(disp);
            }
        }
        let mut aug_shape = vec![s_count * batch];
        aug_shape.extend_from_slice(&self.spec.input_shape);
        let flat: Vec<T> = warped.into_iter().flat_map(|t| t.into_vec()).collect();
        let aug = Tensor::from_vec(&aug_shape, flat)?;
        let repeated: Vec<usize> = (0..s_count).flat_map(|_| labels.iter().copied()).collect();

        let logits = self.classifier.forward(&aug, Mode::Train, Some(rng))?;
        let (class_loss, dlogits) = softmax_cross_entropy(&logits, &repeated)?;
        if !class_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite classification loss {class_loss}")));
        }
        let daug = self.classifier.backward(&dlogits)?;

        let Some(post) = posterior else {
            return Ok(ElboTerms {
                class_loss,
                kl: T::zero(),
                reconstruction: T::zero(),
                total: class_loss,
            });
        };

        let mut dmu = Tensor::zeros(&[batch, d]);
        let mut dsigma = Tensor::zeros(&[batch, d]);
        for (i, disp) in disps.iter().enumerate() {
            let b = i % batch;
            let g_img = item_tensor(&daug, i);
            let (_, gtheta) = self.warper.backward_displaced(&inputs[b], disp, &g_img)?;
            let eps = &epsilons[i];
            for j in 0..d {
                dmu.item_mut(b)[j] += gtheta[j];
                dsigma.item_mut(b)[j] += gtheta[j] * eps[j];
            }
        }
        // θ used σ·scale for P-STN and no σ at all for STN
        let scale = match self.spec.variant {
            Variant::Pstn => opts.sigma_scale,
            _ => T::zero(),
        };
        dsigma.data_mut().iter_mut().for_each(|g| *g *= scale);

        let mut kl_mean = T::zero();
        if self.spec.variant == Variant::Pstn {
            let w = T::lit(self.spec.kl_weight);
            let bn = T::from_usize_lossy(batch);
            for b in 0..batch {
                let (kl, gm, gs) = kl_to_prior(post.mu.item(b), post.sigma.item(b), prior)?;
                kl_mean += kl / bn;
                for j in 0..d {
                    dmu.item_mut(b)[j] += w * gm[j] / bn;
                    dsigma.item_mut(b)[j] += w * gs[j] / bn;
                }
            }
        }
        // σ = exp(logvar / 2)
        let mut dlogvar = dsigma;
        for (g, &s) in dlogvar.data_mut().iter_mut().zip(post.sigma.data()) {
            *g *= s * T::lit(0.5);
        }
        self.localizer
            .as_mut()
            .expect("posterior implies localizer")
            .backward(&dmu, &dlogvar)?;

        let total = class_loss + T::lit(self.spec.kl_weight) * kl_mean;
        Ok(ElboTerms {
            class_loss,
            kl: kl_mean,
            reconstruction: T::zero(),
            total,
        })
    }

    /// Predictive class probabilities `[B, classes]`, averaging probabilities
    /// over `samples` posterior warps (a single pass for CNN and STN).
    pub fn predict(&self, x: &Tensor<T>, samples: usize, rng: &mut Rng) -> Result<Tensor<T>> {
        self.predict_scaled(x, samples, T::one(), rng)
    }

    /// `predict` with every posterior σ multiplied by `sigma_scale`.
    pub fn predict_scaled(&self, x: &Tensor<T>, samples: usize, sigma_scale: T, rng: &mut Rng) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        if samples == 0 {
            return Err(Error::Config("need at least one prediction sample".into()));
        }
        let batch = x.batch();
        let posterior = match &self.localizer {
            Some(l) => Some(l.infer(x)?),
            None => None,
        };
        let sigma_noise = T::lit(self.spec.sigma_noise);
        // every sample would be the same warp
        let deterministic = sigma_scale == T::zero() && sigma_noise == T::zero();
        let samples = match self.spec.variant {
            Variant::Pstn if !deterministic => samples,
            _ => 1,
        };
        let mut parts = Vec::with_capacity(samples * batch);
        for _ in 0..samples {
            for b in 0..batch {
                let input = item_tensor(x, b);
                let theta = match &posterior {
                    Some(p) => sample_theta(p.mu.item(b), &self.effective_sigma(p.sigma.item(b), sigma_scale), rng).0,
                    None => Vec::new(),
                };
                let mut img = self.warper.warp(&input, &theta)?;
                add_noise(&mut img, sigma_noise, rng);
                parts.push(img);
            }
        }
        let mut shape = vec![samples * batch];
        shape.extend_from_slice(&self.spec.input_shape);
        let aug = Tensor::from_vec(&shape, parts.into_iter().flat_map(|t| t.into_vec()).collect())?;
        let probs = softmax(&self.classifier.infer(&aug)?);
        let classes = self.spec.classes;
        let mut out = Tensor::zeros(&[batch, classes]);
        let inv = T::from_usize_lossy(samples).recip();
        for s in 0..samples {
            for b in 0..batch {
                let row = probs.item(s * batch + b);
                for (o, &p) in out.item_mut(b).iter_mut().zip(row) {
                    *o += p * inv;
                }
            }
        }
        out.check_finite("predictive probabilities")?;
        Ok(out)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All parameters: classifier first, then localizer.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = self.classifier.params();
        if let Some(l) = &self.localizer {
            out.extend(l.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.classifier.params_mut();
        if let Some(l) = &mut self.localizer {
            out.extend(l.params_mut());
        }
        out
    }

    /// Names matching `params()` order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.classifier.param_names().into_iter().map(|n| format!("classifier.{n}")).collect();
        if let Some(l) = &self.localizer {
            out.extend(l.param_names().into_iter().map(|n| format!("localizer.{n}")));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Split borrow for optimizers with per-network learning rates.
    pub fn param_groups_mut(&mut self) -> (Vec<&mut Tensor<T>>, Vec<&mut Tensor<T>>) {
        let classifier = self.classifier.params_mut();
        let localizer = self.localizer.as_mut().map(|l| l.params_mut()).unwrap_or_default();
        (classifier, localizer)
    }
}

/// Entry `b` of a batch as a standalone tensor `[...item shape]`.
pub(crate) fn item_tensor<T: Scalar>(x: &Tensor<T>, b: usize) -> Tensor<T> {
    Tensor::from_vec(&x.shape()[1..], x.item(b).to_vec()).expect("item shape")
}

