use rand::Rng as _;

use super::*;
use crate::testing::{central_diff, max_rel_err};
use crate::{rng_from_seed, Error, Rng, Tensor};

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn flat_params(net: &Sequential<f64>) -> Vec<f64> {
    net.params().iter().flat_map(|p| p.data().to_vec()).collect()
}

fn set_params(net: &mut Sequential<f64>, flat: &[f64]) {
    let mut off = 0;
    for p in net.params_mut() {
        let n = p.len();
        p.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// Projects the network output on a fixed random direction to get a scalar loss.
fn projected_loss(net: &Sequential<f64>, x: &Tensor<f64>, dir: &[f64]) -> f64 {
    net.infer(x).unwrap().data().iter().zip(dir).map(|(a, b)| a * b).sum()
}

/// Checks input and parameter gradients of `build(seed)` against central differences.
fn check_network(build: impl Fn(&mut Rng) -> Sequential<f64>, input_shape: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = rng_from_seed(seed);
        let mut net = build(&mut rng);
        // nonzero biases so relu/maxpool see generic inputs
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let x = random_tensor(input_shape, &mut rng);
        let y = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
        let dir: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gy = Tensor::from_vec(y.shape(), dir.clone()).unwrap();
        net.zero_grad();
        let gx = net.backward(&gy).unwrap();

        let numeric_x = central_diff(x.data(), 1e-6, |v| {
            projected_loss(&net, &Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &dir)
        });
        worst = worst.max(max_rel_err(gx.data(), &numeric_x));

        let analytic_p: Vec<f64> = net.params().iter().flat_map(|p| p.grad().unwrap().to_vec()).collect();
        let p0 = flat_params(&net);
        let mut probe = net.clone();
        let numeric_p = central_diff(&p0, 1e-6, |v| {
            set_params(&mut probe, v);
            projected_loss(&probe, &x, &dir)
        });
        worst = worst.max(max_rel_err(&analytic_p, &numeric_p));
    }
    worst
}

#[test]
fn dense_identity_passes_input_through() {
    let mut d = Dense::<f64>::zeroed(3, 3, 0.0);
    for i in 0..3 {
        d.weight.data_mut()[i * 3 + i] = 1.0;
    }
    let mut net = Sequential::new(&[3], vec![Layer::Dense(d)]).unwrap();
    let x = Tensor::from_f64(&[2, 3], &[1., -2., 3., 0.5, 0., -1.]).unwrap();
    let y = net.forward(&x, Mode::Train, None).unwrap();
    assert_eq!(y.data(), x.data());
    // d/dx sum(Wx) with W = Id is all ones
    let gx = net.backward(&Tensor::full(&[2, 3], 1.0)).unwrap();
    assert!(gx.data().iter().all(|&g| g == 1.0));
}

#[test]
fn relu_clamps_negatives() {
    let net = Sequential::<f64>::new(&[3], vec![Layer::Relu]).unwrap();
    let y = net.infer(&Tensor::from_f64(&[1, 3], &[-1., 0., 2.]).unwrap()).unwrap();
    assert_eq!(y.data(), &[0., 0., 2.]);
}

#[test]
fn conv2d_ones_kernel_sums_window() {
    let conv = Conv2d {
        weight: Tensor::<f64>::full(&[1, 1, 3, 3], 1.0),
        bias: Tensor::zeros(&[1]),
        stride: 1,
    };
    let net = Sequential::new(&[1, 5, 5], vec![Layer::Conv2d(conv)]).unwrap();
    let y = net.infer(&Tensor::full(&[1, 1, 5, 5], 1.0)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    // direct summation: 3x3 window of ones
    let oracle: f64 = (0..3).flat_map(|_| 0..3).map(|_| 1.0).sum();
    assert!(y.data().iter().all(|&v| v == oracle));
}

#[test]
fn shape_mismatch_is_config_error() {
    let mut rng = rng_from_seed(0);
    let net = Sequential::<f64>::new(&[4], vec![Layer::Dense(Dense::new(4, 2, &mut rng))]).unwrap();
    assert!(matches!(net.infer(&Tensor::zeros(&[1, 5])), Err(Error::Config(_))));
    let bad = Sequential::<f64>::new(&[1, 3, 3], vec![Layer::Conv2d(Conv2d::new(1, 2, 5, &mut rng))]);
    assert!(matches!(bad, Err(Error::Config(_))));
}

#[test]
fn backward_before_forward_is_state_error() {
    let mut net = Sequential::<f64>::new(&[2], vec![Layer::Relu]).unwrap();
    assert!(matches!(net.backward(&Tensor::zeros(&[1, 2])), Err(Error::State(_))));
}

#[test]
fn dense_gradients() {
    let worst = check_network(
        |rng| Sequential::new(&[5], vec![Layer::Dense(Dense::new(5, 4, rng)), Layer::Relu, Layer::Dense(Dense::new(4, 3, rng))]).unwrap(),
        &[3, 5],
    );
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn conv2d_pool_gradients() {
    let worst = check_network(
        |rng| {
            Sequential::new(
                &[2, 8, 8],
                vec![
                    Layer::Conv2d(Conv2d::new(2, 3, 3, rng)),
                    Layer::MaxPool2d(2),
                    Layer::Relu,
                    Layer::Flatten,
                    Layer::Dense(Dense::new(27, 2, rng)),
                ],
            )
            .unwrap()
        },
        &[2, 2, 8, 8],
    );
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn strided_conv2d_gradients() {
    let worst = check_network(
        |rng| {
            let mut c = Conv2d::new(1, 2, 3, rng);
            c.stride = 2;
            Sequential::new(&[1, 7, 7], vec![Layer::Conv2d(c)]).unwrap()
        },
        &[2, 1, 7, 7],
    );
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn conv1d_pool_gradients() {
    let worst = check_network(
        |rng| {
            Sequential::new(
                &[2, 12],
                vec![
                    Layer::Conv1d(Conv1d::new(2, 3, 3, rng)),
                    Layer::MaxPool1d(2),
                    Layer::Relu,
                    Layer::Flatten,
                    Layer::Dense(Dense::new(15, 2, rng)),
                ],
            )
            .unwrap()
        },
        &[2, 2, 12],
    );
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn dropout_eval_gradient_equals_plain_gradient() {
    let mut rng = rng_from_seed(3);
    let dense = Dense::new(4, 2, &mut rng);
    let mut with = Sequential::new(&[4], vec![Layer::Dropout(0.5), Layer::Dense(dense.clone())]).unwrap();
    let mut without = Sequential::new(&[4], vec![Layer::Dense(dense)]).unwrap();
    let x = random_tensor(&[3, 4], &mut rng);
    let g = random_tensor(&[3, 2], &mut rng);
    with.forward(&x, Mode::Eval, Some(&mut rng)).unwrap();
    without.forward(&x, Mode::Eval, None).unwrap();
    let gx1 = with.backward(&g).unwrap();
    let gx2 = without.backward(&g).unwrap();
    assert_eq!(gx1.data(), gx2.data());
    assert_eq!(with.params()[0].grad(), without.params()[0].grad());
}

#[test]
fn dropout_train_masks_and_rescales() {
    let net = Sequential::<f64>::new(&[1000], vec![Layer::Dropout(0.25)]).unwrap();
    let mut net = net;
    let mut rng = rng_from_seed(1);
    let y = net.forward(&Tensor::full(&[1, 1000], 1.0), Mode::Train, Some(&mut rng)).unwrap();
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
    assert!((150..350).contains(&zeros), "{zeros}");
    assert!(y.data().iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
}

#[test]
fn same_seed_same_gradients() {
    let run = || {
        let mut rng = rng_from_seed(11);
        let mut net = Sequential::<f64>::new(
            &[6],
            vec![Layer::Dense(Dense::new(6, 8, &mut rng)), Layer::Dropout(0.3), Layer::Relu, Layer::Dense(Dense::new(8, 2, &mut rng))],
        )
        .unwrap();
        let x = random_tensor(&[4, 6], &mut rng);
        let y = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
        let (_, g) = softmax_cross_entropy(&y, &[0, 1, 1, 0]).unwrap();
        net.backward(&g).unwrap();
        net.params().iter().flat_map(|p| p.grad().unwrap().to_vec()).collect::<Vec<f64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn f32_forward_matches_f64() {
    let mut rng = rng_from_seed(2);
    let net64 = Sequential::<f64>::new(&[1, 6, 6], vec![Layer::Conv2d(Conv2d::new(1, 2, 3, &mut rng)), Layer::Relu]).unwrap();
    let mut rng = rng_from_seed(2);
    let net32 = Sequential::<f32>::new(&[1, 6, 6], vec![Layer::Conv2d(Conv2d::new(1, 2, 3, &mut rng)), Layer::Relu]).unwrap();
    let x = random_tensor(&[1, 1, 6, 6], &mut rng);
    let y64 = net64.infer(&x).unwrap();
    let y32 = net32.infer(&x.cast()).unwrap();
    assert!(y64.cast::<f32>().max_abs_diff(&y32) < 1e-5);
}
