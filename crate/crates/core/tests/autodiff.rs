use nca_core::autodiff::{
    conv2d_forward, grad_check, grad_check_with_fault, AutodiffError, ConvAlgorithm, ConvConfig,
    Graph, OpKind, Padding, Tensor, Var,
};
use nca_core::nca::sobel_kernel;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn conv(x: &Tensor<f64>, k: &Tensor<f64>, cfg: ConvConfig) -> Tensor<f64> {
    conv2d_forward(x, k, None, cfg, ConvAlgorithm::Im2col).unwrap()
}

/// Nested-loop cross-correlation with zero padding, written out by hand.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
    let (n, cin, h, w) = x.dims4().unwrap();
    let (cout, _, kh, kw) = k.dims4().unwrap();
    let mut out = vec![0.0; n * cout * h * w];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = y as isize + i as isize - (kh / 2) as isize;
                                let sx = xx as isize + j as isize - (kw / 2) as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((b * cin + c) * h + sy as usize) * w + sx as usize]
                                    * k.data()[((o * cin + c) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * cout + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, h, w], out).unwrap()
}

#[test]
fn identity_kernel_returns_input() {
    let x = t(&[1, 1, 3, 4], &[0.5, -1.0, 2.0, 3.0, 0.0, 7.0, -2.5, 1.0, 4.0, 4.0, 0.1, -0.3]);
    let k = t(&[1, 1, 1, 1], &[1.0]);
    for algo in [ConvAlgorithm::Direct, ConvAlgorithm::Im2col] {
        let y = conv2d_forward(&x, &k, None, ConvConfig::default(), algo).unwrap();
        assert_eq!(y, x);
    }
}

#[test]
fn ones_kernel_matches_nested_loop() {
    let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
    let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
    let y = conv(&x, &k, ConvConfig::default());
    assert_eq!(y, naive_conv(&x, &k));
    assert_eq!(y.data()[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(y.data()[corner], 4.0);
    }
}

#[test]
fn sobel_x_on_x_constant_image_is_zero() {
    // Each row constant along x; circular padding keeps borders clean too.
    let x = t(&[1, 1, 4, 5], &(0..20).map(|i| (i / 5) as f64 * 1.7).collect::<Vec<_>>());
    let k = sobel_kernel::<f64>(1);
    let y = conv(&x, &k, ConvConfig::with_padding(Padding::Circular));
    let sobel_x = y.channels(1, 1).unwrap();
    assert!(sobel_x.data().iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn conv_shape_errors() {
    let x = Tensor::<f64>::ones(&[1, 4, 5, 5]);
    let even = Tensor::<f64>::ones(&[1, 4, 2, 2]);
    assert!(matches!(
        conv2d_forward(&x, &even, None, ConvConfig::default(), ConvAlgorithm::Im2col),
        Err(AutodiffError::Shape(_))
    ));
    let k = Tensor::<f64>::ones(&[3, 4, 3, 3]);
    let cfg = ConvConfig { groups: 3, ..ConvConfig::default() };
    assert!(conv2d_forward(&x, &k, None, cfg, ConvAlgorithm::Im2col).is_err());
}

#[test]
fn relu_forward_and_backward() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    // Subgradient at exactly zero is zero.
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[4], &[-1.0, -0.5, -3.0, -1e-9]));
    let y = g.relu(x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn relu_gradient_matches_finite_differences() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[-1.0, 3.0]));
    let y = g.relu(x).unwrap();
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    let f = |v: [f64; 2]| v.iter().map(|&a| a.max(0.0)).sum::<f64>();
    let eps = 1e-5;
    for i in 0..2 {
        let mut p = [-1.0, 3.0];
        let mut m = p;
        p[i] += eps;
        m[i] -= eps;
        let numeric = (f(p) - f(m)) / (2.0 * eps);
        assert!((g.grad(x).unwrap().data()[i] - numeric).abs() < 1e-9);
    }
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn add_zero_and_mean_of_ones() {
    let mut g = Graph::<f64>::new();
    let xv = t(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 9.0, -0.25]);
    let x = g.constant(xv.clone());
    let z = g.constant(Tensor::zeros(&[2, 3]));
    let y = g.add(x, z).unwrap();
    assert_eq!(g.value(y), &xv);

    let ones = g.constant(Tensor::ones(&[2, 2]));
    let m = g.mean_all(ones).unwrap();
    assert_eq!(g.value(m).item(), 1.0);
}

#[test]
fn mul_gradient_is_the_other_operand() {
    let av = t(&[4], &[0.3, -1.2, 2.0, 0.7]);
    let bv = t(&[4], &[1.5, 0.25, -3.0, 4.0]);
    let mut g = Graph::<f64>::new();
    let a = g.param(av.clone());
    let b = g.constant(bv.clone());
    let p = g.mul(a, b).unwrap();
    let s = g.sum_all(p).unwrap();
    g.backward(s).unwrap();
    let eps = 1e-6;
    let f = |a: &[f64]| a.iter().zip(bv.data()).map(|(x, y)| x * y).sum::<f64>();
    for i in 0..4 {
        let mut plus = av.data().to_vec();
        let mut minus = plus.clone();
        plus[i] += eps;
        minus[i] -= eps;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * eps);
        assert!((numeric - bv.data()[i]).abs() < 1e-8);
        assert!((g.grad(a).unwrap().data()[i] - numeric).abs() < 1e-8);
    }
}

#[test]
fn incompatible_shapes_are_rejected() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::ones(&[2, 3]));
    let b = g.constant(Tensor::ones(&[3, 2]));
    assert!(matches!(g.add(a, b), Err(AutodiffError::Shape(_))));
}

#[test]
fn log_softmax_equal_logits() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[1, 10, 1, 1], 0.37));
    let y = g.log_softmax(x, 1).unwrap();
    for &v in g.value(y).data() {
        assert!((v - (0.1f64).ln()).abs() < 1e-12);
    }
    assert!(((0.1f64).ln() + 2.302585).abs() < 1e-6);
}

#[test]
fn log_softmax_saturates_without_overflow() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2, 1, 1], &[0.0, 100.0]));
    let y = g.log_softmax(x, 1).unwrap();
    let v = g.value(y).data();
    assert!(v[1].abs() < 1e-40);
    assert!((v[0] + 100.0).abs() < 1e-9);

    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(&[1, 3, 1, 1], vec![0.0, 1000.0, -1000.0]).unwrap());
    let y = g.log_softmax(x, 1).unwrap();
    assert!(g.value(y).all_finite());
}

#[test]
fn log_softmax_rows_normalise() {
    let data: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 * 0.9 - 4.0).collect();
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2, 3, 2, 2], &data));
    let y = g.log_softmax(x, 1).unwrap();
    let v = g.value(y);
    for b in 0..2 {
        for p in 0..4 {
            let s: f64 = (0..3).map(|c| v.data()[(b * 3 + c) * 4 + p].exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn log_softmax_gradient_check() {
    let logits = t(&[2, 4, 1, 1], &[0.3, -1.1, 2.2, 0.5, -0.7, 0.05, 1.3, -2.0]);
    let weights = t(&[2, 4, 1, 1], &[0.2, -0.4, 1.0, 0.3, 0.9, -0.1, 0.5, 0.7]);
    let report = grad_check(
        |g, p| {
            let l = g.log_softmax(p[0], 1)?;
            let w = g.constant(weights.clone());
            let y = g.mul(l, w)?;
            g.sum_all(y)
        },
        &[logits],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{}", report.max_rel_error);
}

#[test]
fn backward_simple_losses() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[4.0, -2.0, 0.5]));
    let s = g.sum_all(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_twice_accumulates() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq).unwrap();
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(AutodiffError::NotScalar(_))));
    let c = g.constant(t(&[2], &[1.0, 2.0]));
    let s = g.sum_all(c).unwrap();
    assert_eq!(g.backward(s), Err(AutodiffError::Detached));
}

#[test]
fn grad_check_is_exact_for_linear_functions() {
    let x = t(&[5], &[0.1, -0.2, 0.3, 1.5, -2.0]);
    let report = grad_check(
        |g, p| {
            let y = g.affine(p[0], 3.0, 1.0)?;
            g.sum_all(y)
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
    assert_eq!(report.coordinates, 5);
}

#[test]
fn grad_check_conv_relu_composite() {
    let mut s = 3u64;
    let mut rnd = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    };
    let x = t(&[1, 2, 5, 5], &rnd(50));
    let k = t(&[3, 2, 3, 3], &rnd(54));
    let b = t(&[3], &rnd(3));
    let f = |g: &mut Graph<f64>, p: &[Var]| {
        let y = g.conv2d(p[0], p[1], Some(p[2]), ConvConfig::default())?;
        let r = g.relu(y)?;
        let q = g.mul(r, r)?;
        g.sum_all(q)
    };
    let report = grad_check(f, &[x.clone(), k.clone(), b.clone()], 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);

    let faulty = grad_check_with_fault(f, &[x, k, b], 1e-5, Some(OpKind::Conv2d)).unwrap();
    assert!(faulty.max_rel_error > 1e-2);
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::cell::Cell;
    let calls = Cell::new(0.0);
    let r = grad_check(
        |g, p| {
            calls.set(calls.get() + 1.0);
            let y = g.affine(p[0], 1.0, calls.get())?;
            g.sum_all(y)
        },
        &[t(&[1], &[0.0])],
        1e-5,
    );
    assert!(matches!(r, Err(AutodiffError::NonDeterministic { .. })));
}

#[test]
fn non_finite_results_surface_as_errors() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(&[2], vec![3e38, 3e38]).unwrap());
    let r = g.add(x, x);
    assert!(matches!(r, Err(AutodiffError::NonFinite(_))));
}

// ---- properties -------------------------------------------------------------

fn tensor_strategy(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

fn shift(x: &Tensor<f64>, dy: usize, dx: usize) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let mut out = vec![0.0; x.len()];
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                out[p * h * w + ((y + dy) % h) * w + (xx + dx) % w] = x.data()[p * h * w + y * w + xx];
            }
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

/// Brute-force Jacobian of `f` at `x` by central differences, contracted
/// with the upstream gradient of `sum`.
fn brute_force_grad(f: &dyn Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>) -> Vec<f64> {
    let eps = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            (f(&p) - f(&m)) / (2.0 * eps)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn circular_conv_is_translation_equivariant(
        x in tensor_strategy(vec![1, 2, 5, 6]),
        k in tensor_strategy(vec![3, 2, 3, 3]),
        dy in 0usize..5,
        dx in 0usize..6,
        dil in 1usize..3,
    ) {
        let cfg = ConvConfig { dilation: dil, ..ConvConfig::with_padding(Padding::Circular) };
        let a = conv(&shift(&x, dy, dx), &k, cfg);
        let b = shift(&conv(&x, &k, cfg), dy, dx);
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn conv_is_linear(
        x in tensor_strategy(vec![1, 2, 4, 4]),
        y in tensor_strategy(vec![1, 2, 4, 4]),
        k in tensor_strategy(vec![2, 2, 3, 3]),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        circular in any::<bool>(),
    ) {
        let cfg = ConvConfig::with_padding(if circular { Padding::Circular } else { Padding::Zeros });
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv(&Tensor::new(x.shape(), mix).unwrap(), &k, cfg);
        let (cx, cy) = (conv(&x, &k, cfg), conv(&y, &k, cfg));
        let rhs: Vec<f64> = cx.data().iter().zip(cy.data()).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(lhs.max_abs_diff(&Tensor::new(lhs.shape(), rhs).unwrap()) < 1e-5);
    }

    #[test]
    fn zero_padded_conv_matches_nested_loop(
        x in tensor_strategy(vec![2, 2, 4, 5]),
        k in tensor_strategy(vec![3, 2, 3, 3]),
    ) {
        let expect = naive_conv(&x, &k);
        for algo in [ConvAlgorithm::Direct, ConvAlgorithm::Im2col] {
            let y = conv2d_forward(&x, &k, None, ConvConfig::default(), algo).unwrap();
            prop_assert!(y.max_abs_diff(&expect) < 1e-5);
        }
    }

    #[test]
    fn direct_and_im2col_agree(
        x in tensor_strategy(vec![1, 4, 5, 5]),
        k in tensor_strategy(vec![4, 2, 3, 3]),
        bias in tensor_strategy(vec![4]),
        circular in any::<bool>(),
        dil in 1usize..3,
    ) {
        let cfg = ConvConfig {
            dilation: dil,
            padding: if circular { Padding::Circular } else { Padding::Zeros },
            groups: 2,
        };
        let a = conv2d_forward(&x, &k, Some(&bias), cfg, ConvAlgorithm::Direct).unwrap();
        let b = conv2d_forward(&x, &k, Some(&bias), cfg, ConvAlgorithm::Im2col).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn backward_matches_brute_force_jacobian(
        x in tensor_strategy(vec![1, 2, 3, 3]),
        k in tensor_strategy(vec![2, 2, 3, 3]),
        w in tensor_strategy(vec![1, 2, 3, 3]),
    ) {
        // conv -> sub -> abs -> log_softmax -> weighted sum, no shared nodes.
        let build = |g: &mut Graph<f64>, xv: Var| -> Result<Var, AutodiffError> {
            let kv = g.constant(k.clone());
            let y = g.conv2d(xv, kv, None, ConvConfig::default())?;
            let off = g.constant(Tensor::full(&[1, 2, 3, 3], 0.3));
            let d = g.sub(y, off)?;
            let a = g.abs(d)?;
            let l = g.log_softmax(a, 1)?;
            let wv = g.constant(w.clone());
            let p = g.mul(l, wv)?;
            g.sum_all(p)
        };
        let f = |xv: &Tensor<f64>| {
            let mut g = Graph::new();
            let v = g.constant(xv.clone());
            let out = build(&mut g, v).unwrap();
            g.value(out).item()
        };
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let out = build(&mut g, xv).unwrap();
        g.backward(out).unwrap();
        let analytic = g.grad(xv).unwrap().data().to_vec();
        let numeric = brute_force_grad(&f, &x);
        for (a, n) in analytic.iter().zip(&numeric) {
            prop_assert!((a - n).abs() < 1e-4 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn ops_do_not_mutate_inputs(
        x in tensor_strategy(vec![1, 3, 3, 3]),
        k in tensor_strategy(vec![3, 3, 3, 3]),
    ) {
        let mut g = Graph::<f64>::new();
        let xv = g.param(x.clone());
        let kv = g.param(k.clone());
        let y = g.conv2d(xv, kv, None, ConvConfig::default()).unwrap();
        let r = g.relu(y).unwrap();
        let m = g.mul(r, xv).unwrap();
        let s = g.slice_channels(m, 1, 2).unwrap();
        let c = g.concat_channels(&[s, xv]).unwrap();
        let l = g.log_softmax(c, 1).unwrap();
        let a = g.abs(l).unwrap();
        let sc = g.scale(a, 0.5).unwrap();
        let red = g.mean(sc, &[1]).unwrap();
        let total = g.sum_all(red).unwrap();
        g.backward(total).unwrap();
        prop_assert_eq!(g.value(xv), &x);
        prop_assert_eq!(g.value(kv), &k);
    }
}
