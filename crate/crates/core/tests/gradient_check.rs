//! Finite-difference oracles for every differentiable operation.
//!
//! The analytic gradients from the tape are compared against central
//! differences computed by re-running the forward pass — an evaluation path
//! that never touches the backward code.

use std::sync::Arc;

use aq_core::dataset::IMG_PIXELS;
use aq_core::graph::Graph;
use aq_core::model::build_lenet;
use aq_core::rng::Rng;
use aq_core::synth;
use aq_core::tensor::Tensor;

const FD_STEP: f64 = 1e-5;

/// Central difference of a scalar function at every coordinate of `x`.
fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let plus = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * FD_STEP));
    }
    grad
}

fn assert_close(analytic: &[f64], numeric: &[f64], rel_tol: f64, context: &str) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        let ok = (a - n).abs() <= rel_tol * scale || (a - n).abs() <= 1e-9;
        assert!(ok, "{context}[{i}]: analytic {a} vs numeric {n}");
    }
}

fn random_vec(rng: &mut Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.range_f64(lo, hi)).collect()
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = Rng::new(11);
    let x0 = random_vec(&mut rng, 25, -1.0, 1.0);
    let k0 = random_vec(&mut rng, 2 * 9, -1.0, 1.0);
    let b0 = random_vec(&mut rng, 2, -0.5, 0.5);

    let eval = |x: &[f64], k: &[f64], b: &[f64]| -> f64 {
        let mut g = Graph::new();
        let xn = g.input(Tensor::new(vec![1, 1, 5, 5], x.to_vec()).unwrap());
        let kn = g.input(Tensor::new(vec![2, 1, 3, 3], k.to_vec()).unwrap());
        let bn = g.input(Tensor::new(vec![2], b.to_vec()).unwrap());
        let c = g.conv2d(xn, kn, bn).unwrap();
        let s = g.sum(c);
        g.value(s).data()[0]
    };

    let mut g = Graph::new();
    let xn = g.input(Tensor::new(vec![1, 1, 5, 5], x0.clone()).unwrap());
    let kn = g.input(Tensor::new(vec![2, 1, 3, 3], k0.clone()).unwrap());
    let bn = g.input(Tensor::new(vec![2], b0.clone()).unwrap());
    let c = g.conv2d(xn, kn, bn).unwrap();
    let s = g.sum(c);
    g.backward(s).unwrap();

    assert_close(
        g.grad(xn).unwrap().data(),
        &numeric_grad(|x| eval(x, &k0, &b0), &x0),
        1e-6,
        "conv d/dx",
    );
    assert_close(
        g.grad(kn).unwrap().data(),
        &numeric_grad(|k| eval(&x0, k, &b0), &k0),
        1e-6,
        "conv d/dk",
    );
    assert_close(
        g.grad(bn).unwrap().data(),
        &numeric_grad(|b| eval(&x0, &k0, b), &b0),
        1e-6,
        "conv d/db",
    );
}

#[test]
fn conv2d_matches_quadruple_loop_reference_exactly_on_integers() {
    // Independent reference: four nested loops, no im2col, no GEMM. Integer
    // values keep every product exact, so equality is bitwise.
    fn reference_conv(
        x: &[f64],
        k: &[f64],
        b: &[f64],
        (n, c, h, w): (usize, usize, usize, usize),
        (ko, kh, kw): (usize, usize, usize),
    ) -> Vec<f64> {
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0; n * ko * oh * ow];
        for img in 0..n {
            for oc in 0..ko {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let xv = x[((img * c + ic) * h + oy + dy) * w + ox + dx];
                                    let kv = k[((oc * c + ic) * kh + dy) * kw + dx];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out[((img * ko + oc) * oh + oy) * ow + ox] = acc + b[oc];
                    }
                }
            }
        }
        out
    }

    let mut rng = Rng::new(21);
    let dims = (2usize, 3usize, 7usize, 6usize);
    let kdims = (4usize, 3usize, 2usize);
    let x: Vec<f64> = (0..dims.0 * dims.1 * dims.2 * dims.3)
        .map(|_| (rng.below(17) as f64) - 8.0)
        .collect();
    let k: Vec<f64> = (0..kdims.0 * dims.1 * kdims.1 * kdims.2)
        .map(|_| (rng.below(9) as f64) - 4.0)
        .collect();
    let b: Vec<f64> = (0..kdims.0).map(|_| (rng.below(5) as f64) - 2.0).collect();

    let mut g = Graph::new();
    let xn = g.input(Tensor::new(vec![dims.0, dims.1, dims.2, dims.3], x.clone()).unwrap());
    let kn = g.input(Tensor::new(vec![kdims.0, dims.1, kdims.1, kdims.2], k.clone()).unwrap());
    let bn = g.input(Tensor::new(vec![kdims.0], b.clone()).unwrap());
    let c = g.conv2d(xn, kn, bn).unwrap();

    let expect = reference_conv(&x, &k, &b, dims, kdims);
    assert_eq!(g.value(c).data(), &expect[..]);
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = Rng::new(12);
    let x0 = random_vec(&mut rng, 2 * 4, -1.0, 1.0);
    let w0 = random_vec(&mut rng, 4 * 3, -1.0, 1.0);
    let b0 = random_vec(&mut rng, 3, -0.5, 0.5);

    let eval = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
        let mut g = Graph::new();
        let xn = g.input(Tensor::new(vec![2, 4], x.to_vec()).unwrap());
        let wn = g.input(Tensor::new(vec![4, 3], w.to_vec()).unwrap());
        let bn = g.input(Tensor::new(vec![3], b.to_vec()).unwrap());
        let d = g.dense(xn, wn, bn).unwrap();
        let s = g.sum(d);
        g.value(s).data()[0]
    };

    let mut g = Graph::new();
    let xn = g.input(Tensor::new(vec![2, 4], x0.clone()).unwrap());
    let wn = g.input(Tensor::new(vec![4, 3], w0.clone()).unwrap());
    let bn = g.input(Tensor::new(vec![3], b0.clone()).unwrap());
    let d = g.dense(xn, wn, bn).unwrap();
    let s = g.sum(d);
    g.backward(s).unwrap();

    assert_close(g.grad(xn).unwrap().data(), &numeric_grad(|x| eval(x, &w0, &b0), &x0), 1e-6, "dense d/dx");
    assert_close(g.grad(wn).unwrap().data(), &numeric_grad(|w| eval(&x0, w, &b0), &w0), 1e-6, "dense d/dw");
    assert_close(g.grad(bn).unwrap().data(), &numeric_grad(|b| eval(&x0, &w0, b), &b0), 1e-6, "dense d/db");
}

#[test]
fn relu_gradient_matches_away_from_kink() {
    let mut rng = Rng::new(13);
    // Keep every coordinate at least 1e-3 from the kink.
    let x0: Vec<f64> = (0..32)
        .map(|_| {
            let v = rng.range_f64(0.01, 1.0);
            if rng.next_f64() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();

    let eval = |x: &[f64]| -> f64 {
        let mut g = Graph::new();
        let xn = g.input(Tensor::new(vec![32], x.to_vec()).unwrap());
        let r = g.relu(xn);
        let s = g.sum(r);
        g.value(s).data()[0]
    };

    let mut g = Graph::new();
    let xn = g.input(Tensor::new(vec![32], x0.clone()).unwrap());
    let r = g.relu(xn);
    let s = g.sum(r);
    g.backward(s).unwrap();
    assert_close(g.grad(xn).unwrap().data(), &numeric_grad(eval, &x0), 1e-6, "relu d/dx");
}

#[test]
fn softmax_cross_entropy_gradient_matches() {
    let mut rng = Rng::new(14);
    let logits0 = random_vec(&mut rng, 3 * 10, -2.0, 2.0);
    let labels = [1u8, 7, 4];

    let eval = |l: &[f64]| -> f64 {
        let mut g = Graph::new();
        let ln = g.input(Tensor::new(vec![3, 10], l.to_vec()).unwrap());
        let loss = g.softmax_cross_entropy(ln, &labels).unwrap();
        g.value(loss).data()[0]
    };

    let mut g = Graph::new();
    let ln = g.input(Tensor::new(vec![3, 10], logits0.clone()).unwrap());
    let loss = g.softmax_cross_entropy(ln, &labels).unwrap();
    g.backward(loss).unwrap();
    assert_close(g.grad(ln).unwrap().data(), &numeric_grad(eval, &logits0), 1e-6, "xent d/dlogits");
}

#[test]
fn maxpool_gradient_matches_away_from_ties() {
    let mut rng = Rng::new(15);
    // Distinct values so no window is within 1e-3 of a tie.
    let mut x0: Vec<f64> = (0..16).map(|i| i as f64 * 0.13).collect();
    rng.shuffle(&mut x0);

    let eval = |x: &[f64]| -> f64 {
        let mut g = Graph::new();
        let xn = g.input(Tensor::new(vec![1, 1, 4, 4], x.to_vec()).unwrap());
        let p = g.maxpool2x2(xn).unwrap();
        let s = g.sum(p);
        g.value(s).data()[0]
    };

    let mut g = Graph::new();
    let xn = g.input(Tensor::new(vec![1, 1, 4, 4], x0.clone()).unwrap());
    let p = g.maxpool2x2(xn).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert_close(g.grad(xn).unwrap().data(), &numeric_grad(eval, &x0), 1e-6, "pool d/dx");
}

#[test]
fn full_network_input_gradient_matches_on_sampled_pixels() {
    // End-to-end check through conv/pool/dense/relu/xent on a real digit.
    let model = build_lenet(77);
    let ds = synth::small_dataset(1, 5).to_unit();
    let image = &ds.images()[0];
    let label = image.label().unwrap();

    let analytic = model.input_gradient(image, label).unwrap();

    let eval = |pixels: &[f64]| -> f64 {
        let img = aq_core::dataset::Image::new(
            pixels.to_vec(),
            aq_core::dataset::Scale::Unit,
            Some(label),
        )
        .unwrap();
        let pred = model.predict(&img).unwrap();
        // -log softmax[label], computed from the returned probabilities.
        -pred.probabilities[label as usize].ln()
    };

    let mut rng = Rng::new(99);
    let base = image.pixels().to_vec();
    let mut checked = 0;
    while checked < 20 {
        let idx = rng.below(IMG_PIXELS);
        // Stay inside the valid range so clipping never bites.
        if base[idx] < 2.0 * FD_STEP || base[idx] > 1.0 - 2.0 * FD_STEP {
            continue;
        }
        let mut probe = base.clone();
        probe[idx] = base[idx] + FD_STEP;
        let plus = eval(&probe);
        probe[idx] = base[idx] - FD_STEP;
        let minus = eval(&probe);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic_v = analytic.data()[idx];
        let scale = analytic_v.abs().max(numeric.abs());
        assert!(
            (analytic_v - numeric).abs() <= 1e-4 * scale || (analytic_v - numeric).abs() <= 1e-8,
            "pixel {idx}: analytic {analytic_v} vs numeric {numeric}"
        );
        checked += 1;
    }
}

#[test]
fn sampled_coordinates_pass_rate_at_least_95_percent() {
    // The blanket invariant: over a mixed graph, at least 95% of sampled
    // coordinates agree within 1e-4 relative, excluding coordinates within
    // 1e-3 of a relu kink or pool tie. The fixture seed places every relu
    // input and pool gap well clear of 1e-3 (asserted below), so nothing is
    // excluded and the bar is effectively 100%.
    let mut rng = Rng::new(16);
    let x0 = random_vec(&mut rng, 64, -1.0, 1.0);
    let k0 = random_vec(&mut rng, 18, -1.0, 1.0);
    let b0 = random_vec(&mut rng, 2, -0.2, 0.2);
    let labels = [3u8];

    let mut g = Graph::new();
    let xn = g.input(Tensor::new(vec![1, 1, 8, 8], x0.clone()).unwrap());
    let kn = g.input(Tensor::new(vec![2, 1, 3, 3], k0.clone()).unwrap());
    let bn = g.input(Tensor::new(vec![2], b0.clone()).unwrap());
    let c = g.conv2d(xn, kn, bn).unwrap();
    let relu_in = g.value(c).data().to_vec();
    let r = g.relu(c);
    let p = g.maxpool2x2(r).unwrap();
    let f = g.flatten(p);
    let wn = g.input(Tensor::new(vec![18, 10], vec![0.07; 180]).unwrap());
    let b2 = g.input(Tensor::new(vec![10], vec![0.0; 10]).unwrap());
    let d = g.dense(f, wn, b2).unwrap();
    let loss = g.softmax_cross_entropy(d, &labels).unwrap();
    g.backward(loss).unwrap();
    let analytic_x = g.grad(xn).unwrap().data().to_vec();
    let analytic_k = g.grad(kn).unwrap().data().to_vec();

    // Fixture sanity: no relu input near its kink, no pool window near a tie.
    assert!(relu_in.iter().all(|v| v.abs() > 1e-3), "fixture has a near-kink relu input");
    let relu_out: Vec<f64> = relu_in.iter().map(|&v| v.max(0.0)).collect();
    for ch in 0..2 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut vals = [0.0f64; 4];
                for (slot, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    vals[slot] = relu_out[ch * 36 + (2 * oy + dy) * 6 + 2 * ox + dx];
                }
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                assert!(
                    vals[0] == 0.0 || vals[0] - vals[1] > 1e-3,
                    "fixture has a near-tie pool window"
                );
            }
        }
    }

    let scalar_eval = |x: &[f64], k: &[f64]| -> f64 {
        let mut g = Graph::new();
        let xn = g.input(Tensor::new(vec![1, 1, 8, 8], x.to_vec()).unwrap());
        let kn = g.input(Tensor::new(vec![2, 1, 3, 3], k.to_vec()).unwrap());
        let bn = g.input(Tensor::new(vec![2], b0.clone()).unwrap());
        let c = g.conv2d(xn, kn, bn).unwrap();
        let r = g.relu(c);
        let p = g.maxpool2x2(r).unwrap();
        let f = g.flatten(p);
        let wn = g.input(Tensor::new(vec![18, 10], vec![0.07; 180]).unwrap());
        let b2 = g.input(Tensor::new(vec![10], vec![0.0; 10]).unwrap());
        let d = g.dense(f, wn, b2).unwrap();
        let loss = g.softmax_cross_entropy(d, &labels).unwrap();
        g.value(loss).data()[0]
    };

    let mut sampled = 0;
    let mut passed = 0;
    for i in 0..x0.len() {
        let mut probe = x0.clone();
        probe[i] = x0[i] + FD_STEP;
        let plus = scalar_eval(&probe, &k0);
        probe[i] = x0[i] - FD_STEP;
        let minus = scalar_eval(&probe, &k0);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic_x[i];
        let scale = a.abs().max(numeric.abs());
        sampled += 1;
        if (a - numeric).abs() <= 1e-4 * scale || (a - numeric).abs() <= 1e-8 {
            passed += 1;
        }
    }
    for i in 0..k0.len() {
        let mut probe = k0.clone();
        probe[i] = k0[i] + FD_STEP;
        let plus = scalar_eval(&x0, &probe);
        probe[i] = k0[i] - FD_STEP;
        let minus = scalar_eval(&x0, &probe);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic_k[i];
        let scale = a.abs().max(numeric.abs());
        sampled += 1;
        if (a - numeric).abs() <= 1e-4 * scale || (a - numeric).abs() <= 1e-8 {
            passed += 1;
        }
    }
    assert!(
        passed as f64 >= 0.95 * sampled as f64,
        "{passed}/{sampled} coordinates passed"
    );
}

#[test]
fn forward_and_backward_stay_finite() {
    let mut rng = Rng::new(17);
    for _ in 0..5 {
        let x0 = random_vec(&mut rng, IMG_PIXELS, 0.0, 1.0);
        let model = build_lenet(rng.next_u64());
        let img =
            aq_core::dataset::Image::new(x0, aq_core::dataset::Scale::Unit, Some(0)).unwrap();
        let grad = model.input_gradient(&img, 0).unwrap();
        assert!(grad.is_finite());
        let pred = model.predict(&img).unwrap();
        assert!(pred.logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn shared_parameters_are_readable_from_parallel_graphs() {
    // Two graphs holding the same Arc'd parameter produce identical values.
    let weights = Arc::new(Tensor::new(vec![2, 2], vec![0.5, -0.25, 1.0, 0.75]).unwrap());
    let run = || {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 2], vec![0.3, 0.9]).unwrap());
        let w = g.param(Arc::clone(&weights));
        let b = g.input(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let d = g.dense(x, w, b).unwrap();
        g.value(d).data().to_vec()
    };
    let (a, b) = rayon::join(run, run);
    assert_eq!(a, b);
}
