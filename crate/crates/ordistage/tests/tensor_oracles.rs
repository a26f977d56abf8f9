//! Operation-level oracles for the autodiff engine: hand counts, brute-force
//! reference kernels, dense operator matrices, and finite differences.

use ordistage::tensor::{finite_diff_check, Tape, Tensor, UpsampleMode, FD_DEFAULT_H};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Triple-loop matrix product, written independently of the tape kernel.
fn matmul_reference(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Nested-loop cross-correlation reference.
#[allow(clippy::too_many_arguments)]
fn conv2d_reference(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - 3) / stride + 1;
    let ow = (wd + 2 * pad - 3) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for oc in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[oc];
                for ic in 0..ci {
                    for u in 0..3 {
                        for v in 0..3 {
                            let si = i as isize * stride as isize + u as isize - pad as isize;
                            let sj = j as isize * stride as isize + v as isize - pad as isize;
                            if si >= 0 && si < h as isize && sj >= 0 && sj < wd as isize {
                                acc += x[(ic * h + si as usize) * wd + sj as usize]
                                    * w[((oc * ci + ic) * 3 + u) * 3 + v];
                            }
                        }
                    }
                }
                out[(oc * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

fn assert_close(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "{what}: element {i} differs: {a} vs {e}"
        );
    }
}

// ── matmul ──────────────────────────────────────────────────────────

#[test]
fn matmul_identity_returns_operand() {
    let tape = Tape::no_grad();
    let eye = Tensor::from_vec(
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        &[3, 3],
    )
    .unwrap();
    let a = Tensor::from_vec((1..=9).map(f64::from).collect(), &[3, 3]).unwrap();
    let out = tape.matmul(&eye, &a).unwrap();
    assert_eq!(out.to_vec(), a.to_vec());
}

#[test]
fn matmul_hand_sum() {
    let tape = Tape::no_grad();
    let a = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
    let b = Tensor::from_vec(vec![1.0, 1.0], &[2, 1]).unwrap();
    let out = tape.matmul(&a, &b).unwrap();
    assert_eq!(out.to_vec(), vec![3.0, 7.0]);
}

#[test]
fn matmul_matches_triple_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let a = rand_vec(&mut rng, 5 * 4);
        let b = rand_vec(&mut rng, 4 * 3);
        let tape = Tape::no_grad();
        let ta = Tensor::from_vec(a.clone(), &[5, 4]).unwrap();
        let tb = Tensor::from_vec(b.clone(), &[4, 3]).unwrap();
        let out = tape.matmul(&ta, &tb).unwrap();
        assert_close(&out.to_vec(), &matmul_reference(&a, &b, 5, 4, 3), 1e-12, "matmul");
    }
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let tape = Tape::no_grad();
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 2]);
    assert!(tape.matmul(&a, &b).is_err());
}

// ── conv2d ──────────────────────────────────────────────────────────

#[test]
fn conv2d_overlap_counts() {
    let tape = Tape::no_grad();
    let x = Tensor::full(&[1, 3, 3], 1.0);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let b = Tensor::zeros(&[1]);
    let out = tape.conv2d(&x, &w, &b, 1, 1).unwrap();
    assert_eq!(out.shape(), &[1, 3, 3]);
    let d = out.to_vec();
    assert_eq!(d[4], 9.0, "center counts all nine taps");
    assert_eq!(d[0], 4.0, "corner counts four taps");
    assert_eq!(d[8], 4.0);
}

#[test]
fn conv2d_zero_kernel_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(rand_vec(&mut rng, 2 * 5 * 5), &[2, 5, 5]).unwrap();
    let w = Tensor::zeros(&[3, 2, 3, 3]);
    let b = Tensor::zeros(&[3]);
    let out = tape.conv2d(&x, &w, &b, 1, 1).unwrap();
    assert!(out.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_matches_nested_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let x = rand_vec(&mut rng, 2 * 8 * 8);
        let w = rand_vec(&mut rng, 4 * 2 * 3 * 3);
        let b = rand_vec(&mut rng, 4);
        let tape = Tape::no_grad();
        let tx = Tensor::from_vec(x.clone(), &[2, 8, 8]).unwrap();
        let tw = Tensor::from_vec(w.clone(), &[4, 2, 3, 3]).unwrap();
        let tb = Tensor::from_vec(b.clone(), &[4]).unwrap();
        let out = tape.conv2d(&tx, &tw, &tb, 2, 1).unwrap();
        assert_eq!(out.shape(), &[4, 4, 4]);
        let expected = conv2d_reference(&x, &w, &b, 2, 8, 8, 4, 2, 1);
        assert_close(&out.to_vec(), &expected, 1e-12, "conv2d");
    }
}

#[test]
fn conv2d_rejects_empty_output() {
    let tape = Tape::no_grad();
    let x = Tensor::zeros(&[1, 2, 2]);
    let w = Tensor::zeros(&[1, 1, 3, 3]);
    let b = Tensor::zeros(&[1]);
    assert!(tape.conv2d(&x, &w, &b, 1, 0).is_err());
}

// ── elementwise ─────────────────────────────────────────────────────

#[test]
fn relu_values() {
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
    assert_eq!(tape.relu(&x).unwrap().to_vec(), vec![0.0, 0.0, 2.0]);
}

#[test]
fn sigmoid_at_zero() {
    let tape = Tape::no_grad();
    let x = Tensor::scalar(0.0);
    assert_eq!(tape.sigmoid(&x).unwrap().item(), 0.5);
}

#[test]
fn gelu_exact_gaussian_cdf_at_one() {
    // oracle: x * Phi(x) with Phi(1) = 0.5 * (1 + erf(1/sqrt(2)))
    let expected = 0.5 * (1.0 + libm::erf(1.0 / std::f64::consts::SQRT_2));
    let tape = Tape::no_grad();
    let x = Tensor::scalar(1.0);
    let y = tape.gelu(&x).unwrap().item();
    assert!((y - expected).abs() < 1e-15, "gelu(1) = {y}, oracle {expected}");
    // frozen high-precision value of the exact Gaussian-CDF form
    assert!((y - 0.8413447460685429).abs() < 1e-12);
}

#[test]
fn elementwise_rejects_shape_mismatch() {
    let tape = Tape::no_grad();
    let a = Tensor::zeros(&[2, 2]);
    let b = Tensor::zeros(&[4]);
    assert!(tape.add(&a, &b).is_err());
}

#[test]
fn scalar_broadcast_works_both_sides() {
    let tape = Tape::no_grad();
    let a = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3]).unwrap();
    let s = Tensor::scalar(2.0);
    assert_eq!(tape.mul(&a, &s).unwrap().to_vec(), vec![2.0, 4.0, 6.0]);
    assert_eq!(tape.div(&a, &s).unwrap().to_vec(), vec![0.5, 1.0, 1.5]);
    assert_eq!(tape.sub(&s, &a).unwrap().to_vec(), vec![1.0, 0.0, -1.0]);
}

// ── softmax ─────────────────────────────────────────────────────────

#[test]
fn softmax_symmetry() {
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(vec![0.0, 0.0], &[2]).unwrap();
    assert_eq!(tape.softmax(&x, 0).unwrap().to_vec(), vec![0.5, 0.5]);
}

#[test]
fn softmax_no_overflow() {
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(vec![1000.0, 0.0], &[2]).unwrap();
    let y = tape.softmax(&x, 0).unwrap().to_vec();
    assert!((y[0] - 1.0).abs() < 1e-12);
    assert!(y[1].abs() < 1e-12);
}

#[test]
fn softmax_direct_exp_sum_oracle() {
    let logits = [1.0f64, 2.0, 3.0];
    let exps: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    let denom: f64 = exps.iter().sum();
    let expected: Vec<f64> = exps.iter().map(|e| e / denom).collect();
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(logits.to_vec(), &[3]).unwrap();
    let y = tape.softmax(&x, 0).unwrap().to_vec();
    assert_close(&y, &expected, 1e-15, "softmax");
    // frozen values from the direct computation
    assert_close(
        &y,
        &[0.09003057317038046, 0.24472847105479764, 0.6652409557748219],
        1e-12,
        "softmax frozen",
    );
}

#[test]
fn softmax_rows_sum_to_one_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let x = Tensor::from_vec(rand_vec(&mut rng, 6 * 5), &[6, 5]).unwrap();
        let tape = Tape::no_grad();
        let y = tape.softmax(&x, 1).unwrap();
        let d = y.to_vec();
        for r in 0..6 {
            let s: f64 = d[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(d[r * 5..(r + 1) * 5].iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

// ── layer norm ──────────────────────────────────────────────────────

#[test]
fn layer_norm_constant_row_is_zero() {
    let tape = Tape::no_grad();
    let x = Tensor::full(&[4], 3.7);
    let gain = Tensor::full(&[4], 1.0);
    let bias = Tensor::zeros(&[4]);
    let y = tape.layer_norm(&x, &gain, &bias, 1e-5).unwrap();
    assert!(y.to_vec().iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn layer_norm_unit_variance_row() {
    // closed form: (x - mu)/sqrt(sigma^2 + eps) with mu=0, sigma^2=1
    let eps = 1e-5;
    let expected = 1.0 / (1.0f64 + eps).sqrt();
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(vec![1.0, -1.0], &[2]).unwrap();
    let gain = Tensor::full(&[2], 1.0);
    let bias = Tensor::zeros(&[2]);
    let y = tape.layer_norm(&x, &gain, &bias, eps).unwrap().to_vec();
    assert!((y[0] - expected).abs() < 1e-15);
    assert!((y[1] + expected).abs() < 1e-15);
    assert!((y[0] - 1.0).abs() < 1e-4, "within eps effect of the input");
}

#[test]
fn layer_norm_zero_gain_broadcasts_bias() {
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(vec![0.3, 1.8, -2.2, 0.0, 5.5, 1.0], &[2, 3]).unwrap();
    let gain = Tensor::zeros(&[3]);
    let bias = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3]).unwrap();
    let y = tape.layer_norm(&x, &gain, &bias, 1e-5).unwrap().to_vec();
    assert_eq!(y, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
}

// ── upsample ────────────────────────────────────────────────────────

#[test]
fn upsample_constant_stays_constant() {
    for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
        let tape = Tape::no_grad();
        let x = Tensor::full(&[1, 3, 3], 0.4);
        let y = tape.upsample2x(&x, mode).unwrap();
        assert_eq!(y.shape(), &[1, 6, 6]);
        assert!(y.to_vec().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }
}

#[test]
fn upsample_single_pixel() {
    for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
        let tape = Tape::no_grad();
        let x = Tensor::full(&[1, 1, 1], 0.9);
        let y = tape.upsample2x(&x, mode).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.to_vec().iter().all(|&v| (v - 0.9).abs() < 1e-15));
    }
}

#[test]
fn upsample_bilinear_matches_dense_matrix_oracle() {
    // Build the 16x4 interpolation matrix straight from the sampling rule:
    // output i samples input at (i + 0.5)/2 - 0.5, clamped, linear weights.
    let weights_1d = |n: usize, i: usize| -> Vec<f64> {
        let src = (i as f64 + 0.5) / 2.0 - 0.5;
        let i0 = src.floor();
        let frac = src - i0;
        let a = (i0.max(0.0) as usize).min(n - 1);
        let b = ((i0 as isize + 1).max(0) as usize).min(n - 1);
        let mut w = vec![0.0; n];
        w[a] += 1.0 - frac;
        w[b] += frac;
        w
    };
    let x = vec![0.0, 1.0, 2.0, 3.0]; // 2x2 ramp
    let mut expected = vec![0.0; 16];
    for i in 0..4 {
        let wr = weights_1d(2, i);
        for j in 0..4 {
            let wc = weights_1d(2, j);
            let mut acc = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    acc += wr[r] * wc[c] * x[r * 2 + c];
                }
            }
            expected[i * 4 + j] = acc;
        }
    }
    let tape = Tape::no_grad();
    let t = Tensor::from_vec(x, &[1, 2, 2]).unwrap();
    let y = tape.upsample2x(&t, UpsampleMode::Bilinear).unwrap();
    assert_close(&y.to_vec(), &expected, 1e-12, "bilinear upsample");
}

// ── dropout ─────────────────────────────────────────────────────────

#[test]
fn dropout_identity_cases() {
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = tape.dropout(&x, 0.0, true, &mut rng).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
    let y = tape.dropout(&x, 0.9, false, &mut rng).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn dropout_rejects_bad_probability() {
    let tape = Tape::no_grad();
    let x = Tensor::zeros(&[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(tape.dropout(&x, 1.0, true, &mut rng).is_err());
    assert!(tape.dropout(&x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_statistics() {
    let n = 100_000;
    let tape = Tape::no_grad();
    let x = Tensor::full(&[n], 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let y = tape.dropout(&x, 0.5, true, &mut rng).unwrap();
    let d = y.to_vec();
    let survivors = d.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    assert!((survivors - 0.5).abs() < 0.01, "survivor fraction {survivors}");
    let mean: f64 = d.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean preserved: {mean}");
}

// ── backward ────────────────────────────────────────────────────────

#[test]
fn backward_of_matmul_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let a = Tensor::param(rand_vec(&mut rng, 6), &[2, 3]).unwrap();
    let b = Tensor::from_vec(rand_vec(&mut rng, 12), &[3, 4]).unwrap();
    let err = finite_diff_check(
        |t, x| {
            let prod = t.matmul(x, &b)?;
            t.sum_all(&prod)
        },
        &a,
        FD_DEFAULT_H,
    )
    .unwrap();
    assert!(err < 1e-6, "matmul-sum fd error {err}");
}

// ── patchify / shape ops ───────────────────────────────────────────

#[test]
fn patchify_partitions_and_reassembles_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let img = rand_vec(&mut rng, 8 * 8);
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(img.clone(), &[1, 8, 8]).unwrap();
    let patches = tape.patchify(&x, 4).unwrap();
    assert_eq!(patches.shape(), &[4, 16]);
    let back = ordistage::tensor::unpatchify(&patches, 4, 8, 8).unwrap();
    assert_eq!(back.to_vec(), img);
}

#[test]
fn patchify_rejects_non_divisible() {
    let tape = Tape::no_grad();
    let x = Tensor::zeros(&[1, 6, 6]);
    assert!(tape.patchify(&x, 4).is_err());
}

#[test]
fn slice_and_concat_invert() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let tape = Tape::no_grad();
    let x = Tensor::from_vec(rand_vec(&mut rng, 4 * 6), &[4, 6]).unwrap();
    let top = tape.slice_rows(&x, 0, 1).unwrap();
    let rest = tape.slice_rows(&x, 1, 3).unwrap();
    let joined = tape.concat_rows(&[&top, &rest]).unwrap();
    assert_eq!(joined.to_vec(), x.to_vec());
    let left = tape.slice_cols(&x, 0, 2).unwrap();
    let right = tape.slice_cols(&x, 2, 4).unwrap();
    let joined = tape.concat_cols(&[&left, &right]).unwrap();
    assert_eq!(joined.to_vec(), x.to_vec());
}

// ── per-op gradient fidelity over many seeds ───────────────────────

#[test]
fn gradient_fidelity_every_op_twenty_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let x = Tensor::param(rand_vec(&mut rng, 3 * 4), &[3, 4]).unwrap();
        let w = Tensor::from_vec(rand_vec(&mut rng, 4 * 2), &[4, 2]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let h = t.matmul(x, &w)?;
                let h = t.gelu(&h)?;
                t.sum_all(&h)
            },
            &x,
            FD_DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "matmul+gelu seed {seed}: {err}");

        let x = Tensor::param(rand_vec(&mut rng, 2 * 6 * 6), &[2, 6, 6]).unwrap();
        let w = Tensor::from_vec(rand_vec(&mut rng, 3 * 2 * 9), &[3, 2, 3, 3]).unwrap();
        let b = Tensor::from_vec(rand_vec(&mut rng, 3), &[3]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let h = t.conv2d(x, &w, &b, 2, 1)?;
                let h = t.relu(&h)?;
                t.sum_all(&h)
            },
            &x,
            FD_DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "conv+relu seed {seed}: {err}");

        let x = Tensor::param(rand_vec(&mut rng, 5 * 4), &[5, 4]).unwrap();
        let gain = Tensor::from_vec(rand_vec(&mut rng, 4), &[4]).unwrap();
        let bias = Tensor::from_vec(rand_vec(&mut rng, 4), &[4]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let h = t.layer_norm(x, &gain, &bias, 1e-5)?;
                let h = t.sigmoid(&h)?;
                t.mean_all(&h)
            },
            &x,
            FD_DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "layer_norm+sigmoid seed {seed}: {err}");

        let x = Tensor::param(rand_vec(&mut rng, 4 * 5), &[4, 5]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let s = t.softmax(x, 1)?;
                let sq = t.mul(&s, &s)?;
                t.sum_all(&sq)
            },
            &x,
            FD_DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "softmax seed {seed}: {err}");

        let x = Tensor::param(rand_vec(&mut rng, 1 * 3 * 3), &[1, 3, 3]).unwrap();
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let err = finite_diff_check(
                |t, x| {
                    let u = t.upsample2x(x, mode)?;
                    let sq = t.mul(&u, &u)?;
                    t.sum_all(&sq)
                },
                &x,
                FD_DEFAULT_H,
            )
            .unwrap();
            assert!(err < 1e-4, "upsample seed {seed}: {err}");
        }

        let x = Tensor::param(rand_vec(&mut rng, 7), &[7]).unwrap();
        let label = (seed % 7) as usize;
        let err = finite_diff_check(|t, x| t.cross_entropy(x, label), &x, FD_DEFAULT_H).unwrap();
        assert!(err < 1e-4, "cross_entropy seed {seed}: {err}");

        let x = Tensor::param(rand_vec(&mut rng, 3 * 4 * 4), &[3, 4, 4]).unwrap();
        let probe = Tensor::from_vec(rand_vec(&mut rng, 3 * 4 * 4), &[3, 4, 4]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let n = t.unit_normalize_channels(x)?;
                let weighted = t.mul(&n, &probe)?;
                t.sum_all(&weighted)
            },
            &x,
            FD_DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "unit_normalize seed {seed}: {err}");

        let x = Tensor::param(
            rand_vec(&mut rng, 6).iter().map(|v| v + 2.5).collect(),
            &[6],
        )
        .unwrap();
        let err = finite_diff_check(
            |t, x| {
                let l = t.ln(x)?;
                let r = t.sqrt(x)?;
                let s = t.add(&l, &r)?;
                t.sum_all(&s)
            },
            &x,
            FD_DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "ln+sqrt seed {seed}: {err}");
    }
}

#[test]
fn determinism_same_seed_bitwise_identical() {
    let run = || -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(555);
        let tape = Tape::new();
        let x = Tensor::param(rand_vec(&mut rng, 4 * 4), &[4, 4]).unwrap();
        let w = Tensor::param(rand_vec(&mut rng, 4 * 4), &[4, 4]).unwrap();
        let h = tape.matmul(&x, &w).unwrap();
        let h = tape.gelu(&h).unwrap();
        let h = tape.dropout(&h, 0.3, true, &mut rng).unwrap();
        let loss = tape.mean_all(&h).unwrap();
        tape.backward(&loss).unwrap();
        (loss.to_vec(), x.grad().unwrap())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}
