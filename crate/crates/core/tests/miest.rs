mod common;

use common::{encoder_batch, numerical_gradients, pointwise_information, relative_error};
use predinfo::bho::{window_covariances, BhoParams, WindowSpec};
use predinfo::diffcore::{ParamSet, Tensor};
use predinfo::gib::{encoder_plane_point, ib_spectrum, optimal_encoder_at};
use predinfo::miest::*;
use predinfo::rng::{derive_seed, normal, normals, rng_from_seed};
use predinfo::rnn::ReprBatch;
use proptest::prelude::*;

fn bho_joint() -> predinfo::gib::GaussianJoint {
    let spec = WindowSpec { t_past: 18, t_future: 18, total_len: 36, split_index: 18 };
    window_covariances(&BhoParams::paper(), &spec).unwrap()
}

fn matrix(k: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    Tensor::matrix(k, k, (0..k * k).map(|e| f(e / k, e % k)).collect()).unwrap()
}

fn permute(t: &Tensor, perm: &[usize]) -> Tensor {
    matrix(t.rows(), |i, j| t.get(perm[i], perm[j]))
}

/// `(x, z)` with unit variances and correlation `rho`.
fn correlated_pairs(n: usize, rho: f64, seed: u64) -> PairSet {
    let mut rng = rng_from_seed(seed);
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let a = normal(&mut rng);
        let b = normal(&mut rng);
        x.push(a);
        z.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    PairSet::new(Tensor::matrix(n, 1, x).unwrap(), Tensor::matrix(n, 1, z).unwrap()).unwrap()
}

#[test]
fn score_estimators_on_fixed_matrices() {
    let k = 64;
    assert_eq!(infonce(&Tensor::full(&[k, k], 3.7)).unwrap(), 0.0);
    let sat = matrix(k, |i, j| if i == j { 40.0 } else { -40.0 });
    assert!((infonce(&sat).unwrap() - (k as f64).ln()).abs() < 1e-9);
    assert!(nwj(&Tensor::full(&[k, k], 1.0)).unwrap().abs() < 1e-12);
    // S + 1 with S = 0 everywhere is the NWJ all-ones case
    assert!(js(&Tensor::zeros(&[k, k])).unwrap().abs() < 1e-12);

    // huge scores are clamped instead of overflowing
    let big = matrix(4, |i, j| if i == j { 1e3 } else { 800.0 });
    let v = nwj(&big).unwrap();
    assert!((v - (1e3 - (SCORE_CLAMP - 1.0).exp())).abs() < 1e-6 * v.abs());
    assert!(js(&big).unwrap().is_finite());

    let mut bad = Tensor::zeros(&[3, 3]);
    bad.data_mut()[4] = f64::NAN;
    assert!(infonce(&bad).is_err());
    assert!(nwj(&Tensor::zeros(&[1, 1])).is_err());
    assert!(infonce(&Tensor::zeros(&[2, 3])).is_err());
}

#[test]
fn js_discriminator_loss_oracle() {
    let s = matrix(3, |i, j| (i as f64) - 0.5 * j as f64);
    let sp = |x: f64| (1.0 + x.exp()).ln();
    let mut pos = 0.0;
    let mut neg = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                pos += sp(-s.get(i, j)) / 3.0;
            } else {
                neg += sp(s.get(i, j)) / 6.0;
            }
        }
    }
    assert!((js_discriminator_loss(&s).unwrap() - (pos + neg)).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_estimator_properties(seed in any::<u64>(), k in 2usize..24, scale in 0.1f64..20.0, shift in -30.0f64..30.0) {
        let mut rng = rng_from_seed(seed);
        let s = Tensor::matrix(k, k, normals(&mut rng, k * k).iter().map(|v| v * scale).collect()).unwrap();
        let log_k = (k as f64).ln();
        let nce = infonce(&s).unwrap();
        prop_assert!(nce <= log_k + 1e-12);
        prop_assert!((infonce(&s.map(|v| v + shift)).unwrap() - nce).abs() < 1e-9);

        let mut perm: Vec<usize> = (0..k).collect();
        perm.rotate_left((seed % k as u64) as usize);
        perm.swap(0, k - 1);
        let p = permute(&s, &perm);
        prop_assert!((infonce(&p).unwrap() - nce).abs() < 1e-9);
        prop_assert!((nwj(&p).unwrap() - nwj(&s).unwrap()).abs() < 1e-9 * (1.0 + nwj(&s).unwrap().abs()));
        prop_assert!((js(&p).unwrap() - js(&s).unwrap()).abs() < 1e-9 * (1.0 + js(&s).unwrap().abs()));

        let (lo, up) = minibatch_bounds(&s).unwrap();
        prop_assert!(lo <= log_k + 1e-12);
        // each row's own density at least the mean of its others implies the ordering
        let dominant = matrix(k, |i, j| {
            if i != j {
                return s.get(i, j);
            }
            let others: Vec<f64> = (0..k).filter(|&c| c != i).map(|c| s.get(i, c)).collect();
            predinfo::diffcore::lse(&others) - ((k - 1) as f64).ln() + s.get(i, i).abs()
        });
        let (dlo, dup) = minibatch_bounds(&dominant).unwrap();
        prop_assert!(dlo <= dup + 1e-12);
        let (plo, pup) = minibatch_bounds(&p).unwrap();
        prop_assert!((plo - lo).abs() < 1e-9 && (pup - up).abs() < 1e-9);
    }
}

#[test]
fn cond_log_pdf_matrix_matches_direct_density() {
    let mut rng = rng_from_seed(3);
    let (k, d, sigma) = (7, 3, 0.4);
    let z = Tensor::matrix(k, d, normals(&mut rng, k * d)).unwrap();
    let h = Tensor::matrix(k, d, normals(&mut rng, k * d)).unwrap();
    let m = cond_log_pdf_matrix(&z, &h, sigma).unwrap();
    for i in 0..k {
        for j in 0..k {
            let mut lp = 0.0;
            for c in 0..d {
                let r = (z.get(i, c) - h.get(j, c)) / sigma;
                lp += -0.5 * r * r - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            }
            assert!((m.get(i, j) - lp).abs() < 1e-12, "({i},{j})");
        }
    }
    let (lo, up) = minibatch_bounds(&m).unwrap();
    let (slo, sup) = gaussian_minibatch_bounds(&z, &h, sigma).unwrap();
    assert!((lo - slo).abs() < 1e-12 && (up - sup).abs() < 1e-12);
    assert!(cond_log_pdf_matrix(&z, &h, 0.0).is_err());
}

#[test]
fn bound_ordering_is_not_guaranteed_per_batch() {
    // the diagonal is below the off-diagonal mean in both rows
    let logp = Tensor::matrix(2, 2, vec![0.0, 5.0, 5.0, 0.0]).unwrap();
    let (lo, up) = minibatch_bounds(&logp).unwrap();
    let expect_lo = 2f64.ln() - (1.0 + 5f64.exp()).ln();
    assert!((lo - expect_lo).abs() < 1e-12);
    assert!((up + 5.0).abs() < 1e-12);
    assert!(lo > up);
}

#[test]
fn bounds_vanish_without_dependence() {
    // every z_i has the same density under every x_j
    let logp = Tensor::matrix(5, 5, (0..25).map(|e| -((e / 5) as f64)).collect()).unwrap();
    let (lo, up) = minibatch_bounds(&logp).unwrap();
    assert!(lo.abs() < 1e-14 && up.abs() < 1e-14);
    assert!(minibatch_bounds(&Tensor::zeros(&[1, 1])).is_err());
}

#[test]
fn bounds_bracket_optimal_encoder() {
    let joint = bho_joint();
    let spectrum = ib_spectrum(&joint).unwrap();
    let (enc, _) = optimal_encoder_at(&spectrum, 2.0).unwrap();
    let (i_x, _) = encoder_plane_point(&joint, &enc).unwrap();
    assert!((i_x - 2.0).abs() < 1e-9);

    let batch = encoder_batch(&enc, 8192, 11);
    let (lo, up, k) = batched_gaussian_bounds(&batch.z, &batch.h, 1.0, 4096).unwrap();
    assert_eq!(k, 4096);
    // The bounds hold in expectation; their spread over 8192 samples
    // (~0.016 nats) exceeds the gap, so compare against the realised
    // pointwise information of the same samples, whose mean is I exactly.
    let realised = pointwise_information(&enc, &joint, &batch);
    let (cv_lo, cv_up) = (lo - realised + i_x, up - realised + i_x);
    assert!(cv_lo <= i_x && i_x <= cv_up, "{cv_lo} <= {i_x} <= {cv_up}");
    assert!(up - lo < 0.2, "gap {}", up - lo);
    assert!((lo - i_x).abs() < 0.1 && (up - i_x).abs() < 0.1);

    // halving the batch loosens the bounds
    let (lo_k, up_k, _) = batched_gaussian_bounds(&batch.z, &batch.h, 1.0, 2048).unwrap();
    assert!(lo >= lo_k - 0.05);
    assert!(up - lo <= up_k - lo_k + 0.05);
    let (_, _, k_small) = batched_gaussian_bounds(&batch.z.clone(), &batch.h.clone(), 1.0, 1 << 20).unwrap();
    assert_eq!(k_small, 8192);
}

#[test]
fn bounds_never_exceed_log_k_for_near_deterministic_codes() {
    let mut rng = rng_from_seed(5);
    let k = 256;
    let h = Tensor::matrix(k, 2, normals(&mut rng, 2 * k)).unwrap();
    let z = Tensor::matrix(k, 2, h.data().iter().map(|v| v + 1e-6 * normal(&mut rng)).collect()).unwrap();
    let (lo, up) = gaussian_minibatch_bounds(&z, &h, 1e-6).unwrap();
    assert!(lo <= (k as f64).ln());
    assert!((lo - (k as f64).ln()).abs() < 1e-9);
    assert!(up > 100.0);
}

/// `q(y | z) = N(y; a z, s^2)` given as a closed form.
struct ExactConditional {
    a: f64,
    s: f64,
}

impl FutureDecoder for ExactConditional {
    fn log_q(&self, z: &Tensor, y: &Tensor) -> predinfo::Result<Vec<f64>> {
        Ok(z
            .data()
            .iter()
            .zip(y.data())
            .map(|(&z, &y)| {
                let r = (y - self.a * z) / self.s;
                -0.5 * r * r - self.s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect())
    }
}

#[test]
fn barber_agakov_on_linear_gaussian_toy() {
    // z ~ N(0, 1), y = a z + s e: I = 0.5 log(1 + a^2 / s^2)
    let (a, s, n) = (1.3, 0.6, 200_000);
    let mut rng = rng_from_seed(9);
    let zs = normals(&mut rng, n);
    let ys: Vec<f64> = zs.iter().map(|z| a * z + s * normal(&mut rng)).collect();
    let z = Tensor::matrix(n, 1, zs.clone()).unwrap();
    let y = Tensor::matrix(n, 1, ys).unwrap();
    let h_y = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * (a * a + s * s)).ln();
    let exact = 0.5 * (1.0 + a * a / (s * s)).ln();
    // per-sample log q has variance 1/2, so the mean has SE sqrt(0.5 / n)
    let se = (0.5 / n as f64).sqrt();

    let BaBound::Bound(b) = ba_future_bound(&ExactConditional { a, s }, &z, &y, Some(h_y)).unwrap() else {
        panic!("entropy was supplied")
    };
    assert!((b - exact).abs() < 4.0 * se, "{b} vs {exact}");

    let fit = LinearGaussianDecoder::fit(&z, &y).unwrap();
    let BaBound::Bound(bf) = ba_future_bound(&fit, &z, &y, Some(h_y)).unwrap() else { panic!() };
    assert!(bf <= exact + 4.0 * se);
    assert!((bf - exact).abs() < 1e-2);

    // decoder fitted against an unrelated code
    let other = Tensor::matrix(n, 1, normals(&mut rng, n)).unwrap();
    let marg = LinearGaussianDecoder::fit(&other, &y).unwrap();
    let BaBound::Bound(b0) = ba_future_bound(&marg, &other, &y, Some(h_y)).unwrap() else { panic!() };
    assert!(b0 <= 4.0 * se && b0.abs() < 1e-2, "{b0}");

    match ba_future_bound(&fit, &z, &y, None).unwrap() {
        BaBound::CrossEntropyOnly(ce) => assert!((h_y - ce - bf).abs() < 1e-12),
        other => panic!("{other:?}"),
    }
}

#[test]
fn early_stop_rule_replay() {
    let cfg = EarlyStopConfig {
        max_steps: 5000,
        patience: 1000,
        ..EarlyStopConfig::paper()
    };
    let increasing: Vec<(u64, f64)> = (0..=10).map(|i| (i * 500, i as f64 * 0.1)).collect();
    let out = EarlyStopper::replay(&cfg, &increasing).unwrap();
    assert_eq!(out.reason, StopReason::MaxSteps);
    assert_eq!((out.stop_step, out.best_step), (5000, 5000));

    let peaked = [(0, 0.0), (500, 2.0), (1000, 4.0), (1500, 3.5), (2000, 0.9), (2500, 5.0)];
    let out = EarlyStopper::replay(&cfg, &peaked).unwrap();
    assert_eq!(out.reason, StopReason::Drop);
    assert_eq!((out.stop_step, out.best_step, out.best_value), (2000, 1000, 4.0));

    let flat = [(0, 1.0), (500, 0.9), (1000, 0.95), (1500, 2.0)];
    let out = EarlyStopper::replay(&cfg, &flat).unwrap();
    assert_eq!(out.reason, StopReason::Patience);
    assert_eq!((out.stop_step, out.best_step), (1000, 0));

    let mut es = EarlyStopper::new(&cfg);
    assert!(es.observe(0, 1.0).improved);
    assert_eq!(es.observe(500, f64::NAN).stop, Some(StopReason::Drop));
}

fn small_critic() -> CriticConfig {
    CriticConfig {
        layers: vec![5, 4, 3],
        activations: vec![Activation::Relu, Activation::Tanh, Activation::None],
    }
}

#[test]
fn critic_losses_match_estimators_and_gradients() {
    let mut rng = rng_from_seed(21);
    let critic = SeparableCritic::new(small_critic(), 3, 2, &mut rng).unwrap();
    let k = 6;
    let x = Tensor::matrix(k, 3, normals(&mut rng, 3 * k)).unwrap();
    let z = Tensor::matrix(k, 2, normals(&mut rng, 2 * k)).unwrap();
    let s = critic.scores(&x, &z).unwrap();
    // row i scores z_i against every x_j
    let one = critic
        .scores(&Tensor::matrix(1, 3, x.row_slice(4).to_vec()).unwrap(), &Tensor::matrix(1, 2, z.row_slice(1).to_vec()).unwrap())
        .unwrap();
    assert!((s.get(1, 4) - one.get(0, 0)).abs() < 1e-12);

    for (obj, expect) in [
        (CriticObjective::InfoNce, (k as f64).ln() - infonce(&s).unwrap()),
        (CriticObjective::Nwj, -nwj(&s).unwrap()),
        (CriticObjective::Js, js_discriminator_loss(&s).unwrap()),
    ] {
        let (loss, grads) = critic.loss_and_grads(&x, &z, obj).unwrap();
        assert!((loss - expect).abs() < 1e-12, "{obj:?}: {loss} vs {expect}");
        let f = |p: &ParamSet| {
            let c = SeparableCritic { params: p.clone(), ..critic.clone() };
            c.loss_and_grads(&x, &z, obj).unwrap().0
        };
        let num = numerical_gradients(&critic.params, 1e-6, f);
        for (name, n) in &num {
            let a = &grads[name];
            if n.sq_norm().sqrt() < 1e-7 {
                // InfoNCE does not depend on the last x-side bias
                assert!(a.sq_norm().sqrt() < 1e-7, "{obj:?} {name}");
            } else {
                let err = relative_error(a, n);
                assert!(err < 1e-5, "{obj:?} {name}: {err}");
            }
        }
    }
}

#[test]
fn critic_rejects_bad_inputs() {
    let mut rng = rng_from_seed(1);
    let pairs = correlated_pairs(64, 0.5, 2);
    let empty = PairSet::new(Tensor::zeros(&[1, 1]), Tensor::zeros(&[1, 1])).unwrap();
    let es = EarlyStopConfig { max_steps: 10, ..EarlyStopConfig::desk() };
    assert!(train_critic(&pairs, &empty, CriticObjective::InfoNce, &small_critic(), &es, &mut rng).is_err());
    let bad = CriticConfig { layers: vec![4], activations: vec![] };
    assert!(SeparableCritic::new(bad, 1, 1, &mut rng).is_err());
    assert!(PairSet::new(Tensor::zeros(&[3, 1]), Tensor::zeros(&[2, 1])).is_err());
}

fn toy_stop() -> EarlyStopConfig {
    EarlyStopConfig {
        max_steps: 1500,
        patience: 1000,
        train_batch: 128,
        eval_batch: 512,
        eval_every: 250,
        ..EarlyStopConfig::paper()
    }
}

#[test]
fn nwj_on_gaussian_toy_and_variance_against_infonce() {
    // MI = -0.5 log(1 - rho^2) = 1 nat
    let rho = (1.0 - (-2.0f64).exp()).sqrt();
    let train = correlated_pairs(20_000, rho, 31);
    let val = correlated_pairs(2048, rho, 32);
    let test = correlated_pairs(20 * 128, rho, 33);
    let cfg = CriticConfig::desk();
    let mut rng = rng_from_seed(34);
    let fit_nwj = train_critic(&train, &val, CriticObjective::Nwj, &cfg, &toy_stop(), &mut rng).unwrap();
    let fit_nce = train_critic(&train, &val, CriticObjective::InfoNce, &cfg, &toy_stop(), &mut rng).unwrap();

    let whole = evaluate_critic(&fit_nwj.critic, &test, CriticObjective::Nwj, test.len()).unwrap();
    assert!((0.5..=1.0).contains(&whole), "NWJ {whole}");

    // At 1 nat the two estimators' spreads differ only through the
    // exponential off-diagonal term, which matters for small batches; for
    // K >= 32 the variance ratio is ~1.1 and not resolvable from 20 batches.
    let k = 2;
    let small = correlated_pairs(20 * k, rho, 35);
    let per_batch = |fit: &CriticFit, obj: CriticObjective| -> Vec<f64> {
        (0..20)
            .map(|b| {
                let pick = |t: &Tensor| Tensor::matrix(k, 1, t.data()[b * k..(b + 1) * k].to_vec()).unwrap();
                let s = fit.critic.scores(&pick(&small.x), &pick(&small.z)).unwrap();
                obj.estimate(&s).unwrap()
            })
            .collect()
    };
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    };
    let v_nwj = var(&per_batch(&fit_nwj, CriticObjective::Nwj));
    let v_nce = var(&per_batch(&fit_nce, CriticObjective::InfoNce));
    // upper 0.135% point of F(19, 19)
    assert!(v_nwj > 4.27 * v_nce, "NWJ var {v_nwj}, InfoNCE var {v_nce}");
}

#[test]
fn js_critic_learns_positive_estimate() {
    let rho = (1.0 - (-2.0f64).exp()).sqrt();
    let train = correlated_pairs(20_000, rho, 41);
    let val = correlated_pairs(2048, rho, 42);
    let test = correlated_pairs(4096, rho, 43);
    let mut rng = rng_from_seed(44);
    let fit = train_critic(&train, &val, CriticObjective::Js, &CriticConfig::desk(), &toy_stop(), &mut rng).unwrap();
    let v = evaluate_critic(&fit.critic, &test, CriticObjective::Js, 4096).unwrap();
    assert!(v > 0.5 && v < 1.1, "JS {v}");
}

#[test]
fn returned_critic_is_validation_best() {
    let rho = 0.8;
    let train = correlated_pairs(4000, rho, 51);
    let val = correlated_pairs(1024, rho, 52);
    let es = EarlyStopConfig { max_steps: 600, eval_every: 100, train_batch: 64, eval_batch: 512, ..EarlyStopConfig::paper() };
    let mut rng = rng_from_seed(53);
    let fit = train_critic(&train, &val, CriticObjective::InfoNce, &small_critic(), &es, &mut rng).unwrap();
    assert_eq!(fit.history.len(), 7);
    let replayed = EarlyStopper::replay(&es, &fit.history).unwrap();
    assert_eq!(replayed, fit.outcome);
    let again = evaluate_critic(&fit.critic, &val, CriticObjective::InfoNce, 512).unwrap();
    assert_eq!(again, fit.outcome.best_value);

    let mut rng = rng_from_seed(53);
    let fit2 = train_critic(&train, &val, CriticObjective::InfoNce, &small_critic(), &es, &mut rng).unwrap();
    assert_eq!(fit2.history, fit.history);
}

#[test]
fn critic_overfits_small_training_set() {
    let joint = bho_joint();
    let spectrum = ib_spectrum(&joint).unwrap();
    let (enc, _) = optimal_encoder_at(&spectrum, 3.0).unwrap();
    let all = encoder_batch(&enc, 7200 + 2048 + 2048, 61);
    let split = |b: &ReprBatch, start: usize, n: usize| {
        let take = |t: &Tensor| Tensor::matrix(n, t.cols(), t.data()[start * t.cols()..(start + n) * t.cols()].to_vec()).unwrap();
        PairSet::new(take(&b.x_future), take(&b.z)).unwrap()
    };
    let train = split(&all, 0, 7200);
    let val = split(&all, 7200, 2048);
    let test = split(&all, 9248, 2048);
    let mut rng = rng_from_seed(62);
    let fit = train_critic(&train, &val, CriticObjective::InfoNce, &CriticConfig::desk(), &EarlyStopConfig::desk(), &mut rng)
        .unwrap();
    let on_train = evaluate_critic(&fit.critic, &train, CriticObjective::InfoNce, 2048).unwrap();
    let on_test = evaluate_critic(&fit.critic, &test, CriticObjective::InfoNce, 2048).unwrap();
    assert!(on_train > on_test, "train {on_train}, test {on_test}");
}

fn quick_plane() -> PlaneConfig {
    PlaneConfig {
        stop: EarlyStopConfig { max_steps: 500, eval_every: 250, eval_batch: 1024, ..EarlyStopConfig::desk() },
        critic: small_critic(),
        ..PlaneConfig::desk()
    }
}

fn meta() -> PointMeta {
    PointMeta { model_id: "enc".into(), cell: "linear".into(), train_noise_sigma: 1.0, seed: 0 }
}

fn with_sigma(b: &ReprBatch, sigma: f64, seed: u64) -> ReprBatch {
    let mut rng = rng_from_seed(seed);
    let noise = normals(&mut rng, b.h.len());
    let z = Tensor::matrix(b.h.rows(), b.h.cols(), b.h.data().iter().zip(&noise).map(|(h, e)| h + sigma * e).collect()).unwrap();
    ReprBatch { z, sigma, ..b.clone() }
}

#[test]
fn plane_point_noise_limits() {
    let spectrum = ib_spectrum(&bho_joint()).unwrap();
    let (enc, _) = optimal_encoder_at(&spectrum, 1.0).unwrap();
    let base = encoder_batch(&enc, 3 * 4096, 71);
    let part = |start: usize, n: usize, sigma: f64| {
        let take = |t: &Tensor| Tensor::matrix(n, t.cols(), t.data()[start * t.cols()..(start + n) * t.cols()].to_vec()).unwrap();
        let b = ReprBatch { x_past: take(&base.x_past), x_future: take(&base.x_future), h: take(&base.h), z: take(&base.z), sigma: 1.0 };
        with_sigma(&b, sigma, derive_seed(start as u64, 1))
    };
    let range = base.h.data().iter().fold(0.0f64, |m, v| m.max(v.abs())) * 2.0;

    let sigma = 100.0 * range;
    let (tr, va, te) = (part(0, 4096, sigma), part(4096, 4096, sigma), part(8192, 4096, sigma));
    let mut rng = rng_from_seed(72);
    let p = estimate_plane_point(&tr, &va, &te, &quick_plane(), &meta(), &mut rng).unwrap();
    assert!(p.i_past_lower < 0.05 && p.i_past_upper < 0.05, "{p:?}");
    assert!(p.i_past_lower <= p.i_past_upper);
    assert!(p.i_future_nce <= p.i_past_upper + 0.1);
    assert_eq!(p.eval_noise_sigma, sigma);

    let (tr, va, te) = (part(0, 4096, 0.0), part(4096, 4096, 0.0), part(8192, 4096, 0.0));
    let p = estimate_plane_point(&tr, &va, &te, &quick_plane(), &meta(), &mut rng).unwrap();
    assert!(p.is_unbounded());
    assert_eq!(p.i_past_lower, (4096f64).ln());

    let mixed = part(0, 4096, 0.5);
    assert!(estimate_plane_point(&mixed, &va, &te, &quick_plane(), &meta(), &mut rng).is_err());
}
