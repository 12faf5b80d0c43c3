use alloc::vec::Vec;

use super::*;
use crate::env::EnvConfig;
use crate::exec::Serial;
use crate::samples::collect_random;

fn mobile(n: usize, seed: u64) -> SampleSet {
    collect_random(&EnvConfig::preset("mobile-random").unwrap(), n, seed).unwrap()
}

fn arch(kind: ModelKind, d: usize) -> Architecture {
    Architecture::new(kind, d, 64, 4, Backbone::Small, 0)
}

fn f64_setup(kind: ModelKind, d: usize, n: usize) -> (Architecture, Vec<f64>, LossBatch<f64>) {
    let samples = mobile(40, 5);
    let a = arch(kind, d);
    let params: Vec<f64> = Model::initialized(a.clone(), 9).params.iter().map(|&p| p as f64).collect();
    let pool = if kind.uses_transitions() { samples.transitions() } else { (0..samples.len()).collect() };
    let idx: Vec<usize> = pool.into_iter().step_by(3).take(n).collect();
    let batch = make_batch::<f64>(&samples, &a, &idx, &mut crate::rng::stream(1, crate::rng::streams::NOISE));
    (a, params, batch)
}

#[test]
fn gradients_match_finite_differences() {
    for kind in [
        ModelKind::Autoencoder,
        ModelKind::Vae,
        ModelKind::Forward,
        ModelKind::Inverse,
        ModelKind::ForwardInverse,
        ModelKind::Priors,
        ModelKind::Supervised,
    ] {
        let (a, p, batch) = f64_setup(kind, 4, 6);
        let r = gradient_check(&Serial, &a, &p, &batch, &LossWeights::default(), 20, 3).unwrap();
        assert_eq!(r.checked, 20, "{kind:?}");
        assert!(r.max_rel_error < 1e-4, "{kind:?}: {r:?}");
    }
}

#[test]
fn combined_loss_is_linear_in_weights() {
    let (a, p, batch) = f64_setup(ModelKind::ForwardInverse, 3, 8);
    let w = LossWeights { forward: 0.7, inverse: 2.5, ..Default::default() };
    let mut g = Graph::<f64>::new(&Serial);
    let b = a.bind(&mut g, &p, false);
    let out = compute_loss(&mut g, &a, &b, &batch, &w).unwrap();
    let f = g.scalar(out.terms[0].1);
    let i = g.scalar(out.terms[1].1);
    assert!((g.scalar(out.total) - (0.7 * f + 2.5 * i)).abs() < 1e-12);
}

#[test]
fn autoencoder_loss_decreases_and_training_is_deterministic() {
    let samples = mobile(1000, 2);
    let cfg = TrainConfig { epochs: 20, max_batches_per_epoch: Some(4), seed: 4, ..TrainConfig::for_kind(ModelKind::Autoencoder) };
    let (m1, log) = train(&Serial, &samples, arch(ModelKind::Autoencoder, 4), &cfg).unwrap();
    let recon = log.series("reconstruction");
    assert_eq!(recon.len(), 20);
    assert!(recon[19] < recon[0], "{recon:?}");
    let (m2, _) = train(&Serial, &samples, arch(ModelKind::Autoencoder, 4), &cfg).unwrap();
    assert_eq!(m1.params, m2.params);
}

#[test]
fn autoencoder_reconstructs_its_training_samples() {
    let samples = mobile(300, 6);
    let cfg = TrainConfig { epochs: 6, seed: 2, ..TrainConfig::for_kind(ModelKind::Autoencoder) };
    let (model, log) = train(&Serial, &samples, arch(ModelKind::Autoencoder, 4), &cfg).unwrap();
    let final_loss = *log.series("reconstruction").last().unwrap();
    let states = model.encode_samples(&Serial, &samples).unwrap();
    let mut mse = 0.0;
    for i in 0..samples.len() {
        let state: Vec<f32> = states.row(i).iter().map(|&v| v as f32).collect();
        let img = model.decode(&Serial, &state).unwrap();
        let orig = samples.image(i);
        mse += img.data.iter().zip(orig).map(|(&a, &b)| ((a as f64 - b as f64) / 255.0).powi(2)).sum::<f64>()
            / orig.len() as f64;
    }
    mse /= samples.len() as f64;
    // Slack covers u8 quantization of the decoded image.
    assert!(mse < final_loss + 1e-3, "decode(encode) mse {mse} vs training loss {final_loss}");
}

#[test]
fn constant_gray_decoder_loss_is_pixel_variance() {
    // Zero decoder parameters output 0.5 everywhere, so the loss is the
    // mean squared deviation of the pixels from 0.5.
    let samples = mobile(8, 1);
    let a = arch(ModelKind::Autoencoder, 2);
    let mut params = Model::initialized(a.clone(), 1).params;
    let enc = a.encoder.param_count();
    params[enc..].iter_mut().for_each(|p| *p = 0.0);
    let idx: Vec<usize> = (0..8).collect();
    let batch = make_batch::<f64>(&samples, &a, &idx, &mut crate::rng::stream(0, 0));
    let expected = batch.obs.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / batch.obs.len() as f64;
    let p64: Vec<f64> = params.iter().map(|&v| v as f64).collect();
    let mut g = Graph::<f64>::new(&Serial);
    let b = a.bind(&mut g, &p64, false);
    let out = compute_loss(&mut g, &a, &b, &batch, &LossWeights::default()).unwrap();
    assert!((g.scalar(out.total) - expected).abs() < 1e-12);
}

#[test]
fn training_rejects_bad_configs() {
    let samples = mobile(50, 1);
    let cfg = TrainConfig { batch_size: 1, ..TrainConfig::for_kind(ModelKind::Priors) };
    assert!(matches!(train(&Serial, &samples, arch(ModelKind::Priors, 2), &cfg), Err(SrlError::Config(_))));
    let cfg = TrainConfig { weights: LossWeights { inverse: 0.0, ..Default::default() }, ..TrainConfig::for_kind(ModelKind::ForwardInverse) };
    assert!(matches!(train(&Serial, &samples, arch(ModelKind::ForwardInverse, 2), &cfg), Err(SrlError::Config(_))));
    let cfg = TrainConfig::for_kind(ModelKind::Supervised);
    assert!(matches!(train(&Serial, &samples, arch(ModelKind::Supervised, 2), &cfg), Err(SrlError::ShapeMismatch { .. })));
}

#[test]
fn random_features_are_frozen() {
    let samples = mobile(20, 1);
    let cfg = TrainConfig { seed: 7, ..TrainConfig::for_kind(ModelKind::RandomFeatures) };
    let (m, log) = train(&Serial, &samples, arch(ModelKind::RandomFeatures, 3), &cfg).unwrap();
    assert!(log.entries.is_empty());
    assert_eq!(m, Model::initialized(arch(ModelKind::RandomFeatures, 3), 7));
}

/// Ground-truth robot positions of non-wall transitions: `(s, a, s')`.
fn robot_transitions(n: usize) -> (Vec<f32>, Vec<usize>, Vec<f32>) {
    let samples = mobile(n, 12);
    let (mut s, mut a, mut s2) = (Vec::new(), Vec::new(), Vec::new());
    for t in samples.transitions() {
        let (p, q) = (&samples.gt(t)[..2], &samples.gt(t + 1)[..2]);
        if p != q {
            s.extend_from_slice(p);
            s2.extend_from_slice(q);
            a.push(samples.actions[t] as usize);
        }
    }
    (s, a, s2)
}

/// Full-batch Adam on a standalone head; `loss` maps the head's weights
/// to the objective.
fn fit_head(net: &nn::Net, steps: usize, lr: f64, loss: impl Fn(&mut Graph<'_, f32>, &[Var]) -> Var) -> Vec<f32> {
    let mut params = net.init(&mut crate::rng::stream(3, 0));
    let mut adam = crate::optim::Adam::new(crate::optim::AdamConfig { lr, ..Default::default() }, params.len());
    for _ in 0..steps {
        let mut g = Graph::<f32>::new(&Serial);
        let w = net.bind(&mut g, &params, true);
        let total = loss(&mut g, &w);
        let grads = g.backward(total);
        let flat: Vec<f32> = w.iter().flat_map(|&v| grads.get(v).expect("used weight").to_vec()).collect();
        adam.step(&mut params, &flat);
    }
    params
}

#[test]
fn linear_inverse_head_on_ground_truth_separates_actions() {
    let (s, a, s2) = robot_transitions(1500);
    let n = a.len();
    let net = nn::mlp(4, &[], 4);
    let fit = |g: &mut Graph<'_, f32>, w: &[Var], s: &[f32], s2: &[f32], a: &[usize]| {
        let m = a.len();
        let x0 = g.constant(s.to_vec(), &[m, 2]);
        let x1 = g.constant(s2.to_vec(), &[m, 2]);
        let x = g.concat_cols(x0, x1);
        net.forward(g, w, x)
    };
    let params = fit_head(&net, 400, 0.05, |g, w| {
        let logits = fit(g, w, &s, &s2, &a);
        super::loss::cross_entropy(g, logits, &a, 4).unwrap()
    });
    let (ts, ta, ts2) = robot_transitions(800);
    let mut g = Graph::<f32>::new(&Serial);
    let w = net.bind(&mut g, &params, false);
    let logits = fit(&mut g, &w, &ts, &ts2, &ta);
    let correct = g.value(logits).chunks(4).zip(&ta).filter(|(l, &t)| {
        let best = (0..4).max_by(|&i, &j| l[i].total_cmp(&l[j])).unwrap();
        best == t
    });
    let acc = correct.count() as f64 / ta.len() as f64;
    assert!(n > 500 && acc > 0.95, "accuracy {acc} on {} held-out transitions", ta.len());
}

#[test]
fn linear_forward_head_on_ground_truth_learns_step_displacements() {
    let (s, a, s2) = robot_transitions(1500);
    let n = a.len();
    let net = nn::mlp(6, &[], 2);
    let mut onehot = alloc::vec![0.0f32; n * 4];
    a.iter().enumerate().for_each(|(i, &k)| onehot[i * 4 + k] = 1.0);
    let params = fit_head(&net, 1500, 0.02, |g, w| {
        let x0 = g.constant(s.clone(), &[n, 2]);
        let act = g.constant(onehot.clone(), &[n, 4]);
        let x = g.concat_cols(x0, act);
        let pred = net.forward(g, w, x);
        let target = g.constant(s2.clone(), &[n, 2]);
        let d = g.sub(pred, target);
        let sq = g.square(d);
        g.mean(sq)
    });
    // Least-squares optimum: identity on the position, and action column
    // plus bias equal to that action's displacement.
    let (weight, bias) = (&params[..12], &params[12..]);
    let w = |r: usize, c: usize| weight[r * 2 + c] as f64;
    for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let expected = if r == c { 1.0 } else { 0.0 };
        assert!((w(r, c) - expected).abs() < 0.02, "position weight {r},{c} = {}", w(r, c));
    }
    let step = crate::env::mobile::STEP;
    let displacements = [[step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]];
    for (k, d) in displacements.iter().enumerate() {
        for c in 0..2 {
            let got = w(2 + k, c) + bias[c] as f64;
            assert!((got - d[c]).abs() < 5e-3, "action {k} component {c}: {got} vs {}", d[c]);
        }
    }
}
