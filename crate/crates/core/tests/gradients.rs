//! Central finite-difference checks of every hand-written gradient.

use advsal_core::nn::{rng_from, Mode, Params, Tensor};
use advsal_core::ssed::loss::*;
use advsal_core::ssed::{objective, ArchPlan, AttackConfig, Generator};
use advsal_core::target::{enroll_waveforms, EmbeddingNet, EnrollmentDB, Scores, TargetConfig, TargetSystem, Task};
use advsal_core::{Waveform, SAMPLE_RATE};
use rand::Rng;

const H: f64 = 1e-4;

fn random_vec(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, 1);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = v[i];
            v[i] = o + H;
            let up = f(&v);
            v[i] = o - H;
            let down = f(&v);
            v[i] = o;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn assert_grad(name: &str, analytic: &[f64], numeric: &[f64]) {
    let e = rel_err(analytic, numeric);
    assert!(e < 1e-3, "{name}: relative error {e:e}");
}

#[test]
fn loss_f_through_normalisation() {
    let m = random_vec(40, 0.05, 0.95, 1);
    let f = |m: &[f64]| loss_f(&normalize_mask(m));
    let g = normalize_mask_grad(&m, &loss_f_grad(&normalize_mask(&m)));
    assert_grad("loss_f", &g, &fd(&f, &m));
    let mn = random_vec(40, 0.0, 1.0, 2);
    assert_grad("loss_f direct", &loss_f_grad(&mn), &fd(&|v: &[f64]| loss_f(v), &mn));
}

#[test]
fn loss_norm_hinge_and_symmetric() {
    let x = random_vec(50, -0.5, 0.5, 3);
    // Keep every coordinate away from the hinge at x' = x.
    let d: Vec<f64> = random_vec(50, 0.01, 0.05, 4).iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -*v }).collect();
    let xa: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
    let f = |xa: &[f64]| loss_norm(&x, xa).unwrap();
    assert_grad("loss_norm", &loss_norm_grad(&x, &xa), &fd(&f, &xa));
    assert_grad("loss_norm_symmetric", &loss_norm_symmetric_grad(&d), &fd(&|d: &[f64]| loss_norm_symmetric(d), &d));
}

#[test]
fn loss_angular_wrt_adversarial_embedding() {
    for seed in 0..5 {
        let z = random_vec(16, -1.0, 1.0, 10 + seed);
        let za = random_vec(16, -1.0, 1.0, 20 + seed);
        let f = |za: &[f64]| loss_angular(&z, za).unwrap();
        assert_grad("loss_angular", &loss_angular_grad(&z, &za), &fd(&f, &za));
    }
}

#[test]
fn speaker_losses_wrt_scores() {
    for seed in 0..20 {
        let s = random_vec(6, -1.0, 1.0, 30 + seed);
        let t = 1 + (seed as usize % 6);
        let csi = |s: &[f64]| loss_speaker_csi(&Scores(s.to_vec()), t).unwrap();
        let (_, g) = speaker_loss_grad(Task::Csi, &Scores(s.clone()), t, None).unwrap();
        assert_grad("loss_speaker_csi", &g, &fd(&csi, &s));
        for theta in [-0.5, 0.2, 0.9] {
            let osi = |s: &[f64]| loss_speaker_osi(&Scores(s.to_vec()), t, theta).unwrap();
            let (_, g) = speaker_loss_grad(Task::Osi, &Scores(s.clone()), t, Some(theta)).unwrap();
            assert_grad("loss_speaker_osi", &g, &fd(&osi, &s));
        }
    }
}

fn tiny_target() -> (EmbeddingNet, EnrollmentDB) {
    let net = EmbeddingNet::new(&TargetConfig { embed_dim: 8, channels: [4, 4, 4, 4], ..TargetConfig::default() });
    let speakers: Vec<(u32, Vec<Waveform>)> = (0..3)
        .map(|s| {
            let w = Waveform::new(random_vec(400, -0.5, 0.5, 100 + s), SAMPLE_RATE).unwrap();
            (s as u32, vec![w])
        })
        .collect();
    let db = enroll_waveforms(&net, &speakers).unwrap();
    (net, db)
}

/// Score gradients w.r.t. 1600 input samples, through a random projection
/// of the score vector.
#[test]
fn score_wrt_input_samples() {
    let (net, db) = tiny_target();
    let sys = TargetSystem::new(&net, &db);
    let x = random_vec(1600, -0.5, 0.5, 7);
    let r = random_vec(db.k(), -1.0, 1.0, 8);
    let f = |x: &[f64]| sys.scores(x).0.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let trace = sys.trace(&Tensor::from_rows(&[&x]));
    let analytic = sys.backward(&trace, &[r.clone()], None).into_data();
    let numeric = fd(&f, &x);
    assert_grad("score", &analytic, &numeric);
    let ok = analytic
        .iter()
        .zip(&numeric)
        .filter(|(a, n)| (*a - *n).abs() <= 1e-3 * a.abs().max(n.abs()).max(1e-6))
        .count();
    assert!(ok as f64 >= 0.99 * x.len() as f64, "{ok} / {} coordinates within 1e-3", x.len());
}

fn generator_fd(cfg: &AttackConfig, saliency: bool, mode: Mode) {
    let (net, db) = tiny_target();
    let sys = TargetSystem::new(&net, &db);
    let mut gen = Generator::new(ArchPlan { channels: [2, 3, 3], res_blocks: 1 }, saliency, 5);
    // Zero-initialised biases put all-zero receptive fields exactly on a
    // ReLU kink; jitter every parameter to move off it.
    let mut rng = rng_from(77, 2);
    for p in gen.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let rows = [random_vec(256, -0.4, 0.4, 50), random_vec(256, -0.4, 0.4, 51)];
    let x = Tensor::from_rows(&rows);
    let emb: Vec<Vec<f64>> = rows.iter().map(|r| net.embed_samples(r)).collect();
    let total = |g: &Generator| objective(g, cfg, &sys, &x, &emb, mode, None).unwrap().0.total;

    let mut grad = gen.zeros_like();
    objective(&gen, cfg, &sys, &x, &emb, mode, Some(&mut grad)).unwrap();
    let analytic: Vec<f64> = grad.params().iter().flat_map(|p| p.iter().copied()).collect();

    let mut probe = gen.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let sizes: Vec<usize> = gen.params().iter().map(|p| p.len()).collect();
    for (a, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let o = probe.params()[a][j];
            probe.params_mut()[a][j] = o + H;
            let up = total(&probe);
            probe.params_mut()[a][j] = o - H;
            let down = total(&probe);
            probe.params_mut()[a][j] = o;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    assert_grad("loss_total w.r.t. generator weights", &analytic, &numeric);
}

#[test]
fn loss_total_wrt_generator_weights_csi() {
    let cfg = AttackConfig { lambda_f: 0.5, lambda_a: 0.7, lambda_n: 3.0, ..AttackConfig::default() };
    generator_fd(&cfg, true, Mode::Train);
    generator_fd(&cfg, true, Mode::Eval);
}

#[test]
fn loss_total_wrt_generator_weights_variants() {
    let sym = AttackConfig { lambda_f: 0.2, lambda_a: 0.3, lambda_n: 50.0, symmetric_norm: true, ..AttackConfig::default() };
    generator_fd(&sym, true, Mode::Train);
    let no_mask = AttackConfig { saliency: false, ..sym.clone() };
    generator_fd(&no_mask, false, Mode::Train);
    let osi = AttackConfig { task: Task::Osi, theta: Some(0.3), target: 2, ..sym };
    generator_fd(&osi, true, Mode::Train);
}
