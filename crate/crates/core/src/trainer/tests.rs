use super::*;
use crate::adversary::{MpdConfig, MsStftConfig};
use crate::nd::{ParamStore, WeightInit};
use crate::quantizer::VqConfig;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        rates: vec![2, 4],
        downsample: 8,
        base_channels: 2,
        vq: VqConfig::new(8, 2, 16).unwrap(),
        sample_rate: 16000,
        lstm_layers: 1,
        residual_kernel: 3,
        dilations: vec![1, 3],
        encoder_init: WeightInit::Normal(0.1),
        decoder_init: WeightInit::Normal(0.1),
    }
}

fn tiny_disc() -> DiscConfig {
    let mut c = DiscConfig {
        mpd: MpdConfig { periods: vec![2, 3], ..Default::default() },
        msstft: MsStftConfig { n_ffts: vec![32], hops: vec![8], ..Default::default() },
    };
    c.mpd.stack.channels = vec![2, 4];
    c.msstft.stack.channels = vec![2, 4];
    c
}

fn tiny_cfg(total_steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(total_steps, 16000);
    cfg.batch_size = 2;
    cfg.segment_seconds = 0.01;
    cfg.warmup_steps = 2;
    cfg.lr_start = 1e-3;
    cfg.lr_end = 1e-4;
    cfg.mel_loss = MelLoss::new(16000.0, vec![(32, 4), (64, 8)]);
    cfg
}

fn tiny_trainer(total_steps: u64) -> Trainer {
    Trainer::new(tiny_model(), tiny_disc(), tiny_cfg(total_steps)).unwrap()
}

fn batch(t: &Trainer, seed: u64) -> Tensor {
    let data = synthetic_dataset(3, 16000, seed);
    random_crops(&data, t.cfg.batch_size, t.segment_samples(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn schedule(total: u64) -> TrainConfig {
    TrainConfig::new(total, 16000)
}

#[test]
fn lr_schedule_examples() {
    let cfg = schedule(10_000);
    assert_eq!(lr_at(0, &cfg), 0.0);
    assert!((lr_at(500, &cfg) - 5e-5).abs() < 1e-18);
    assert_eq!(lr_at(1000, &cfg), 1e-4);
    assert_eq!(lr_at(10_000, &cfg), 1e-5);
    assert_eq!(lr_at(50_000, &cfg), 1e-5);
    // halfway through the decay
    assert!((lr_at(5500, &cfg) - 5.5e-5).abs() < 1e-18);
}

#[test]
fn lr_schedule_is_continuous_and_capped() {
    let cfg = schedule(3000);
    let lrs: Vec<f64> = (0..=3500).map(|s| lr_at(s, &cfg)).collect();
    let max = lrs.iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, cfg.lr_start);
    // steps of one update move the rate by at most one ramp increment
    let ramp = cfg.lr_start / cfg.warmup_steps as f64;
    assert!(lrs.windows(2).all(|w| (w[1] - w[0]).abs() <= ramp * (1.0 + 1e-12)));
}

fn only(f: impl FnOnce(&mut LossComponents)) -> LossComponents {
    let mut c = LossComponents::default();
    f(&mut c);
    c
}

#[test]
fn generator_loss_weights() {
    let w = LossWeights::default();
    assert_eq!(total_generator_loss(&only(|c| c.mel = 1.0), &w, 1).unwrap(), 15.0);
    assert_eq!(total_generator_loss(&only(|c| c.commit = 4.0), &w, 1).unwrap(), 1.0);
    let all = LossComponents { mel: 0.2, commit: 0.4, codebook: 0.1, adv_g: 0.3, fm: 0.5 };
    assert!((total_generator_loss(&all, &w, 1).unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn nan_component_reports_step() {
    let c = only(|c| c.fm = f64::NAN);
    match total_generator_loss(&c, &LossWeights::default(), 17) {
        Err(Error::Training { step, msg }) => {
            assert_eq!(step, 17);
            assert!(msg.contains("fm"), "{msg}");
        }
        other => panic!("expected training error, got {other:?}"),
    }
}

fn scalar_store(w: f64, decay: bool) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("w", Tensor::scalar(w), decay);
    s
}

#[test]
fn adamw_zero_grad_without_decay_is_identity() {
    let mut s = scalar_store(0.7, true);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
    opt.step(&mut s, &[Tensor::scalar(0.0)], 0.1).unwrap();
    assert_eq!(s.iter().next().unwrap().value.item(), 0.7);
}

#[test]
fn adamw_first_step_closed_form() {
    let mut s = scalar_store(0.0, true);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
    opt.step(&mut s, &[Tensor::scalar(1.0)], 0.1).unwrap();
    let w = s.iter().next().unwrap().value.item();
    assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
}

/// Textbook scalar AdamW, decoupled decay applied before the moment step.
fn scalar_adamw(mut w: f64, grad: impl Fn(f64) -> f64, steps: usize, lr: f64, cfg: AdamWConfig) -> f64 {
    let (mut m, mut v) = (0.0, 0.0);
    for t in 1..=steps {
        let g = grad(w);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t as i32));
        let vh = v / (1.0 - cfg.beta2.powi(t as i32));
        w -= lr * cfg.weight_decay * w;
        w -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    w
}

#[test]
fn adamw_matches_scalar_oracle_on_quadratic() {
    let cfg = AdamWConfig { weight_decay: 0.05, ..Default::default() };
    let grad = |w: f64| 2.0 * (w - 3.0);
    for decay in [true, false] {
        let mut s = scalar_store(0.5, decay);
        let mut opt = AdamW::new(cfg, &s);
        for _ in 0..3 {
            let w = s.iter().next().unwrap().value.item();
            opt.step(&mut s, &[Tensor::scalar(grad(w))], 0.2).unwrap();
        }
        let want = scalar_adamw(0.5, grad, 3, 0.2, AdamWConfig { weight_decay: if decay { 0.05 } else { 0.0 }, ..cfg });
        let got = s.iter().next().unwrap().value.item();
        assert!((got - want).abs() < 1e-14, "decay={decay}: {got} vs {want}");
    }
}

#[test]
fn adamw_rejects_non_finite_gradient_untouched() {
    let mut s = ParamStore::new();
    s.add("a", Tensor::scalar(1.0), true);
    s.add("enc.conv.weight", Tensor::scalar(2.0), true);
    let mut opt = AdamW::new(AdamWConfig::default(), &s);
    let before = s.checksum();
    match opt.step(&mut s, &[Tensor::scalar(1.0), Tensor::scalar(f64::INFINITY)], 0.1) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("enc.conv.weight"), "{msg}"),
        other => panic!("expected non-finite error, got {other:?}"),
    }
    assert_eq!(s.checksum(), before);
    assert_eq!(opt.t, 0);
}

#[test]
fn clip_scales_to_max_norm() {
    let mut g = vec![Tensor::new(&[2], vec![3.0, 0.0]).unwrap(), Tensor::scalar(4.0)];
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].item() - 0.8).abs() < 1e-15);
    // already inside the ball: reported norm is 1 and nothing changes
    assert!((clip_grad_norm(&mut g, 10.0) - 1.0).abs() < 1e-15);
    assert!((g[1].item() - 0.8).abs() < 1e-15);
}

#[test]
fn train_step_is_deterministic() {
    let t = tiny_trainer(10);
    let b = batch(&t, 1);
    let (mut a, mut c) = (t.clone(), t);
    for _ in 0..2 {
        assert_eq!(a.train_step(&b).unwrap(), c.train_step(&b).unwrap());
    }
    assert_eq!(a.gen.params.checksum(), c.gen.params.checksum());
    assert_eq!(a.disc.params.checksum(), c.disc.params.checksum());
}

#[test]
fn report_satisfies_weighted_sum_and_plumbing() {
    let mut t = tiny_trainer(10);
    let b = batch(&t, 2);
    let before = t.clone();
    let r = t.train_step(&b).unwrap();
    assert_eq!(r.step, 1);
    assert_eq!(r.total_g, total_generator_loss(&r.components(), &t.cfg.weights, 1).unwrap());
    assert_eq!(r.lr, lr_at(1, &t.cfg));
    // indices of the step come from the pre-update generator
    let tape = Tape::new();
    let out = before.gen.forward(&before.gen.params.bind(&tape, false), tape.constant(b)).unwrap();
    assert_eq!(r.utilization, utilization(&out.indices, 16));
    assert_eq!(r.approx_bitrate, approx_bitrate(&out.indices, before.gen.frame_rate()).unwrap());
}

#[test]
fn discriminator_step_leaves_generator_untouched() {
    let mut t = tiny_trainer(10);
    let b = batch(&t, 3);
    let (g0, d0) = (t.gen.params.checksum(), t.disc.params.checksum());
    let fake = Tensor::randn(b.shape(), 0.1, &mut ChaCha8Rng::seed_from_u64(4));
    t.discriminator_step(&b, &fake, 1e-3).unwrap();
    assert_eq!(t.gen.params.checksum(), g0);
    assert_ne!(t.disc.params.checksum(), d0);
}

#[test]
fn generator_step_leaves_discriminators_untouched() {
    let t = tiny_trainer(10);
    let b = batch(&t, 5);
    let fake = {
        let tape = Tape::new();
        let out = t.gen.forward(&t.gen.params.bind(&tape, false), tape.constant(b.clone())).unwrap();
        (*out.x_hat.value()).clone()
    };
    let mut d_only = t.clone();
    d_only.discriminator_step(&b, &fake, lr_at(1, &t.cfg)).unwrap();
    let mut full = t.clone();
    full.train_step(&b).unwrap();
    // the discriminators end where the D-step alone leaves them
    assert_eq!(full.disc.params.checksum(), d_only.disc.params.checksum());
    assert_ne!(full.gen.params.checksum(), t.gen.params.checksum());
}

#[test]
fn codebook_learns_only_through_codebook_loss() {
    let t = tiny_trainer(10);
    let b = batch(&t, 6);
    let codebook_grad = |with_codebook_loss: bool| {
        let tape = Tape::new();
        let p = t.gen.params.bind(&tape, true);
        let x = tape.constant(b.clone());
        let out = t.gen.forward(&p, x).unwrap();
        let mut loss = t.cfg.mel_loss.loss(x, out.x_hat).unwrap().scale(15.0).add(out.commitment_loss.scale(0.25)).unwrap();
        if with_codebook_loss {
            loss = loss.add(out.codebook_loss).unwrap();
        }
        tape.backward(loss).unwrap();
        p.get(t.gen.quantizer.codebook).grad().unwrap()
    };
    assert!(codebook_grad(false).data().iter().all(|&g| g == 0.0));
    assert!(codebook_grad(true).data().iter().any(|&g| g != 0.0));
}

#[test]
fn divergence_guard_aborts_without_update() {
    let mut t = tiny_trainer(10);
    t.cfg.weights.mel = 1e12;
    let b = batch(&t, 7);
    let g0 = t.gen.params.checksum();
    match t.train_step(&b) {
        Err(Error::Training { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected divergence error, got {other:?}"),
    }
    assert_eq!(t.gen.params.checksum(), g0);
    assert_eq!(t.step, 0);
}

#[test]
fn metrics_log_has_one_line_per_interval() {
    let mut t = tiny_trainer(6);
    t.cfg.log_interval = 2;
    let data = synthetic_dataset(3, 16000, 8);
    let mut log = Vec::new();
    let history = t.fit(&data, Some(&mut log)).unwrap();
    assert_eq!(history.len(), 6);
    let text = String::from_utf8(log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let keys: Vec<&str> = lines[0].split(' ').map(|kv| kv.split_once('=').unwrap().0).collect();
    assert_eq!(keys, ["step", "mel", "commit", "codebook", "adv_g", "fm", "total_g", "d_loss", "lr", "utilization", "approx_bitrate"]);
    assert!(lines[2].starts_with("step=6 "));
}

#[test]
fn resume_reproduces_next_report() {
    let data = synthetic_dataset(3, 16000, 9);
    let mut straight = tiny_trainer(3);
    let want = straight.fit(&data, None).unwrap().pop().unwrap();

    // the same run interrupted after two updates
    let mut first = tiny_trainer(3);
    for _ in 0..2 {
        let b = random_crops(&data, first.cfg.batch_size, first.segment_samples(), &mut first.step_rng()).unwrap();
        first.train_step(&b).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.bgck");
    first.save(&path).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    assert_eq!(resumed.step, 2);
    let got = resumed.fit(&data, None).unwrap();
    assert_eq!(got, vec![want]);
    assert_eq!(resumed.gen.params.checksum(), straight.gen.params.checksum());
}

#[test]
fn empty_or_short_dataset_is_config_error() {
    let mut t = tiny_trainer(1);
    assert!(matches!(t.fit(&[], None), Err(Error::Config(_))));
    assert!(matches!(t.fit(&[vec![0.0; 10]], None), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_rejected() {
    let mut cfg = tiny_cfg(10);
    cfg.lr_end = 2.0 * cfg.lr_start;
    assert!(matches!(Trainer::new(tiny_model(), tiny_disc(), cfg), Err(Error::Config(_))));
    let mut cfg = tiny_cfg(10);
    cfg.weights.fm = -1.0;
    assert!(matches!(Trainer::new(tiny_model(), tiny_disc(), cfg), Err(Error::Config(_))));
}

#[test]
fn overfit_single_example_without_adversary() {
    let mut cfg = tiny_cfg(200);
    cfg.weights.adv = 0.0;
    cfg.weights.fm = 0.0;
    cfg.batch_size = 1;
    cfg.warmup_steps = 10;
    cfg.lr_end = cfg.lr_start;
    let mut t = Trainer::new(tiny_model(), tiny_disc(), cfg).unwrap();
    let b = batch(&t, 10);
    let objective: Vec<f64> = (0..200)
        .map(|_| {
            let r = t.train_step(&b).unwrap();
            15.0 * r.mel + 0.25 * r.commit + r.codebook
        })
        .collect();
    let windows: Vec<f64> = objective.chunks(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}
