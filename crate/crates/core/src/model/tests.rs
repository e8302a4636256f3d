use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::nd::{GradCheck, Tape, Tensor, WeightInit};

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k + cout
}

fn residual(c: usize) -> usize {
    c + conv(c, c, 7) + c + conv(c, c, 1)
}

fn lstm(h: usize) -> usize {
    2 * (4 * h * h * 2 + 8 * h)
}

/// Layer-by-layer count written out independently of the builder.
fn tally(rates: &[usize], c0: usize, d: usize, k: usize) -> usize {
    let ch: Vec<usize> = (0..=rates.len()).map(|i| c0 << i).collect();
    let latent = *ch.last().unwrap();
    let mut n = conv(1, c0, 7) + lstm(latent) + lstm(latent) + c0 + conv(c0, 1, 7);
    for (i, &r) in rates.iter().enumerate() {
        n += 3 * residual(ch[i]) + ch[i] + conv(ch[i], ch[i + 1], 2 * r);
        n += ch[i + 1] + ch[i + 1] * ch[i] * 2 * r + ch[i] + 3 * residual(ch[i]);
    }
    n + conv(latent, d, 1) + conv(d, latent, 1) + k * d
}

#[test]
fn toy_param_count_matches_layer_tally() {
    let m = GeneratorModel::build(ModelConfig::toy(), 0).unwrap();
    assert_eq!(m.count_params(), tally(&[2, 4, 5], 8, 8, 64));
    assert_eq!(m.count_params(), 251_225);
}

#[test]
fn base_param_count_matches_layer_tally() {
    let m = GeneratorModel::build(ModelConfig::base(), 0).unwrap();
    assert_eq!(m.count_params(), tally(&[2, 4, 5, 5], 32, 8, 8192));
}

#[test]
fn presets_have_expected_geometry() {
    for (cfg, latent) in [(ModelConfig::base(), 512), (ModelConfig::big(), 1536)] {
        cfg.validate().unwrap();
        assert_eq!(cfg.downsample, 200);
        assert_eq!(cfg.latent_dim(), latent);
        assert_eq!(cfg.vq.code_dim, 8);
        assert_eq!(cfg.vq.codebook_size, 8192);
        assert_eq!(cfg.frame_rate(), 80.0);
    }
    assert_eq!(ModelConfig::toy().downsample, 40);
    assert!(ModelConfig::by_name("huge").is_err());
}

#[test]
fn rates_must_factor_requested_downsampling() {
    let mut cfg = ModelConfig::toy();
    cfg.rates = vec![2, 4, 4];
    assert!(matches!(GeneratorModel::build(cfg, 0), Err(Error::Config(_))));
}

#[test]
fn build_is_deterministic() {
    let a = GeneratorModel::build(ModelConfig::toy(), 7).unwrap();
    let b = GeneratorModel::build(ModelConfig::toy(), 7).unwrap();
    let c = GeneratorModel::build(ModelConfig::toy(), 8).unwrap();
    assert_eq!(a.params.checksum(), b.params.checksum());
    assert_ne!(a.params.checksum(), c.params.checksum());
}

#[test]
fn forward_preserves_length_and_frame_count() {
    let m = GeneratorModel::build(ModelConfig::toy(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for frames in [1, 2, 5] {
        let t = 40 * frames;
        let tape = Tape::new();
        let p = m.params.bind(&tape, false);
        let x = tape.constant(Tensor::randn(&[2, 1, t], 0.3, &mut rng));
        let out = m.forward(&p, x).unwrap();
        assert_eq!(out.x_hat.shape(), vec![2, 1, t]);
        assert_eq!(out.frames, frames);
        assert_eq!(out.indices.len(), 2 * frames);
    }
}

#[test]
fn encode_rejects_ragged_length() {
    let m = GeneratorModel::build(ModelConfig::toy(), 1).unwrap();
    assert!(matches!(m.encode(&[0.0; 41]), Err(Error::Contract(_))));
    assert!(matches!(m.encode(&[]), Err(Error::Contract(_))));
}

#[test]
fn decode_rejects_out_of_range_index() {
    let m = GeneratorModel::build(ModelConfig::toy(), 1).unwrap();
    assert!(matches!(m.decode(&[0, 64]), Err(Error::Contract(_))));
}

#[test]
fn encode_decode_round_trip_lengths_and_finite() {
    let m = GeneratorModel::build(ModelConfig::toy(), 2).unwrap();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = rng.gen_range(1..4);
        let x: Vec<f64> = (0..40 * frames).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let codes = m.encode(&x).unwrap();
        assert_eq!(codes.len(), frames);
        assert!(codes.iter().all(|&c| c < 64));
        let y = m.decode(&codes).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn decode_matches_forward_reconstruction() {
    let m = GeneratorModel::build(ModelConfig::toy(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::randn(&[1, 1, 120], 0.3, &mut rng);
    let tape = Tape::new();
    let p = m.params.bind(&tape, false);
    let out = m.forward(&p, tape.constant(x.clone())).unwrap();
    let y = m.decode(&m.encode(x.data()).unwrap()).unwrap();
    let diff = out.x_hat.value().data().iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn encoder_receives_gradient_through_quantizer() {
    let m = GeneratorModel::build(ModelConfig::toy(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tape = Tape::new();
    let p = m.params.bind(&tape, true);
    let x = tape.constant(Tensor::randn(&[1, 1, 80], 0.3, &mut rng));
    let out = m.forward(&p, x).unwrap();
    let loss = out.x_hat.sqr().mean();
    tape.backward(loss).unwrap();
    let grads = p.grads();
    let id = m.params.find("enc.conv_in.weight").unwrap();
    assert!(grads[id.index()].data().iter().any(|g| *g != 0.0));
    let id = m.params.find("enc.lstm.1.w_ih").unwrap();
    assert!(grads[id.index()].data().iter().any(|g| *g != 0.0));
}

#[test]
fn snake_matches_scalar_formula() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
    let a = tape.constant(Tensor::new(&[2], vec![1.0, 3.0]).unwrap());
    let y = snake(x, a, 0.0).unwrap().value();
    let expect = [0.5 + 0.5f64.sin().powi(2), -1.0 + 1.0f64.sin().powi(2), 2.0 + 6.0f64.sin().powi(2) / 3.0, 0.0];
    for (u, v) in y.data().iter().zip(expect) {
        assert!((u - v).abs() < 1e-15);
    }
}

#[test]
fn snake_alpha_shape_error() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 3]));
    let a = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(snake(x, a, SNAKE_EPS), Err(Error::Shape(_))));
}

fn conv_snake_mean<'t>(tape: &'t Tape, v: &[crate::nd::Var<'t>]) -> crate::Result<crate::nd::Var<'t>> {
    let _ = tape;
    let y = v[0].conv1d(v[1], Some(v[2]), 1, 2, 2)?;
    Ok(snake(y, v[3], SNAKE_EPS)?.mean())
}

#[test]
fn conv_snake_mean_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = vec![
        Tensor::randn(&[2, 3, 9], 1.0, &mut rng),
        Tensor::randn(&[4, 3, 3], 0.5, &mut rng),
        Tensor::randn(&[4], 0.5, &mut rng),
        Tensor::uniform(&[4], 0.5, 1.5, &mut rng),
    ];
    let r = GradCheck::new(1e-6).run(conv_snake_mean, &inputs).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn checkpoint_round_trip_preserves_codes() {
    let m = GeneratorModel::build(ModelConfig::toy(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path).unwrap();
    let n = GeneratorModel::load(&path).unwrap();
    assert_eq!(n.config, m.config);
    assert_eq!(n.params.checksum(), m.params.checksum());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..160).map(|_| rng.gen_range(-0.5..0.5)).collect();
    assert_eq!(m.encode(&x).unwrap(), n.encode(&x).unwrap());
}

#[test]
fn stream_round_trip_keeps_original_length() {
    let m = GeneratorModel::build(ModelConfig::toy(), 1).unwrap();
    for n in [0usize, 1, 39, 40, 41, 123] {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin() * 0.5).collect();
        let s = m.encode_stream(&x).unwrap();
        assert_eq!(s.header.n_frames as usize, n.div_ceil(40));
        assert_eq!(s.indices.len(), n.div_ceil(40));
        assert_eq!(m.decode_stream(&s).unwrap().len(), n);
    }
}

#[test]
fn foreign_stream_geometry_is_rejected() {
    let m = GeneratorModel::build(ModelConfig::toy(), 1).unwrap();
    let mut s = m.encode_stream(&[0.1; 80]).unwrap();
    s.header.log2_k = 7;
    let e = m.decode_stream(&s).unwrap_err().to_string();
    assert!(e.contains("K=128") && e.contains("K=64"), "{e}");
    s.header.log2_k = 6;
    s.header.downsample = 20;
    assert!(matches!(m.decode_stream(&s), Err(Error::Contract(_))));
    s.header.downsample = 40;
    s.header.sample_rate = 8000;
    assert!(matches!(m.decode_stream(&s), Err(Error::Contract(_))));
}

#[test]
fn initializers_bound_each_layer() {
    let mut cfg = ModelConfig::toy();
    cfg.encoder_init = WeightInit::FanIn(1.0);
    cfg.decoder_init = WeightInit::Normal(0.05);
    let m = GeneratorModel::build(cfg, 4).unwrap();
    // truncated at two standard deviations
    let enc = [("enc.conv_in.weight", 7.0), ("enc.block1.down.weight", 16.0 * 8.0), ("enc.lstm.0.w_hh", 64.0), ("vq.down.weight", 64.0), ("vq.up.weight", 8.0)];
    let dec = [("dec.block0.up.weight", 0.0), ("dec.lstm.0.w_hh", 0.0), ("dec.conv_out.weight", 0.0)];
    for (name, fan_in) in enc.into_iter().chain(dec) {
        let w = m.params.get(m.params.find(name).unwrap());
        let bound = if fan_in > 0.0 { 2.0 / f64::sqrt(fan_in) } else { 0.1 };
        let peak = w.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak <= bound && peak > 0.5 * bound, "{name}: peak {peak} bound {bound}");
    }
    let mut bad = ModelConfig::toy();
    bad.decoder_init = WeightInit::Normal(0.0);
    assert!(matches!(GeneratorModel::build(bad, 0), Err(Error::Config(_))));
    let mut bad = ModelConfig::toy();
    bad.encoder_init = WeightInit::FanIn(f64::NAN);
    assert!(matches!(GeneratorModel::build(bad, 0), Err(Error::Config(_))));
}
