use mda_core::data::wav::read_wav;
use mda_core::encoders::mfcc::{log_mel_energies, pooled_mfcc, MelFilterbank, LOG_FLOOR};
use mda_core::encoders::{
    self_attention, AudioEncoder, ImageEncoder, ImageEncoderConfig, MfccConfig, ModalityEncoder,
    ModalityInput, SelfAttentionParams, TextEncoder, TokenDims, TokenMatrix,
};
use mda_core::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Straight-line single-head attention, written without any shared kernels.
fn attention_oracle(
    phi: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let t = phi.len();
    let d = phi[0].len();
    let proj = |w: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..t)
            .map(|r| {
                (0..d)
                    .map(|c| (0..d).map(|k| phi[r][k] * w[k][c]).sum())
                    .collect()
            })
            .collect()
    };
    let (q, k, v) = (proj(wq), proj(wk), proj(wv));
    let mut out = vec![vec![0.0; d]; t];
    for i in 0..t {
        let scores: Vec<f64> = (0..t)
            .map(|j| (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..t {
            for c in 0..d {
                out[i][c] += e[j] / z * v[j][c];
            }
        }
    }
    out
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect()
}

fn params(rng: &mut ChaCha8Rng, d: usize) -> SelfAttentionParams {
    SelfAttentionParams {
        w_q: random(rng, &[d, d], 1.0),
        w_k: random(rng, &[d, d], 1.0),
        w_v: random(rng, &[d, d], 1.0),
    }
}

#[test]
fn self_attention_single_token_returns_value_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = params(&mut rng, 4);
    let phi = random(&mut rng, &[1, 4], 1.0);
    let out = self_attention(&TokenMatrix::new(phi.clone()).unwrap(), &p).unwrap();
    let v: Vec<f64> = (0..4)
        .map(|c| (0..4).map(|k| phi.data()[k] * p.w_v.at(k, c)).sum())
        .collect();
    for (a, b) in out.tensor().data().iter().zip(&v) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn self_attention_zero_query_key_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let phi = random(&mut rng, &[5, 3], 2.0);
    let p = SelfAttentionParams {
        w_q: Tensor::zeros(&[3, 3]),
        w_k: Tensor::zeros(&[3, 3]),
        w_v: Tensor::eye(3),
    };
    let out = self_attention(&TokenMatrix::new(phi.clone()).unwrap(), &p).unwrap();
    let mean: Vec<f64> = (0..3)
        .map(|c| (0..5).map(|r| phi.at(r, c)).sum::<f64>() / 5.0)
        .collect();
    for r in 0..5 {
        for c in 0..3 {
            assert!((out.tensor().at(r, c) - mean[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn self_attention_matches_straight_line_oracle() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params(&mut rng, 4);
        let phi = random(&mut rng, &[3, 4], 1.0);
        let got = self_attention(&TokenMatrix::new(phi.clone()).unwrap(), &p).unwrap();
        let want = attention_oracle(&rows(&phi), &rows(&p.w_q), &rows(&p.w_k), &rows(&p.w_v));
        for (g, w) in got.tensor().data().iter().zip(want.iter().flatten()) {
            assert!((g - w).abs() < 1e-12, "seed {seed}: {g} vs {w}");
        }
    }
}

proptest! {
    #[test]
    fn self_attention_rows_stay_in_value_envelope(seed in 0u64..10_000, t in 1usize..6, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SelfAttentionParams {
            w_q: random(&mut rng, &[d, d], 3.0),
            w_k: random(&mut rng, &[d, d], 3.0),
            w_v: random(&mut rng, &[d, d], 3.0),
        };
        let phi = random(&mut rng, &[t, d], 3.0);
        let out = self_attention(&TokenMatrix::new(phi.clone()).unwrap(), &p).unwrap();
        for c in 0..d {
            let v: Vec<f64> = (0..t).map(|r| (0..d).map(|k| phi.at(r, k) * p.w_v.at(k, c)).sum()).collect();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..t {
                let o = out.tensor().at(r, c);
                prop_assert!(o >= lo - 1e-9 && o <= hi + 1e-9);
            }
        }
    }
}

fn image_encoder(h: usize, w: usize, seed: u64) -> (ModalityEncoder, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = ImageEncoder::new(
        &mut store,
        ImageEncoderConfig::new(h, w),
        TokenDims::default(),
        &mut rng,
    )
    .unwrap();
    (ModalityEncoder::Image(enc), store)
}

#[test]
fn zero_image_with_zero_biases_gives_zero_latent() {
    let (enc, store) = image_encoder(8, 8, 0);
    let mut tape = mda_core::Tape::new();
    let bound = store.bind(&mut tape, false);
    let input = ModalityInput::Image(Tensor::zeros(&[2, 1, 8, 8]));
    let latent = enc.latent(&mut tape, &bound, &input).unwrap();
    assert_eq!(tape.shape(latent), &[2, 128]);
    assert!(tape.value(latent).data().iter().all(|&v| v == 0.0));
}

#[test]
fn every_encoder_emits_t_by_d_tok() {
    let dims = TokenDims::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let (img, img_store) = image_encoder(28, 28, 4);
    let px = random(&mut rng, &[3, 1, 28, 28], 1.0).map(f64::abs);
    let out = img
        .encode_values(&img_store, &ModalityInput::Image(px), &[false; 3])
        .unwrap();
    assert_eq!(out.shape(), &[3, dims.tokens, dims.d_tok]);

    for seq_len in [dims.tokens, 5] {
        let mut store = ParamStore::new();
        let text = ModalityEncoder::Text(
            TextEncoder::new(&mut store, 10, seq_len, dims, &mut rng).unwrap(),
        );
        let out = text
            .encode_values(
                &store,
                &ModalityInput::Tokens(vec![vec![1, 2, 3], vec![4; 9]]),
                &[false, true],
            )
            .unwrap();
        assert_eq!(out.shape(), &[2, dims.tokens, dims.d_tok]);
    }

    let mut store = ParamStore::new();
    let audio = ModalityEncoder::Audio(
        AudioEncoder::new(&mut store, MfccConfig::default(), dims, &mut rng).unwrap(),
    );
    let out = audio
        .encode_values(
            &store,
            &ModalityInput::AudioFeatures(random(&mut rng, &[2, 13], 5.0)),
            &[false; 2],
        )
        .unwrap();
    assert_eq!(out.shape(), &[2, dims.tokens, dims.d_tok]);
}

#[test]
fn wrong_image_shape_is_a_validation_error() {
    let (enc, store) = image_encoder(8, 8, 0);
    let err = enc
        .encode_values(
            &store,
            &ModalityInput::Image(Tensor::zeros(&[1, 1, 8, 12])),
            &[false],
        )
        .unwrap_err();
    assert_eq!(err.kind(), "validation");
    let err = enc
        .encode_values(&store, &ModalityInput::Tokens(vec![vec![1]]), &[false])
        .unwrap_err();
    assert_eq!(err.kind(), "contract");
}

#[test]
fn distinct_mnist_digits_have_distinct_latents() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist");
    let images = mda_core::data::idx::read_images(format!("{root}/images-idx3-ubyte")).unwrap();
    let (enc, store) = image_encoder(28, 28, 0);
    let mut px = images.image(0);
    px.extend(images.image(1));
    let out = enc
        .encode_values(
            &store,
            &ModalityInput::Image(Tensor::new(vec![2, 1, 28, 28], px).unwrap()),
            &[false; 2],
        )
        .unwrap();
    let (a, b) = out.data().split_at(128);
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    assert!(d > 0.0);
}

#[test]
fn text_encoder_contracts() {
    let dims = TokenDims::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let text = ModalityEncoder::Text(TextEncoder::new(&mut store, 17, 8, dims, &mut rng).unwrap());
    let enc = |seqs: Vec<Vec<usize>>| {
        let n = seqs.len();
        text.encode_values(&store, &ModalityInput::Tokens(seqs), &vec![false; n])
    };

    let pad = enc(vec![vec![], vec![0; 8]]).unwrap();
    let (a, b) = pad.data().split_at(pad.len() / 2);
    assert_eq!(a, b);

    let base = vec![1, 5, 9, 13];
    let mut swapped = base.clone();
    swapped[2] = 10;
    let out = enc(vec![base.clone(), base, swapped]).unwrap();
    let chunk = out.len() / 3;
    assert_eq!(out.data()[..chunk], out.data()[chunk..2 * chunk]);
    assert_ne!(out.data()[..chunk], out.data()[2 * chunk..]);

    assert_eq!(enc(vec![vec![17]]).unwrap_err().kind(), "validation");
}

#[test]
fn masked_latent_is_ones_before_attention() {
    let (enc, store) = image_encoder(8, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = ModalityInput::Image(random(&mut rng, &[1, 1, 8, 8], 1.0));
    let b = ModalityInput::Image(random(&mut rng, &[1, 1, 8, 8], 1.0));
    let ma = enc.encode_values(&store, &a, &[true]).unwrap();
    let mb = enc.encode_values(&store, &b, &[true]).unwrap();
    assert_eq!(ma, mb);
    let ones = TokenMatrix::new(Tensor::ones(&[8, 16])).unwrap();
    let want = self_attention(&ones, &enc.attention().params(&store)).unwrap();
    assert_eq!(ma.data(), want.tensor().data());
}

// MFCC

fn fixture_path(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn mfcc_matches_reference_pipeline() {
    let wave = read_wav(fixture_path("digit_fixture.wav")).unwrap();
    assert_eq!(wave.sample_rate, 8000);
    let got = mda_core::encoders::mfcc(&wave.samples, &MfccConfig::default()).unwrap();
    let text = std::fs::read_to_string(fixture_path("digit_fixture.mfcc.csv")).unwrap();
    let want: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(got.shape(), &[want.len(), 13]);
    let worst = want
        .iter()
        .enumerate()
        .flat_map(|(f, row)| row.iter().enumerate().map(move |(c, w)| (f, c, *w)))
        .map(|(f, c, w)| (got.at(f, c) - w).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn silence_sits_on_the_log_floor() {
    let cfg = MfccConfig::default();
    let energies = log_mel_energies(&vec![0.0; 800], &cfg).unwrap();
    assert!(energies.data().iter().all(|&e| e == LOG_FLOOR.ln()));
    let m = mda_core::encoders::mfcc(&vec![0.0; 800], &cfg).unwrap();
    let c0 = LOG_FLOOR.ln() * (cfg.n_mel_filters as f64).sqrt();
    for f in 0..m.shape()[0] {
        assert!((m.at(f, 0) - c0).abs() < 1e-9);
        assert!(m.row(f)[1..].iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn pure_tone_peaks_in_its_filter() {
    let cfg = MfccConfig::default();
    let bank = MelFilterbank::new(&cfg);
    for k in 0..cfg.n_mel_filters {
        let hz = bank.center_hz(k);
        let wave: Vec<f64> = (0..4000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * hz * n as f64 / 8000.0).sin())
            .collect();
        let e = log_mel_energies(&wave, &cfg).unwrap();
        for f in 0..e.shape()[0] {
            let row = e.row(f);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(best, k, "filter {k} ({hz:.1} Hz), frame {f}");
        }
    }
}

#[test]
fn one_hop_shift_barely_moves_the_audio_encoding() {
    let wave = read_wav(fixture_path("digit_fixture.wav")).unwrap();
    let cfg = MfccConfig::default();
    let hop = cfg.hop_length;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let audio = AudioEncoder::new(&mut store, cfg, TokenDims::default(), &mut rng).unwrap();
    let mut shifted = vec![0.0; hop];
    shifted.extend_from_slice(&wave.samples[..wave.samples.len() - hop]);
    let fa = pooled_mfcc(&wave.samples, &cfg).unwrap();
    let fb = pooled_mfcc(&shifted, &cfg).unwrap();
    let feats = Tensor::new(vec![2, 13], [fa, fb].concat()).unwrap();
    let enc = ModalityEncoder::Audio(audio);
    let out = enc
        .encode_values(&store, &ModalityInput::AudioFeatures(feats), &[false; 2])
        .unwrap();
    let (a, b) = out.data().split_at(out.len() / 2);
    let delta: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(delta < 0.1 * norm, "delta {delta} vs norm {norm}");
}
