use std::collections::HashSet;
use std::path::Path;

use mda_core::data::idx::{encode_images, encode_labels, IdxImages};
use mda_core::data::manifest::{read_dataset, write_dataset, MANIFEST_FILE};
use mda_core::data::synthetic::{default_tones, project_tones};
use mda_core::data::wav::{write_wav_pcm16, Waveform};
use mda_core::data::{
    bayes_oracle, gen_synthetic, load_avmnist, split, Dataset, ModalityKind, Payload, SyntheticSpec,
};
use mda_core::encoders::{ModalityEncoder, ModalityInput, TextEncoder, TokenDims};
use mda_core::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(ds: &Dataset, i: usize) -> &[f64] {
    match ds.samples[i].payloads[0].as_ref().unwrap() {
        Payload::Image(v) => v,
        _ => unreachable!(),
    }
}

fn tokens(ds: &Dataset, i: usize) -> &[usize] {
    match ds.samples[i].payloads[1].as_ref().unwrap() {
        Payload::Tokens(t) => t,
        _ => unreachable!(),
    }
}

fn wave(ds: &Dataset, i: usize) -> &[f64] {
    match ds.samples[i].payloads[2].as_ref().unwrap() {
        Payload::Waveform(w) => w,
        _ => unreachable!(),
    }
}

#[test]
fn synthetic_generation_is_bit_reproducible() {
    let spec = SyntheticSpec::standard(0);
    let a = gen_synthetic(&spec, 40, 9).unwrap();
    let b = gen_synthetic(&spec, 40, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(
        a.content_hash(),
        gen_synthetic(&spec, 40, 10).unwrap().content_hash()
    );
}

#[test]
fn synthetic_shapes_and_balance() {
    let spec = SyntheticSpec::standard(0);
    let ds = gen_synthetic(&spec, 403, 2).unwrap();
    ds.validate().unwrap();
    assert_eq!(
        ds.modalities,
        vec![ModalityKind::Image, ModalityKind::Text, ModalityKind::Audio]
    );
    let mut counts = [0usize; 4];
    ds.samples.iter().for_each(|s| counts[s.label] += 1);
    assert!(
        counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1,
        "{counts:?}"
    );
    assert_eq!(image(&ds, 0).len(), 256);
    assert_eq!(tokens(&ds, 0).len(), 4);
    assert_eq!(wave(&ds, 0).len(), 2000);
    let vocab = ds.text.as_ref().unwrap().slot_vocab();
    for i in 0..ds.len() {
        for (slot, t) in tokens(&ds, i).iter().enumerate() {
            assert!(vocab[slot].contains(t));
        }
    }
}

#[test]
fn invalid_specs_and_sizes_are_rejected() {
    let spec = SyntheticSpec::standard(0);
    assert_eq!(gen_synthetic(&spec, 3, 0).unwrap_err().kind(), "validation");
    let mut bad = spec.clone();
    bad.image_sigma = 0.0;
    assert_eq!(gen_synthetic(&bad, 10, 0).unwrap_err().kind(), "validation");
    let mut bad = spec.clone();
    bad.image_prototypes[1][0] += 0.5;
    assert_eq!(gen_synthetic(&bad, 10, 0).unwrap_err().kind(), "validation");
    let mut bad = spec.clone();
    bad.audio.tone_hz[0] = 229.0;
    assert_eq!(gen_synthetic(&bad, 10, 0).unwrap_err().kind(), "validation");
    let mut bad = spec;
    bad.text_slots[2].class_probs[0][0] = 0.9;
    assert_eq!(gen_synthetic(&bad, 10, 0).unwrap_err().kind(), "validation");
}

#[test]
fn tones_sit_on_clip_bins_near_filter_centers() {
    assert_eq!(default_tones(), vec![228.0, 716.0, 1464.0, 2604.0]);
}

#[test]
fn tone_projection_recovers_amplitudes() {
    let spec = SyntheticSpec::standard(0);
    let amps = [0.3, -0.1, 0.25, 0.05];
    let tones = default_tones();
    let x: Vec<f64> = (0..2000)
        .map(|t| {
            amps.iter()
                .zip(&tones)
                .map(|(a, f)| a * (2.0 * std::f64::consts::PI * f * t as f64 / 8000.0).sin())
                .sum()
        })
        .collect();
    for (got, want) in project_tones(&spec, &x).iter().zip(amps) {
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn noiseless_spec_is_perfectly_separable() {
    let spec = SyntheticSpec::noiseless(3);
    let ds = gen_synthetic(&spec, 200, 1).unwrap();
    let acc = bayes_oracle(&spec, &ds).unwrap();
    assert_eq!(acc.per_modality, vec![1.0; 3]);
    assert_eq!(acc.joint, 1.0);
}

/// 99% normal-approximation interval for a proportion.
fn within_ci(acc: f64, p: f64, n: usize) -> bool {
    (acc - p).abs() <= 2.576 * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn pure_noise_modality_scores_chance() {
    let mut spec = SyntheticSpec::standard(0);
    let shared = spec.image_prototypes[0].clone();
    spec.image_prototypes
        .iter_mut()
        .for_each(|p| *p = shared.clone());
    let n = 2000;
    let ds = gen_synthetic(&spec, n, 5).unwrap();
    let acc = bayes_oracle(&spec, &ds).unwrap();
    // Every class ties, so the oracle always answers class 0: exactly 1/C
    // of the balanced set.
    assert!(
        within_ci(acc.per_modality[0], 0.25, n),
        "{}",
        acc.per_modality[0]
    );
}

#[test]
fn joint_is_at_least_every_view() {
    for (proto, seed) in [(0, 1), (1, 2), (7, 3)] {
        for (sigma, p, amp) in [(0.61, 0.53, 0.049), (1.0, 0.4, 0.08), (0.3, 0.7, 0.02)] {
            let spec = SyntheticSpec::with_noise(proto, sigma, p, amp);
            let ds = gen_synthetic(&spec, 600, seed).unwrap();
            let acc = bayes_oracle(&spec, &ds).unwrap();
            let best = acc.per_modality.iter().cloned().fold(0.0, f64::max);
            assert!(acc.joint >= best, "{acc:?}");
        }
    }
}

/// Straight-line oracle: scaled squared distance to each prototype, summed
/// slot log-probabilities, scaled squared distance to each amplitude mean.
fn independent_oracle(spec: &SyntheticSpec, ds: &Dataset) -> (Vec<f64>, f64) {
    let c = spec.classes;
    let a = &spec.audio;
    let amp_var = a.amp_sigma.powi(2) + 2.0 * a.noise_sigma.powi(2) / a.n_samples as f64;
    let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
    let mut hits = [0usize; 3];
    let mut joint = 0usize;
    for i in 0..ds.len() {
        let x = image(ds, i);
        let img: Vec<f64> = (0..c)
            .map(|k| {
                let d2: f64 = spec.image_prototypes[k]
                    .iter()
                    .zip(x)
                    .map(|(p, v)| (p - v).powi(2))
                    .sum();
                -d2 / (2.0 * spec.image_sigma.powi(2))
            })
            .collect();
        let schema = spec.text_schema();
        let txt: Vec<f64> = (0..c)
            .map(|k| {
                tokens(ds, i)
                    .iter()
                    .enumerate()
                    .map(|(s, &tok)| {
                        let w = schema.slots[s]
                            .tokens
                            .iter()
                            .position(|t| t.0 == tok)
                            .unwrap();
                        spec.text_slots[s].class_probs[k][w].ln()
                    })
                    .sum()
            })
            .collect();
        let amps = project_tones(spec, wave(ds, i));
        let aud: Vec<f64> = (0..c)
            .map(|k| {
                let d2: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - a.base_amplitude - a.class_offsets[k][j]).powi(2))
                    .sum();
                -d2 / (2.0 * amp_var)
            })
            .collect();
        let label = ds.samples[i].label;
        for (h, ll) in hits.iter_mut().zip([&img, &txt, &aud]) {
            *h += usize::from(argmax(ll) == label);
        }
        let total: Vec<f64> = (0..c).map(|k| img[k] + txt[k] + aud[k]).collect();
        joint += usize::from(argmax(&total) == label);
    }
    let n = ds.len() as f64;
    (
        hits.iter().map(|&h| h as f64 / n).collect(),
        joint as f64 / n,
    )
}

#[test]
fn standard_spec_oracle_values_are_frozen() {
    let spec = SyntheticSpec::standard(0);
    let ds = gen_synthetic(&spec, 1500, 1).unwrap();
    assert_eq!(
        ds.content_hash(),
        "7339070e1d2fc7b44a20f79325c40533f2b3ce61c4d49856e6949f92f4519aba"
    );
    let acc = bayes_oracle(&spec, &ds).unwrap();
    let (views, joint) = independent_oracle(&spec, &ds);
    assert_eq!(acc.per_modality, views);
    assert_eq!(acc.joint, joint);
    let frozen = [1121.0 / 1500.0, 1107.0 / 1500.0, 1134.0 / 1500.0];
    for (got, want) in acc.per_modality.iter().zip(frozen) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((acc.joint - 1418.0 / 1500.0).abs() < 1e-12, "{}", acc.joint);
}

#[test]
fn standard_spec_difficulty() {
    let spec = SyntheticSpec::standard(0);
    let ds = gen_synthetic(&spec, 6000, 11).unwrap();
    let acc = bayes_oracle(&spec, &ds).unwrap();
    for a in &acc.per_modality {
        assert!((0.70..=0.78).contains(a), "{acc:?}");
    }
    assert!((0.92..=0.96).contains(&acc.joint), "{acc:?}");
}

#[test]
fn oracle_rejects_mismatched_datasets() {
    let spec = SyntheticSpec::standard(0);
    let mut ds = gen_synthetic(&spec, 8, 0).unwrap();
    ds.samples[0].payloads[0] = Some(Payload::Image(vec![0.0; 10]));
    assert_eq!(bayes_oracle(&spec, &ds).unwrap_err().kind(), "validation");
    let mut other = SyntheticSpec::standard(0);
    other.classes = 3;
    assert!(bayes_oracle(&other, &gen_synthetic(&spec, 8, 0).unwrap()).is_err());
}

#[test]
fn contradictory_attribute_changes_the_text_encoding() {
    let spec = SyntheticSpec::standard(0);
    let schema = spec.text_schema();
    let round = schema.token_id("shape", "round").unwrap();
    let lobulated = schema.token_id("shape", "lobulated").unwrap();
    let rest: Vec<usize> = ["echo", "location", "size"]
        .iter()
        .map(|s| schema.slots.iter().find(|x| x.name == *s).unwrap().tokens[0].0)
        .collect();
    let clean = [vec![round], rest.clone()].concat();
    let noisy = [vec![lobulated], rest].concat();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dims = TokenDims::new(32, 4).unwrap();
    let enc = ModalityEncoder::Text(
        TextEncoder::new(&mut store, schema.vocab_size(), 4, dims, &mut rng).unwrap(),
    );
    let out = enc
        .encode_values(
            &store,
            &ModalityInput::Tokens(vec![clean.clone(), noisy, clean]),
            &[false; 3],
        )
        .unwrap();
    let per = dims.tokens * dims.d_tok;
    let (a, b, c) = (
        &out.data()[..per],
        &out.data()[per..2 * per],
        &out.data()[2 * per..],
    );
    assert_ne!(a, b);
    assert_eq!(a, c);
}

#[test]
fn split_seventy_thirty_of_fifteen_hundred() {
    let spec = SyntheticSpec::standard(0);
    let ds = gen_synthetic(&spec, 1500, 4).unwrap();
    let s = split(&ds, 0.7, 21).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (1050, 450));
    let train: HashSet<u64> = s.train.iter().copied().collect();
    let test: HashSet<u64> = s.test.iter().copied().collect();
    assert!(train.is_disjoint(&test));
    let all: HashSet<u64> = ds.ids().into_iter().collect();
    assert_eq!(train.union(&test).copied().collect::<HashSet<_>>(), all);
    for c in 0..4 {
        let total = ds.samples.iter().filter(|x| x.label == c).count() as f64;
        let in_train = ds
            .samples
            .iter()
            .filter(|x| x.label == c && train.contains(&x.id))
            .count() as f64;
        assert!(
            (in_train - 0.7 * total).abs() <= 1.0,
            "class {c}: {in_train} of {total}"
        );
    }
    assert_eq!(split(&ds, 0.7, 21).unwrap(), s);
    assert_ne!(split(&ds, 0.7, 22).unwrap().train, s.train);
}

#[test]
fn split_ratio_must_be_inside_unit_interval() {
    let ds = gen_synthetic(&SyntheticSpec::standard(0), 20, 0).unwrap();
    for r in [0.0, 1.0, -0.2, 1.3, f64::NAN] {
        assert_eq!(split(&ds, r, 0).unwrap_err().kind(), "validation");
    }
}

#[test]
fn manifest_round_trip_and_tamper_detection() {
    let mut ds = gen_synthetic(&SyntheticSpec::standard(0), 12, 3).unwrap();
    ds.samples[2].payloads[1] = None;
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &ds).unwrap();
    assert_eq!(manifest.samples.len(), 12);
    assert!(manifest.samples[2].payloads[1].is_none());
    assert_eq!(manifest.content_hash, ds.content_hash());
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);

    let json = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    for field in [
        "\"content_hash\"",
        "\"sha256\"",
        "\"path\": \"audio/0.f64\"",
        "\"label\"",
    ] {
        assert!(json.contains(field), "missing {field}");
    }
    std::fs::write(dir.path().join("text/5.txt"), "1 7 12 16\n").unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap_err().kind(), "format");
}

fn write_idx(dir: &Path, labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let pixels: Vec<u8> = labels
        .iter()
        .enumerate()
        .flat_map(|(i, &l)| {
            (0..16).map(move |p| {
                if p == 0 {
                    l * 20 + (i / 3) as u8
                } else {
                    (p * 13) as u8
                }
            })
        })
        .collect();
    let images = IdxImages {
        rows: 4,
        cols: 4,
        pixels,
    };
    let (ip, lp) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
    std::fs::write(&ip, encode_images(&images)).unwrap();
    std::fs::write(&lp, encode_labels(labels)).unwrap();
    (ip, lp)
}

fn write_clip(dir: &Path, name: &str, digit: usize) {
    let samples = (0..400)
        .map(|t| 0.1 * ((t * (digit + 1)) as f64 * 0.05).sin())
        .collect();
    write_wav_pcm16(
        dir.join(name),
        &Waveform {
            sample_rate: 8000,
            samples,
        },
    )
    .unwrap();
}

fn clip_dir(root: &Path, per_digit: &[(usize, usize)]) -> std::path::PathBuf {
    let audio = root.join("audio");
    std::fs::create_dir_all(&audio).unwrap();
    for &(digit, takes) in per_digit {
        for take in 0..takes {
            write_clip(&audio, &format!("{digit}_spk_{take}.wav"), digit);
        }
    }
    audio
}

/// Label of a test IDX image, recovered from its first pixel. The first
/// pixel is unique per image while there are fewer than 60 images.
fn image_label(px: &[f64], labels: &[u8]) -> usize {
    let first = (px[0] * 255.0).round() as u8;
    labels
        .iter()
        .position(|&l| (l * 20..l * 20 + 20).contains(&first))
        .map(|i| labels[i] as usize)
        .unwrap()
}

#[test]
fn avmnist_pairs_clips_with_same_label_images() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..30).map(|i| (i % 3) as u8).collect();
    let (ip, lp) = write_idx(dir.path(), &labels);
    let audio = clip_dir(dir.path(), &[(0, 4), (1, 10), (2, 3)]);
    let ds = load_avmnist(&ip, &lp, &audio, 5).unwrap();
    assert_eq!(ds.len(), 17);
    assert_eq!(
        ds.modalities,
        vec![ModalityKind::Image, ModalityKind::Audio]
    );
    assert_eq!(ds.sample_rate, Some(8000));
    let mut seen = HashSet::new();
    for s in &ds.samples {
        let Some(Payload::Image(px)) = &s.payloads[0] else {
            panic!()
        };
        assert!(px.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(image_label(px, &labels), s.label);
        assert!(seen.insert(px[0].to_bits()), "image reused");
    }
    assert_eq!(load_avmnist(&ip, &lp, &audio, 5).unwrap(), ds);
    assert_ne!(
        load_avmnist(&ip, &lp, &audio, 6).unwrap().content_hash(),
        ds.content_hash()
    );
}

#[test]
fn avmnist_runs_out_of_images() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..9).map(|i| (i % 3) as u8).collect();
    let (ip, lp) = write_idx(dir.path(), &labels);
    let audio = clip_dir(dir.path(), &[(2, 4)]);
    assert_eq!(
        load_avmnist(&ip, &lp, &audio, 0).unwrap_err().kind(),
        "pairing"
    );
    let audio = clip_dir(dir.path(), &[(7, 1)]);
    assert_eq!(
        load_avmnist(&ip, &lp, &audio, 0).unwrap_err().kind(),
        "pairing"
    );
}

#[test]
fn avmnist_rejects_malformed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..6).map(|i| (i % 3) as u8).collect();
    let (ip, lp) = write_idx(dir.path(), &labels);
    let audio = clip_dir(dir.path(), &[(1, 1)]);

    let mut bytes = std::fs::read(&ip).unwrap();
    bytes[3] = 0x01;
    let bad_idx = dir.path().join("bad-idx");
    std::fs::write(&bad_idx, bytes).unwrap();
    assert_eq!(
        load_avmnist(&bad_idx, &lp, &audio, 0).unwrap_err().kind(),
        "format"
    );

    std::fs::write(audio.join("1_spk_9.wav"), b"RIFF????WAVEjunk").unwrap();
    assert_eq!(
        load_avmnist(&ip, &lp, &audio, 0).unwrap_err().kind(),
        "format"
    );
    std::fs::remove_file(audio.join("1_spk_9.wav")).unwrap();

    write_clip(&audio, "one.wav", 1);
    assert_eq!(
        load_avmnist(&ip, &lp, &audio, 0).unwrap_err().kind(),
        "format"
    );
}

#[test]
fn bundled_mnist_subset_is_balanced() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let labels = mda_core::data::idx::read_labels(root.join("labels-idx1-ubyte")).unwrap();
    let images = mda_core::data::idx::read_images(root.join("images-idx3-ubyte")).unwrap();
    assert_eq!((images.count(), images.rows, images.cols), (5000, 28, 28));
    for d in 0..10u8 {
        assert_eq!(labels.iter().filter(|&&l| l == d).count(), 500);
    }
}
