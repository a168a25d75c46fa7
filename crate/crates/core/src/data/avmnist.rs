//! Digit images paired with spoken-digit clips.
//!
//! Clips follow the Free Spoken Digit naming `<digit>_<speaker>_<take>.wav`
//! and are visited in sorted file-name order. For each digit the matching
//! images are shuffled with the pairing seed and handed out without
//! replacement, so every clip gets a distinct image of its own label.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::{read_images, read_labels};
use super::wav::read_wav;
use super::{Dataset, ModalityKind, Payload, Sample};
use crate::error::{Error, Result};

/// A clip file with its parsed name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipName {
    pub path: PathBuf,
    pub digit: usize,
    pub speaker: String,
    pub take: u32,
}

pub fn parse_clip_name(path: &Path) -> Result<ClipName> {
    let bad = || Error::Format {
        kind: "clip name",
        message: format!("{} is not `<digit>_<speaker>_<take>.wav`", path.display()),
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(bad)?;
    let parts: Vec<&str> = stem.split('_').collect();
    let [digit, speaker, take] = parts[..] else {
        return Err(bad());
    };
    let digit: usize = digit.parse().map_err(|_| bad())?;
    if digit > 9 || speaker.is_empty() {
        return Err(bad());
    }
    Ok(ClipName {
        path: path.to_path_buf(),
        digit,
        speaker: speaker.to_string(),
        take: take.parse().map_err(|_| bad())?,
    })
}

/// `.wav` files of `dir` in file-name order.
pub fn list_clips(dir: &Path) -> Result<Vec<ClipName>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths.iter().map(|p| parse_clip_name(p)).collect()
}

/// Modalities are `[image, audio]`; sample ids follow clip order.
pub fn load_avmnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    audio_dir: impl AsRef<Path>,
    pairing_seed: u64,
) -> Result<Dataset> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != images.count() {
        return Err(Error::Format {
            kind: "idx",
            message: format!("{} labels for {} images", labels.len(), images.count()),
        });
    }
    let clips = list_clips(audio_dir.as_ref())?;
    if clips.is_empty() {
        return Err(Error::Validation(format!(
            "no .wav clips in {}",
            audio_dir.as_ref().display()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(pairing_seed);
    let mut pools: Vec<Vec<usize>> = (0..10)
        .map(|d| {
            let mut pool: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] as usize == d)
                .collect();
            pool.shuffle(&mut rng);
            pool
        })
        .collect();

    let mut sample_rate = None;
    let mut samples = Vec::with_capacity(clips.len());
    for (id, clip) in clips.iter().enumerate() {
        let image = pools[clip.digit].pop().ok_or_else(|| {
            Error::Pairing(format!(
                "no unused image with label {} left for {}",
                clip.digit,
                clip.path.display()
            ))
        })?;
        let wave = read_wav(&clip.path)?;
        match sample_rate {
            None => sample_rate = Some(wave.sample_rate),
            Some(r) if r != wave.sample_rate => {
                return Err(Error::Validation(format!(
                    "{} is sampled at {} Hz, earlier clips at {r} Hz",
                    clip.path.display(),
                    wave.sample_rate
                )))
            }
            Some(_) => {}
        }
        samples.push(Sample {
            id: id as u64,
            label: clip.digit,
            payloads: vec![
                Some(Payload::Image(images.image(image))),
                Some(Payload::Waveform(wave.samples)),
            ],
        });
    }
    Ok(Dataset {
        name: "avmnist".into(),
        classes: 10,
        modalities: vec![ModalityKind::Image, ModalityKind::Audio],
        image_shape: Some((images.rows, images.cols)),
        text: None,
        sample_rate,
        samples,
    })
}
