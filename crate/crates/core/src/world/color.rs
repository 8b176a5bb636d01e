use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ingest::{LabeledImage, Pixels};
use super::WorldError;

pub type Rgb = [u8; 3];

/// Digit-color prototypes, indexed `0..10`.
pub const DIGIT_POOL: [Rgb; 10] = [
    [255, 50, 50],
    [50, 50, 255],
    [50, 255, 50],
    [255, 255, 50],
    [255, 50, 255],
    [50, 255, 255],
    [255, 140, 50],
    [140, 50, 255],
    [0, 170, 170],
    [180, 160, 20],
];

/// Background prototypes: the same colors in reverse-offset order.
pub const BG_POOL: [Rgb; 10] = [
    [255, 255, 50],
    [50, 255, 50],
    [50, 50, 255],
    [255, 50, 50],
    [180, 160, 20],
    [0, 170, 170],
    [140, 50, 255],
    [255, 140, 50],
    [50, 255, 255],
    [255, 50, 255],
];

/// Pixels below this intensity count as background.
const BACKGROUND_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    Digit,
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorizeConfig {
    pub digit_pool: [Rgb; 10],
    pub bg_pool: [Rgb; 10],
    pub p_digit: f64,
    pub p_bg: f64,
    pub removal_width: usize,
    pub seed: u64,
}

impl Default for ColorizeConfig {
    fn default() -> Self {
        Self {
            digit_pool: DIGIT_POOL,
            bg_pool: BG_POOL,
            p_digit: 0.8,
            p_bg: 0.8,
            removal_width: 3,
            seed: 0,
        }
    }
}

impl ColorizeConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        for (name, pool) in [("digit", &self.digit_pool), ("background", &self.bg_pool)] {
            for i in 0..pool.len() {
                if pool[i + 1..].contains(&pool[i]) {
                    return Err(WorldError::Colorize(format!(
                        "{name} pool repeats color {:?}",
                        pool[i]
                    )));
                }
            }
        }
        for (name, p) in [("p_digit", self.p_digit), ("p_bg", self.p_bg)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(WorldError::Colorize(format!(
                    "{name} = {p} is not in [0, 1]"
                )));
            }
        }
        if self.removal_width >= 10 {
            return Err(WorldError::Colorize(format!(
                "removal width {} leaves no allowed colors",
                self.removal_width
            )));
        }
        Ok(())
    }
}

/// Pool indices left after removing `removal_width` consecutive entries
/// starting at `label`, with wrap-around.
pub fn allowed_set(label: usize, pool: &[Rgb], removal_width: usize) -> Vec<usize> {
    let n = pool.len();
    (0..n)
        .filter(|&i| (i + n - label % n) % n >= removal_width)
        .collect()
}

/// With probability `p` a uniform pick from the label's allowed set;
/// otherwise a uniform other label `j` and a uniform pick from its set.
pub fn sample_biased_color<R: Rng + ?Sized>(
    label: usize,
    pool: &[Rgb],
    p: f64,
    removal_width: usize,
    rng: &mut R,
) -> usize {
    let n = pool.len();
    let source = if rng.random::<f64>() < p {
        label
    } else {
        let k = rng.random_range(0..n - 1);
        if k >= label {
            k + 1
        } else {
            k
        }
    };
    let allowed = allowed_set(source, pool, removal_width);
    allowed[rng.random_range(0..allowed.len())]
}

/// Colors a grayscale image. Digit mode scales the prototype by intensity
/// over a black background. Background mode paints pixels below 0.1 with
/// the prototype and blends strokes toward white by their intensity.
pub fn colorize(img: &LabeledImage, mode: ColorMode, color: Rgb) -> LabeledImage {
    let proto = color.map(|v| v as f64 / 255.0);
    let Pixels::Gray(gray) = &img.pixels else {
        return img.clone();
    };
    let mut rgb = Vec::with_capacity(gray.len() * 3);
    for &v in gray {
        let v = v.clamp(0.0, 1.0);
        for &p in &proto {
            rgb.push(match mode {
                ColorMode::Digit => v * p,
                ColorMode::Background if v < BACKGROUND_THRESHOLD => p,
                ColorMode::Background => v + (1.0 - v) * p,
            });
        }
    }
    LabeledImage {
        width: img.width,
        height: img.height,
        pixels: Pixels::Rgb(rgb),
        label: img.label,
        domain: img.domain,
    }
}
