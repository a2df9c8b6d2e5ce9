//! Colored-background digits with a label/background confounder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::dataset::LabeledImageSet;
use crate::error::{Error, Result};
use crate::ndcore::rng::stream_rng;
use crate::ndcore::Tensor;

pub const PALETTE_SIZE: usize = 20;

/// Twenty background colors; digit `i` owns colors `2i` and `2i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorPalette {
    pub id: String,
    pub colors: Vec<[f32; 3]>,
}

pub fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

impl ColorPalette {
    /// Hues every 18° at S = 0.8, V = 0.9.
    pub fn hsv20() -> Self {
        Self {
            id: "hsv20".into(),
            colors: (0..PALETTE_SIZE)
                .map(|i| hsv_to_rgb(18.0 * i as f64, 0.8, 0.9))
                .collect(),
        }
    }

    pub fn assigned(&self, digit: usize) -> [usize; 2] {
        [2 * digit, 2 * digit + 1]
    }

    /// Class that owns a palette color.
    pub fn owner(&self, color: usize) -> usize {
        color / 2
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.colors.len() {
            for j in i + 1..self.colors.len() {
                let d: f64 = (0..3)
                    .map(|c| (self.colors[i][c] as f64 - self.colors[j][c] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.colors.len() != 2 * num_classes {
            return Err(Error::validation(format!(
                "palette has {} colors, {num_classes} classes need {}",
                self.colors.len(),
                2 * num_classes
            )));
        }
        if self
            .colors
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::validation("palette color outside [0,1]^3"));
        }
        let d = self.min_pairwise_distance();
        if d <= 0.05 {
            return Err(Error::validation(format!(
                "palette colors too close (min distance {d:.4})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// Background drawn from the digit's two colors.
    TrainConfounded,
    TestConfounded,
    /// Background drawn uniformly from all twenty colors.
    TestCausal,
    /// Background hue drawn uniformly from the continuous circle.
    TestCausalUnseen,
}

impl fmt::Display for ColorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorMode::TrainConfounded => "train_confounded",
            ColorMode::TestConfounded => "test_confounded",
            ColorMode::TestCausal => "test_causal",
            ColorMode::TestCausalUnseen => "test_causal_unseen",
        })
    }
}

impl FromStr for ColorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train_confounded" => ColorMode::TrainConfounded,
            "test_confounded" => ColorMode::TestConfounded,
            "test_causal" => ColorMode::TestCausal,
            "test_causal_unseen" => ColorMode::TestCausalUnseen,
            other => {
                return Err(Error::validation(format!(
                    "unknown color mode `{other}`"
                )))
            }
        })
    }
}

/// Paints a single-channel image `[H*W]` over background `bg` into `out` `[H*W*3]`.
pub fn paint(gray: &[f32], bg: [f32; 3], out: &mut [f32]) {
    for (px, &p) in gray.iter().enumerate() {
        for c in 0..3 {
            out[px * 3 + c] = p + (1.0 - p) * bg[c];
        }
    }
}

/// Colors every digit of a grayscale set. Sample `i` uses the stream `(seed, i)`.
pub fn synth_colored_mnist(
    gray: &LabeledImageSet,
    palette: &ColorPalette,
    mode: ColorMode,
    seed: u64,
) -> Result<LabeledImageSet> {
    if gray.channels() != 1 {
        return Err(Error::dim(format!(
            "expected single-channel images, got {} channels",
            gray.channels()
        )));
    }
    palette.validate(gray.num_classes)?;
    let n = gray.len();
    let [_, h, w, _] = gray.images.shape().try_into().expect("validated 4-d");
    let pix = h * w;
    let mut data = vec![0.0f32; n * pix * 3];
    let zdim = if mode == ColorMode::TestCausalUnseen { 1 } else { palette.colors.len() };
    let mut z = vec![0.0f32; n * zdim];
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let bg = match mode {
            ColorMode::TrainConfounded | ColorMode::TestConfounded => {
                let c = palette.assigned(gray.labels[i])[rng.gen_range(0..2)];
                z[i * zdim + c] = 1.0;
                palette.colors[c]
            }
            ColorMode::TestCausal => {
                let c = rng.gen_range(0..palette.colors.len());
                z[i * zdim + c] = 1.0;
                palette.colors[c]
            }
            ColorMode::TestCausalUnseen => {
                let hue: f64 = rng.gen_range(0.0..1.0);
                z[i] = hue as f32;
                hsv_to_rgb(360.0 * hue, 0.8, 0.9)
            }
        };
        paint(
            gray.images.row(i),
            bg,
            &mut data[i * pix * 3..(i + 1) * pix * 3],
        );
    }
    LabeledImageSet::new(
        Tensor::new(vec![n, h, w, 3], data)?,
        gray.labels.clone(),
        Some(Tensor::new(vec![n, zdim], z)?),
        palette.id.clone(),
        gray.num_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::dataset::NUM_CLASSES;

    fn gray_set(n: usize, fill: f32) -> LabeledImageSet {
        LabeledImageSet::new(
            Tensor::full(&[n, 2, 2, 1], fill),
            (0..n).map(|i| i % NUM_CLASSES).collect(),
            None,
            "gray",
            NUM_CLASSES,
        )
        .unwrap()
    }

    #[test]
    fn palette_is_separable() {
        let p = ColorPalette::hsv20();
        p.validate(NUM_CLASSES).unwrap();
        assert!(p.min_pairwise_distance() > 0.05);
        assert_eq!(p.assigned(3), [6, 7]);
    }

    #[test]
    fn foreground_stays_white_background_is_exact() {
        let p = ColorPalette::hsv20();
        let white = synth_colored_mnist(&gray_set(10, 1.0), &p, ColorMode::TestCausal, 1).unwrap();
        assert!(white.images.data().iter().all(|&v| v == 1.0));
        let dark = synth_colored_mnist(&gray_set(10, 0.0), &p, ColorMode::TrainConfounded, 1).unwrap();
        let colors = dark.nuisance_argmax().unwrap();
        for i in 0..10 {
            assert_eq!(&dark.images.row(i)[..3], &p.colors[colors[i]]);
        }
    }

    #[test]
    fn confounded_colors_belong_to_label() {
        let p = ColorPalette::hsv20();
        let set = synth_colored_mnist(&gray_set(500, 0.3), &p, ColorMode::TrainConfounded, 4).unwrap();
        for (c, &y) in set.nuisance_argmax().unwrap().iter().zip(&set.labels) {
            assert!(p.assigned(y).contains(c));
        }
    }

    #[test]
    fn rejects_rgb_input() {
        let set = LabeledImageSet::new(Tensor::zeros(&[1, 2, 2, 3]), vec![0], None, "x", 10).unwrap();
        assert!(matches!(
            synth_colored_mnist(&set, &ColorPalette::hsv20(), ColorMode::TestCausal, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let p = ColorPalette::hsv20();
        let a = synth_colored_mnist(&gray_set(50, 0.5), &p, ColorMode::TestCausal, 9).unwrap();
        let b = synth_colored_mnist(&gray_set(50, 0.5), &p, ColorMode::TestCausal, 9).unwrap();
        assert_eq!(a, b);
    }
}
