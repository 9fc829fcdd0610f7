//! Train-time augmentation. A [`AugmentPlan`] holds every random choice for one
//! sample; [`augment`] draws a plan from the `(seed, epoch, index)` stream and applies it.

use rand::Rng;

use crate::preprocess::{hist_equalize, Image, ImageError, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterRanges {
    /// Multiplicative factor ranges.
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    /// Additive hue shift range, in turns.
    pub hue: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPreset {
    pub name: String,
    pub rotate_p: f64,
    pub max_rotate_deg: f64,
    /// Random crop to the model input size.
    pub crop: bool,
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub jitter: Option<JitterRanges>,
    pub equalize: bool,
}

impl AugmentPreset {
    /// Rotation (p 0.2, ±10°), random crop, horizontal flip (p 0.3), equalisation.
    pub fn main_text() -> Self {
        Self {
            name: "main_text".into(),
            rotate_p: 0.2,
            max_rotate_deg: 10.0,
            crop: true,
            hflip_p: 0.3,
            vflip_p: 0.0,
            jitter: None,
            equalize: true,
        }
    }

    /// Colour jitter (factors in [0.95, 1.05], hue in [-0.05, 0.05]) and both flips at p 0.5.
    pub fn appendix() -> Self {
        Self {
            name: "appendix".into(),
            rotate_p: 0.0,
            max_rotate_deg: 0.0,
            crop: false,
            hflip_p: 0.5,
            vflip_p: 0.5,
            jitter: Some(JitterRanges {
                brightness: (0.95, 1.05),
                contrast: (0.95, 1.05),
                saturation: (0.95, 1.05),
                hue: (-0.05, 0.05),
            }),
            equalize: false,
        }
    }

    pub fn none() -> Self {
        Self {
            name: "none".into(),
            rotate_p: 0.0,
            max_rotate_deg: 0.0,
            crop: false,
            hflip_p: 0.0,
            vflip_p: 0.0,
            jitter: None,
            equalize: false,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "main_text" => Some(Self::main_text()),
            "appendix" => Some(Self::appendix()),
            "none" => Some(Self::none()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("rotate_p", self.rotate_p), ("hflip_p", self.hflip_p), ("vflip_p", self.vflip_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ImageError::Shape(format!("augment {what} = {p} outside [0, 1]")));
            }
        }
        if self.max_rotate_deg < 0.0 {
            return Err(ImageError::Shape("augment rotation range must be non-negative".into()));
        }
        if let Some(j) = self.jitter {
            for (lo, hi) in [j.brightness, j.contrast, j.saturation, j.hue] {
                if lo > hi {
                    return Err(ImageError::Shape(format!("augment jitter range ({lo}, {hi})")));
                }
            }
        }
        Ok(())
    }
}

/// Every random choice for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub rotate_deg: Option<f64>,
    /// `(top, left)` of the crop window.
    pub crop_at: Option<(usize, usize)>,
    pub hflip: bool,
    pub vflip: bool,
    /// `(brightness, contrast, saturation, hue)`.
    pub jitter: (f64, f64, f64, f64),
}

impl AugmentPlan {
    /// No-op choices: no rotation or flips, centred crop, unit jitter.
    pub fn identity(preset: &AugmentPreset, h: usize, w: usize, out: usize) -> Self {
        Self {
            rotate_deg: None,
            crop_at: preset.crop.then(|| ((h.saturating_sub(out)) / 2, (w.saturating_sub(out)) / 2)),
            hflip: false,
            vflip: false,
            jitter: (1.0, 1.0, 1.0, 0.0),
        }
    }

    pub fn sample<R: Rng>(preset: &AugmentPreset, h: usize, w: usize, out: usize, rng: &mut R) -> Result<Self> {
        if preset.crop && (h < out || w < out) {
            return Err(ImageError::Shape(format!("cannot crop {out}x{out} from {h}x{w}")));
        }
        let rotate_deg = (rng.random::<f64>() < preset.rotate_p)
            .then(|| rng.random_range(-preset.max_rotate_deg..=preset.max_rotate_deg));
        let crop_at = preset
            .crop
            .then(|| (rng.random_range(0..=h - out), rng.random_range(0..=w - out)));
        let hflip = rng.random::<f64>() < preset.hflip_p;
        let vflip = rng.random::<f64>() < preset.vflip_p;
        let jitter = match preset.jitter {
            None => (1.0, 1.0, 1.0, 0.0),
            Some(j) => {
                let mut u = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..=hi) };
                (u(j.brightness), u(j.contrast), u(j.saturation), u(j.hue))
            }
        };
        Ok(Self {
            rotate_deg,
            crop_at,
            hflip,
            vflip,
            jitter,
        })
    }

    /// Rotation, crop, colour jitter, flips, then equalisation if the preset asks for it.
    pub fn apply(&self, img: &Image, preset: &AugmentPreset, out: usize) -> Result<Image> {
        let mut x = match self.rotate_deg {
            Some(deg) => img.rotate(deg),
            None => img.clone(),
        };
        if let Some((top, left)) = self.crop_at {
            x = x.crop(top, left, out, out)?;
        }
        let (b, c, s, hue) = self.jitter;
        x = color_jitter(&x, b, c, s, hue);
        if self.hflip {
            x = x.flip_horizontal();
        }
        if self.vflip {
            x = x.flip_vertical();
        }
        if preset.equalize {
            x = hist_equalize(&x);
        }
        Ok(x)
    }
}

/// Draws and applies a plan from the `(seed, epoch, index)` stream. Output values stay in `[0, 1]`.
pub fn augment(img: &Image, preset: &AugmentPreset, out: usize, seed: u64, epoch: u64, index: u64) -> Result<Image> {
    let mut rng = seeds::rng(seed, &[epoch, index]);
    let plan = AugmentPlan::sample(preset, img.height(), img.width(), out, &mut rng)?;
    plan.apply(img, preset, out)
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness, contrast and saturation factors, then an additive hue shift.
/// Factors equal to one (and a zero hue shift) leave the image untouched.
pub fn color_jitter(img: &Image, brightness: f64, contrast: f64, saturation: f64, hue: f64) -> Image {
    let mut x = img.clone();
    if brightness != 1.0 {
        x = x.map(|v| (v * brightness).clamp(0.0, 1.0));
    }
    if contrast != 1.0 {
        let m = if x.channels() == 3 {
            let n = x.height() * x.width();
            (0..n)
                .map(|i| luma(x.plane(0)[i], x.plane(1)[i], x.plane(2)[i]))
                .sum::<f64>()
                / n as f64
        } else {
            x.mean()
        };
        x = x.map(|v| ((v - m) * contrast + m).clamp(0.0, 1.0));
    }
    if x.channels() == 3 && (saturation != 1.0 || hue != 0.0) {
        let (h, w) = (x.height(), x.width());
        let mut out = x.clone();
        for y in 0..h {
            for xx in 0..w {
                let (mut r, mut g, mut b) = (x.at(0, y, xx), x.at(1, y, xx), x.at(2, y, xx));
                if saturation != 1.0 {
                    let l = luma(r, g, b);
                    r = ((r - l) * saturation + l).clamp(0.0, 1.0);
                    g = ((g - l) * saturation + l).clamp(0.0, 1.0);
                    b = ((b - l) * saturation + l).clamp(0.0, 1.0);
                }
                if hue != 0.0 {
                    (r, g, b) = shift_hue(r, g, b, hue);
                }
                out.set(0, y, xx, r);
                out.set(1, y, xx, g);
                out.set(2, y, xx, b);
            }
        }
        x = out;
    }
    x
}

fn shift_hue(r: f64, g: f64, b: f64, turns: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return (r, g, b);
    }
    let mut h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    } / 6.0;
    h = (h + turns).rem_euclid(1.0);
    let s = delta / max;
    let v = max;
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Image;

    fn fundus(size: usize) -> Image {
        let c = (size as f64 - 1.0) / 2.0;
        let r = 0.45 * size as f64;
        let mut data = Vec::new();
        for ch in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
                    data.push(if d <= r { 0.3 + 0.1 * ch as f64 + 0.002 * x as f64 } else { 0.0 });
                }
            }
        }
        Image::new(3, size, size, data).unwrap()
    }

    #[test]
    fn identity_plan_equals_plain_center_crop() {
        let img = fundus(40);
        for preset in [AugmentPreset::main_text(), AugmentPreset::appendix()] {
            let out = if preset.crop { 32 } else { 40 };
            let plan = AugmentPlan::identity(&preset, 40, 40, out);
            let got = plan.apply(&img, &preset, out).unwrap();
            let mut want = img.center_crop(out, out).unwrap();
            if preset.equalize {
                want = hist_equalize(&want);
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn double_flip_restores_crop() {
        let img = fundus(36);
        let preset = AugmentPreset { crop: true, ..AugmentPreset::none() };
        let mut plan = AugmentPlan::identity(&preset, 36, 36, 30);
        plan.crop_at = Some((3, 5));
        plan.hflip = true;
        let flipped = plan.apply(&img, &preset, 30).unwrap();
        assert_eq!(flipped.flip_horizontal(), img.crop(3, 5, 30, 30).unwrap());
    }

    #[test]
    fn same_stream_same_output() {
        let img = fundus(32);
        let p = AugmentPreset::appendix();
        let a = augment(&img, &p, 32, 5, 2, 17).unwrap();
        assert_eq!(a, augment(&img, &p, 32, 5, 2, 17).unwrap());
        let m = AugmentPreset::main_text();
        assert_eq!(augment(&img, &m, 28, 5, 2, 17).unwrap(), augment(&img, &m, 28, 5, 2, 17).unwrap());
        assert_ne!(augment(&img, &m, 28, 5, 2, 17).unwrap(), augment(&img, &m, 28, 5, 3, 17).unwrap());
    }

    #[test]
    fn undersized_crop_is_rejected() {
        assert!(augment(&fundus(20), &AugmentPreset::main_text(), 24, 0, 0, 0).is_err());
    }

    #[test]
    fn flip_frequencies_match_preset() {
        for preset in [AugmentPreset::main_text(), AugmentPreset::appendix()] {
            let (mut h, mut v) = (0, 0);
            let draws = 10_000;
            for i in 0..draws {
                let mut rng = seeds::rng(1, &[0, i]);
                let plan = AugmentPlan::sample(&preset, 40, 40, 32, &mut rng).unwrap();
                h += usize::from(plan.hflip);
                v += usize::from(plan.vflip);
            }
            assert!((h as f64 / draws as f64 - preset.hflip_p).abs() <= 0.02);
            assert!((v as f64 / draws as f64 - preset.vflip_p).abs() <= 0.02);
        }
    }

    #[test]
    fn rotation_keeps_fundus_area() {
        let img = fundus(64);
        let area = |x: &Image| x.plane(0).iter().filter(|&&v| v > 0.15).count() as f64;
        let before = area(&img);
        for deg in [-10.0, -4.5, 7.0, 10.0] {
            let after = area(&img.rotate(deg));
            assert!((after - before).abs() / before < 0.01, "{deg}: {before} -> {after}");
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let img = fundus(40).map(|v| if v > 0.0 { v + 0.55 } else { v }).map(|v| v.min(1.0));
        for i in 0..50 {
            for (p, out) in [(AugmentPreset::appendix(), 40), (AugmentPreset::main_text(), 32)] {
                let a = augment(&img, &p, out, 9, 0, i).unwrap();
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn hue_shift_round_trips_and_gray_is_fixed() {
        let (r, g, b) = shift_hue(0.8, 0.3, 0.1, 0.25);
        let (r2, g2, b2) = shift_hue(r, g, b, -0.25);
        assert!((r2 - 0.8).abs() < 1e-12 && (g2 - 0.3).abs() < 1e-12 && (b2 - 0.1).abs() < 1e-12);
        assert_eq!(shift_hue(0.4, 0.4, 0.4, 0.1), (0.4, 0.4, 0.4));
    }
}
