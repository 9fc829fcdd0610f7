//! Deterministic image standardisation: Haar downsizing, bilinear resizing,
//! histogram equalisation (global and CLAHE) and channel normalisation.

use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image: {0}")]
    Shape(String),
    #[error("haar_downsize: {0}")]
    Levels(String),
    #[error("clahe: {0}")]
    Clahe(String),
    #[error("{op}: image has {got} channels, expected {expected}")]
    Channels { op: &'static str, expected: usize, got: usize },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// Channel-major image (`c × h × w`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 || data.len() != c * h * w {
            return Err(ImageError::Shape(format!("{c}x{h}x{w} with {} values", data.len())));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f64) -> Self {
        Self::new(c, h, w, vec![value; c * h * w]).expect("positive dims")
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, y: usize, x: usize, v: f64) {
        self.data[(ch * self.h + y) * self.w + x] = v;
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    fn from_fn(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        Self { c, h, w, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Decodes any 8-bit image as RGB with values in `[0, 1]`.
    pub fn read_png(path: &Path) -> Result<Self> {
        let rgb = image::open(path)
            .map_err(|source| ImageError::Decode {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Ok(Self::from_fn(3, h, w, |ch, y, x| {
            f64::from(rgb.get_pixel(x as u32, y as u32)[ch]) / 255.0
        }))
    }

    /// Writes an 8-bit RGB PNG (a single channel is replicated).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let buf = image::RgbImage::from_fn(self.w as u32, self.h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let px = |ch: usize| q(self.at(if self.c == 1 { 0 } else { ch }, y, x));
            image::Rgb([px(0), px(1), px(2)])
        });
        buf.save(path).map_err(|source| ImageError::Decode {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || top + h > self.h || left + w > self.w {
            return Err(ImageError::Shape(format!(
                "crop {h}x{w} at ({top}, {left}) from {}x{}",
                self.h, self.w
            )));
        }
        Ok(Self::from_fn(self.c, h, w, |ch, y, x| self.at(ch, top + y, left + x)))
    }

    pub fn center_crop(&self, h: usize, w: usize) -> Result<Self> {
        if h > self.h || w > self.w {
            return Err(ImageError::Shape(format!("crop {h}x{w} from {}x{}", self.h, self.w)));
        }
        self.crop((self.h - h) / 2, (self.w - w) / 2, h, w)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.c, self.h, self.w, |ch, y, x| self.at(ch, y, self.w - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.c, self.h, self.w, |ch, y, x| self.at(ch, self.h - 1 - y, x))
    }

    /// Rotation about the image centre with bilinear sampling; uncovered pixels are 0.
    pub fn rotate(&self, degrees: f64) -> Self {
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cy = (self.h as f64 - 1.0) / 2.0;
        let cx = (self.w as f64 - 1.0) / 2.0;
        Self::from_fn(self.c, self.h, self.w, |ch, y, x| {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            // inverse map: rotate the output coordinate back by -θ
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            self.sample_zero(ch, sy, sx)
        })
    }

    fn sample_zero(&self, ch: usize, sy: f64, sx: f64) -> f64 {
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let get = |yy: f64, xx: f64| {
            if yy < 0.0 || xx < 0.0 || yy >= self.h as f64 || xx >= self.w as f64 {
                0.0
            } else {
                self.at(ch, yy as usize, xx as usize)
            }
        };
        let top = get(y0, x0) * (1.0 - fx) + get(y0, x0 + 1.0) * fx;
        let bottom = get(y0 + 1.0, x0) * (1.0 - fx) + get(y0 + 1.0, x0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Stacks equally sized images into an `n × c × h × w` tensor.
pub fn stack(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| ImageError::Shape("empty batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if (img.c, img.h, img.w) != (first.c, first.h, first.w) {
            return Err(ImageError::Shape(format!(
                "batch mixes {}x{}x{} and {}x{}x{}",
                first.c, first.h, first.w, img.c, img.h, img.w
            )));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::new(vec![images.len(), first.c, first.h, first.w], data).expect("consistent size"))
}

/// Removes the `levels` finest Haar detail bands and reconstructs at the coarse
/// scale. Height and width are first edge-padded to multiples of `2^levels`.
pub fn haar_downsize(img: &Image, levels: u32) -> Result<Image> {
    if levels == 0 {
        return Err(ImageError::Levels("levels must be at least 1".into()));
    }
    let f = 1usize
        .checked_shl(levels)
        .filter(|&f| f <= img.h && f <= img.w)
        .ok_or_else(|| ImageError::Levels(format!("{levels} levels on a {}x{} image", img.h, img.w)))?;
    let ph = img.h.div_ceil(f) * f;
    let pw = img.w.div_ceil(f) * f;
    let mut cur = Image::from_fn(img.c, ph, pw, |ch, y, x| img.at(ch, y.min(img.h - 1), x.min(img.w - 1)));
    for _ in 0..levels {
        // scaling coefficients are (a+b+c+d)/2; synthesis with zeroed details at
        // the coarse grid divides by 2 again, giving the block mean
        cur = Image::from_fn(cur.c, cur.h / 2, cur.w / 2, |ch, y, x| {
            let (y2, x2) = (2 * y, 2 * x);
            (cur.at(ch, y2, x2) + cur.at(ch, y2, x2 + 1) + cur.at(ch, y2 + 1, x2) + cur.at(ch, y2 + 1, x2 + 1))
                / 4.0
        });
    }
    Ok(cur)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_replicate(img: &Image, factor: usize) -> Image {
    Image::from_fn(img.c, img.h * factor, img.w * factor, |ch, y, x| img.at(ch, y / factor, x / factor))
}

/// Bilinear resampling with half-pixel centres (`align_corners = false`).
pub fn bilinear_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::Shape(format!("resize to {out_h}x{out_w}")));
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = axis(out_h, img.h);
    let xs = axis(out_w, img.w);
    Ok(Image::from_fn(img.c, out_h, out_w, |ch, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = img.at(ch, y0, x0) + fx * (img.at(ch, y0, x1) - img.at(ch, y0, x0));
        let bottom = img.at(ch, y1, x0) + fx * (img.at(ch, y1, x1) - img.at(ch, y1, x0));
        top + fy * (bottom - top)
    }))
}

pub const BINS: usize = 256;

#[inline]
fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1)
}

/// Per-channel global equalisation: each value maps to the empirical CDF of its bin.
pub fn hist_equalize(img: &Image) -> Image {
    let mut out = img.clone();
    let n = (img.h * img.w) as f64;
    for ch in 0..img.c {
        let mut hist = [0usize; BINS];
        for &v in img.plane(ch) {
            hist[bin_of(v)] += 1;
        }
        let mut cdf = [0.0; BINS];
        let mut acc = 0;
        for (k, &count) in hist.iter().enumerate() {
            acc += count;
            cdf[k] = acc as f64 / n;
        }
        for v in out.plane_mut(ch) {
            *v = cdf[bin_of(*v)];
        }
    }
    out
}

/// Contrast-limited adaptive equalisation. `clip_limit` is a multiple of the
/// mean bin count of a tile; `tiles` is `(rows, cols)`.
pub fn clahe(img: &Image, clip_limit: f64, tiles: (usize, usize)) -> Result<Image> {
    let (ty, tx) = tiles;
    if !(clip_limit > 0.0) {
        return Err(ImageError::Clahe(format!("clip_limit must be positive, got {clip_limit}")));
    }
    if ty == 0 || tx == 0 || ty > img.h || tx > img.w {
        return Err(ImageError::Clahe(format!("{ty}x{tx} tiles on a {}x{} image", img.h, img.w)));
    }
    // tile i covers [i*h/ty, (i+1)*h/ty); the last tiles absorb the remainder
    let ybounds: Vec<usize> = (0..=ty).map(|i| i * img.h / ty).collect();
    let xbounds: Vec<usize> = (0..=tx).map(|i| i * img.w / tx).collect();
    let centre = |b: &[usize], i: usize| (b[i] + b[i + 1]) as f64 / 2.0 - 0.5;
    let mut out = img.clone();
    for ch in 0..img.c {
        let mut maps = vec![[0.0f64; BINS]; ty * tx];
        for i in 0..ty {
            for j in 0..tx {
                let mut hist = [0.0f64; BINS];
                for y in ybounds[i]..ybounds[i + 1] {
                    for x in xbounds[j]..xbounds[j + 1] {
                        hist[bin_of(img.at(ch, y, x))] += 1.0;
                    }
                }
                let total: f64 = hist.iter().sum();
                let limit = (clip_limit * total / BINS as f64).max(1.0);
                let mut excess = 0.0;
                for h in hist.iter_mut() {
                    if *h > limit {
                        excess += *h - limit;
                        *h = limit;
                    }
                }
                let share = excess / BINS as f64;
                let mut acc = 0.0;
                let map = &mut maps[i * tx + j];
                for (k, h) in hist.iter().enumerate() {
                    acc += h + share;
                    map[k] = (acc / total).min(1.0);
                }
            }
        }
        let locate = |b: &[usize], n: usize, p: f64| -> (usize, usize, f64) {
            let first = centre(b, 0);
            if p <= first {
                return (0, 0, 0.0);
            }
            for i in 0..n - 1 {
                let (c0, c1) = (centre(b, i), centre(b, i + 1));
                if p <= c1 {
                    return (i, i + 1, (p - c0) / (c1 - c0));
                }
            }
            (n - 1, n - 1, 0.0)
        };
        for y in 0..img.h {
            let (i0, i1, fy) = locate(&ybounds, ty, y as f64);
            for x in 0..img.w {
                let (j0, j1, fx) = locate(&xbounds, tx, x as f64);
                let k = bin_of(img.at(ch, y, x));
                let m = |i: usize, j: usize| maps[i * tx + j][k];
                let top = m(i0, j0) * (1.0 - fx) + m(i0, j1) * fx;
                let bottom = m(i1, j0) * (1.0 - fx) + m(i1, j1) * fx;
                out.set(ch, y, x, (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationParams {
    /// The usual ImageNet RGB statistics.
    pub fn imagenet() -> Self {
        Self {
            mean: vec![0.485, 0.456, 0.406],
            std: vec![0.229, 0.224, 0.225],
        }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn check(&self, img: &Image, op: &'static str) -> Result<()> {
        if self.mean.len() != img.c || self.std.len() != img.c {
            return Err(ImageError::Channels {
                op,
                expected: self.mean.len(),
                got: img.c,
            });
        }
        if let Some(s) = self.std.iter().find(|&&s| !(s > 0.0)) {
            return Err(ImageError::Shape(format!("{op}: std must be positive, got {s}")));
        }
        Ok(())
    }
}

pub fn normalize_channels(img: &Image, params: &NormalizationParams) -> Result<Image> {
    params.check(img, "normalize_channels")?;
    Ok(Image::from_fn(img.c, img.h, img.w, |ch, y, x| {
        (img.at(ch, y, x) - params.mean[ch]) / params.std[ch]
    }))
}

pub fn denormalize(img: &Image, params: &NormalizationParams) -> Result<Image> {
    params.check(img, "denormalize")?;
    Ok(Image::from_fn(img.c, img.h, img.w, |ch, y, x| {
        img.at(ch, y, x) * params.std[ch] + params.mean[ch]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessPreset {
    /// Haar downsizing only; training crops to the input size.
    WaveletCrop,
    /// Haar downsizing, then bilinear resizing to the input size.
    WaveletBilinear,
}

impl PreprocessPreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::WaveletCrop => "wavelet_crop",
            Self::WaveletBilinear => "wavelet_bilinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wavelet_crop" => Some(Self::WaveletCrop),
            "wavelet_bilinear" => Some(Self::WaveletBilinear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equalization {
    None,
    Global,
    Clahe,
}

impl Equalization {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Global => "global",
            Self::Clahe => "clahe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "global" => Some(Self::Global),
            "clahe" => Some(Self::Clahe),
            _ => None,
        }
    }
}

/// Deterministic per-image standardisation applied once when a dataset is loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub preset: PreprocessPreset,
    pub wavelet_levels: u32,
    pub input_size: usize,
    pub equalize: Equalization,
    pub clahe_clip: f64,
    pub clahe_tiles: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            preset: PreprocessPreset::WaveletBilinear,
            wavelet_levels: 3,
            input_size: 224,
            equalize: Equalization::None,
            clahe_clip: 2.0,
            clahe_tiles: 8,
        }
    }
}

impl PreprocessConfig {
    /// Downsize, then (for `wavelet_bilinear`) resize, then equalise.
    pub fn standardize(&self, img: &Image) -> Result<Image> {
        let mut out = if self.wavelet_levels > 0 {
            haar_downsize(img, self.wavelet_levels)?
        } else {
            img.clone()
        };
        if self.preset == PreprocessPreset::WaveletBilinear && (out.h, out.w) != (self.input_size, self.input_size) {
            out = bilinear_resize(&out, self.input_size, self.input_size)?;
        }
        Ok(match self.equalize {
            Equalization::None => out,
            Equalization::Global => hist_equalize(&out),
            Equalization::Clahe => clahe(&out, self.clahe_clip, (self.clahe_tiles, self.clahe_tiles))?,
        })
    }

    /// Deterministic evaluation view of a standardised image at the input size.
    pub fn eval_view(&self, img: &Image) -> Result<Image> {
        if (img.h, img.w) == (self.input_size, self.input_size) {
            Ok(img.clone())
        } else {
            bilinear_resize(img, self.input_size, self.input_size)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = seeds::rng(seed, &[]);
        Image::new(c, h, w, (0..c * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn haar_sizes_and_constants() {
        let big = Image::filled(1, 2048, 2392, 0.3);
        let out = haar_downsize(&big, 3).unwrap();
        assert_eq!((out.height(), out.width()), (256, 299));
        let padded = haar_downsize(&Image::filled(1, 2048, 2394, 0.3), 3).unwrap();
        assert_eq!((padded.height(), padded.width()), (256, 300));
        assert!(padded.data().iter().all(|&v| v == 0.3));
        let c = haar_downsize(&Image::filled(3, 8, 8, 0.625), 3).unwrap();
        assert_eq!((c.height(), c.width()), (1, 1));
        assert!(c.data().iter().all(|&v| v == 0.625));
        assert!(haar_downsize(&big, 0).is_err());
        assert!(haar_downsize(&Image::filled(1, 4, 4, 0.0), 3).is_err());
    }

    #[test]
    fn one_haar_level_is_block_mean() {
        let img = random(1, 4, 4, 3);
        let out = haar_downsize(&img, 1).unwrap();
        for by in 0..2 {
            for bx in 0..2 {
                let mut s = 0.0;
                for y in 0..2 {
                    for x in 0..2 {
                        s += img.at(0, 2 * by + y, 2 * bx + x);
                    }
                }
                assert!((out.at(0, by, bx) - s / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn haar_constant_round_trip_is_lossless() {
        let img = Image::filled(2, 16, 24, 0.1);
        let down = haar_downsize(&img, 2).unwrap();
        assert_eq!(upsample_replicate(&down, 4), img);
    }

    #[test]
    fn bilinear_examples() {
        let c = Image::filled(3, 5, 7, 0.4);
        assert!(bilinear_resize(&c, 9, 2).unwrap().data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let ramp = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let up = bilinear_resize(&ramp, 4, 1).unwrap();
        assert!(up.data().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
        let sq = Image::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.8]).unwrap();
        assert!((bilinear_resize(&sq, 1, 1).unwrap().data()[0] - 0.35).abs() < 1e-15);
        assert!(bilinear_resize(&sq, 0, 1).is_err());
    }

    #[test]
    fn equalization_examples() {
        let uniform = Image::new(1, 16, 16, (0..256).map(|k| (k as f64 + 0.5) / 256.0).collect()).unwrap();
        let eq = hist_equalize(&uniform);
        for (a, b) in eq.data().iter().zip(uniform.data()) {
            assert!((a - b).abs() <= 1.0 / 256.0);
        }
        let flat = hist_equalize(&Image::filled(1, 4, 4, 0.3));
        assert!(flat.data().iter().all(|&v| v == flat.data()[0]));
        let two = Image::new(1, 1, 4, vec![0.2, 0.8, 0.8, 0.8]).unwrap();
        assert_eq!(hist_equalize(&two).data(), &[0.25, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn equalized_cdf_is_near_uniform() {
        // bin masses stay below 2/256 for this smooth, mildly skewed input
        let img = random(1, 128, 128, 8).map(|v| (v + 0.3 * v * v) / 1.3);
        let eq = hist_equalize(&img);
        let mut v = eq.data().to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((i as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 2.0 / BINS as f64, "{ks}");
    }

    #[test]
    fn clahe_stays_in_range_and_rejects_bad_settings() {
        let img = random(3, 40, 33, 2);
        let out = clahe(&img, 2.0, (8, 8)).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(clahe(&img, 2.0, (8, 8)).unwrap(), out);
        assert!(clahe(&img, 0.0, (8, 8)).is_err());
        assert!(clahe(&img, 2.0, (0, 8)).is_err());
        let flat = clahe(&Image::filled(1, 16, 16, 0.5), 2.0, (4, 4)).unwrap();
        assert!(flat.data().iter().all(|&v| (v - flat.data()[0]).abs() < 1e-12));
    }

    #[test]
    fn normalization_examples() {
        let p = NormalizationParams::imagenet();
        let img = Image::new(3, 1, 1, vec![0.485, 0.5, 0.5]).unwrap();
        assert_eq!(normalize_channels(&img, &p).unwrap().data()[0], 0.0);
        let img = Image::new(3, 1, 1, vec![0.714, 0.5, 0.5]).unwrap();
        assert!((normalize_channels(&img, &p).unwrap().data()[0] - 1.0).abs() < 1e-12);
        let r = random(3, 4, 4, 1);
        assert_eq!(normalize_channels(&r, &NormalizationParams::identity(3)).unwrap(), r);
        assert!(normalize_channels(&random(1, 2, 2, 0), &p).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::new(3, 2, 3, (0..18).map(|k| f64::from(k * 13) / 255.0).collect()).unwrap();
        img.write_png(&path).unwrap();
        assert_eq!(Image::read_png(&path).unwrap(), img);
    }

    #[test]
    fn rotation_by_zero_is_identity_and_flips_are_involutions() {
        let img = random(2, 6, 5, 4);
        let r = img.rotate(0.0);
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_vertical().flip_vertical(), img);
    }

    proptest! {
        #[test]
        fn haar_does_not_add_variance(seed in 0u64..500, h in 4usize..20, w in 4usize..20) {
            let img = random(1, h, w, seed);
            let pad_h = h.div_ceil(4) * 4;
            let pad_w = w.div_ceil(4) * 4;
            let padded = Image::from_fn(1, pad_h, pad_w, |_, y, x| img.at(0, y.min(h - 1), x.min(w - 1)));
            let out = haar_downsize(&img, 2).unwrap();
            prop_assert!(out.variance() <= padded.variance() + 1e-9);
        }

        #[test]
        fn normalize_inverts(seed in 0u64..500) {
            let img = random(3, 5, 4, seed);
            let p = NormalizationParams::imagenet();
            let back = denormalize(&normalize_channels(&img, &p).unwrap(), &p).unwrap();
            for (a, b) in back.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
