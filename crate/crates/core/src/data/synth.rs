//! Synthetic binary segmentation scenes in three styles: clustered
//! nuclei-like ellipses, a single smooth lesion-like region, and elongated
//! instrument-like bars.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Nuclei,
    Lesion,
    Instrument,
}

impl Style {
    pub fn name(self) -> &'static str {
        match self {
            Style::Nuclei => "nuclei",
            Style::Lesion => "lesion",
            Style::Instrument => "instrument",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nuclei" => Ok(Style::Nuclei),
            "lesion" => Ok(Style::Lesion),
            "instrument" => Ok(Style::Instrument),
            other => Err(Error::InvalidArgument(format!("unknown style `{other}` (nuclei|lesion|instrument)"))),
        }
    }
}

/// Parameters of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub style: Style,
    pub count: usize,
    /// `(height, width)`, both divisible by 16.
    pub size: (usize, usize),
    pub seed: u64,
    /// Accepted range of the foreground pixel fraction.
    pub fg_fraction: (f64, f64),
    /// Amplitude of independent per-pixel, per-channel uniform noise.
    pub noise: f64,
    /// Peak amplitude of a smooth linear illumination ramp; zero gives flat
    /// colors.
    pub shading: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            style: Style::Nuclei,
            count: 200,
            size: (64, 64),
            seed: 0,
            fg_fraction: (0.02, 0.45),
            noise: 0.05,
            shading: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (fmin, fmax) = self.fg_fraction;
        let (h, w) = self.size;
        if !(0.0 < fmin && fmin < fmax && fmax < 1.0) {
            return Err(Error::Config(format!("foreground bounds ({fmin}, {fmax}) must satisfy 0 < min < max < 1")));
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!("size {h}x{w} must be a positive multiple of 16")));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.shading) {
            return Err(Error::Config("noise and shading must lie in [0, 1]".into()));
        }
        if self.count == 0 {
            return Err(Error::Config("count must be >= 1".into()));
        }
        Ok(())
    }

    /// Identifier of sample `index`.
    pub fn sample_id(&self, index: usize) -> String {
        format!("{}_{index:04}", self.style)
    }
}

/// One rendered scene: interleaved RGB bytes and a `{0, 255}` mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    pub rgb: Vec<u8>,
    pub mask: Vec<u8>,
}

/// SplitMix64 finalizer; derives an independent stream seed per sample.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MAX_ATTEMPTS: usize = 10_000;

/// Renders sample `index` of `spec`. Geometry is resampled until the
/// foreground fraction falls inside the configured bounds.
pub fn render(spec: &SynthSpec, index: usize) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64));
    let (h, w) = spec.size;
    let (fmin, fmax) = spec.fg_fraction;
    for _ in 0..MAX_ATTEMPTS {
        let shape = Shape::sample(spec.style, h, w, &mut rng);
        let mask: Vec<bool> = (0..h * w)
            .map(|i| shape.contains((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))
            .collect();
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (h * w) as f64;
        if frac < fmin || frac > fmax {
            continue;
        }
        return Ok(paint(spec, &mask, &mut rng));
    }
    Err(Error::Config(format!(
        "no {} scene within foreground bounds ({fmin}, {fmax}) after {MAX_ATTEMPTS} attempts",
        spec.style
    )))
}

fn paint(spec: &SynthSpec, mask: &[bool], rng: &mut ChaCha8Rng) -> Scene {
    let (h, w) = spec.size;
    let (fg, bg) = palette(spec.style, rng);
    let angle = rng.gen_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let half_diag = 0.5 * ((h * h + w * w) as f64).sqrt();
    let mut rgb = Vec::with_capacity(h * w * 3);
    for (i, &inside) in mask.iter().enumerate() {
        let (x, y) = ((i % w) as f64 + 0.5 - 0.5 * w as f64, (i / w) as f64 + 0.5 - 0.5 * h as f64);
        let ramp = spec.shading * (x * dx + y * dy) / half_diag;
        let base = if inside { fg } else { bg };
        for c in base {
            let noise = if spec.noise > 0.0 { rng.gen_range(-spec.noise..=spec.noise) } else { 0.0 };
            rgb.push(((c + ramp + noise).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mask = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    Scene { rgb, mask }
}

/// Foreground and background colors for one scene.
fn palette(style: Style, rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    fn pick(rng: &mut ChaCha8Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| rng.gen_range(lo[c]..hi[c]))
    }
    match style {
        // stained nuclei on a pale field
        Style::Nuclei => (pick(rng, [0.25, 0.05, 0.35], [0.5, 0.3, 0.65]), pick(rng, [0.75, 0.6, 0.75], [0.95, 0.85, 0.95])),
        // dark pigmented lesion on skin
        Style::Lesion => (pick(rng, [0.25, 0.12, 0.08], [0.5, 0.3, 0.2]), pick(rng, [0.7, 0.5, 0.4], [0.95, 0.75, 0.65])),
        // grey metal over reddish tissue
        Style::Instrument => {
            let grey = rng.gen_range(0.6..0.9);
            (pick(rng, [grey - 0.05; 3], [grey + 0.05; 3]), pick(rng, [0.5, 0.1, 0.1], [0.8, 0.3, 0.3]))
        }
    }
}

/// Scene geometry in pixel coordinates.
enum Shape {
    Ellipses(Vec<Ellipse>),
    Star { cx: f64, cy: f64, radius: f64, harmonics: Vec<(f64, f64)> },
    Bars(Vec<RoundedBar>),
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

struct RoundedBar {
    cx: f64,
    cy: f64,
    half_len: f64,
    half_width: f64,
    corner: f64,
    cos: f64,
    sin: f64,
}

impl Shape {
    fn sample(style: Style, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let side = hf.min(wf);
        match style {
            Style::Nuclei => {
                let n = rng.gen_range(3..=12);
                Shape::Ellipses(
                    (0..n)
                        .map(|_| {
                            let t: f64 = rng.gen_range(0.0..PI);
                            Ellipse {
                                cx: rng.gen_range(0.0..wf),
                                cy: rng.gen_range(0.0..hf),
                                a: rng.gen_range(0.06..0.14) * side,
                                b: rng.gen_range(0.05..0.11) * side,
                                cos: t.cos(),
                                sin: t.sin(),
                            }
                        })
                        .collect(),
                )
            }
            Style::Lesion => Shape::Star {
                cx: wf * rng.gen_range(0.35..0.65),
                cy: hf * rng.gen_range(0.35..0.65),
                radius: side * rng.gen_range(0.15..0.35),
                harmonics: (1..=4).map(|k| (rng.gen_range(0.0..0.2 / k as f64), rng.gen_range(0.0..2.0 * PI))).collect(),
            },
            Style::Instrument => {
                let n = rng.gen_range(1..=2);
                Shape::Bars(
                    (0..n)
                        .map(|_| {
                            let t: f64 = rng.gen_range(0.0..PI);
                            let half_width = rng.gen_range(0.04..0.09) * side;
                            RoundedBar {
                                cx: rng.gen_range(0.2..0.8) * wf,
                                cy: rng.gen_range(0.2..0.8) * hf,
                                half_len: rng.gen_range(0.25..0.6) * side,
                                half_width,
                                corner: half_width * rng.gen_range(0.3..1.0),
                                cos: t.cos(),
                                sin: t.sin(),
                            }
                        })
                        .collect(),
                )
            }
        }
    }

    /// Center-in test for the point `(x, y)`.
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipses(es) => es.iter().any(|e| {
                let (dx, dy) = (x - e.cx, y - e.cy);
                let u = dx * e.cos + dy * e.sin;
                let v = -dx * e.sin + dy * e.cos;
                (u / e.a).powi(2) + (v / e.b).powi(2) <= 1.0
            }),
            Shape::Star { cx, cy, radius, harmonics } => {
                let (dx, dy) = (x - cx, y - cy);
                let theta = dy.atan2(dx);
                let scale: f64 =
                    1.0 + harmonics.iter().enumerate().map(|(k, &(a, p))| a * ((k + 1) as f64 * theta + p).cos()).sum::<f64>();
                (dx * dx + dy * dy).sqrt() <= radius * scale
            }
            Shape::Bars(bars) => bars.iter().any(|b| {
                let (dx, dy) = (x - b.cx, y - b.cy);
                let u = (dx * b.cos + dy * b.sin).abs();
                let v = (-dx * b.sin + dy * b.cos).abs();
                // signed distance to a rounded rectangle
                let qx = u - (b.half_len - b.corner);
                let qy = v - (b.half_width - b.corner);
                let outside = qx.max(0.0).hypot(qy.max(0.0));
                outside + qx.max(qy).min(0.0) - b.corner <= 0.0
            }),
        }
    }
}
