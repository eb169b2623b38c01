//! Hand-built visual features: two colour channels, 8x8 sum pooling, three
//! saturating threshold units per cell, and a 2x8 max pool over rows.
//!
//! For a 64x64 image the output is `2 channels x 3 scales x 7 rows = 42`
//! values in `[0, 1]`, ordered channel-major, scale-minor, row ascending.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::FeatureMap;
use crate::scalar::Scalar;

pub const POOLED_SIDE: usize = 8;
pub const MAX_POOL_ROWS: usize = 2;
pub const N_SCALES: usize = 3;
pub const N_CHANNELS: usize = 2;
/// Feature count for any valid image with the default pooling shapes.
pub const FEATURE_LEN: usize = N_CHANNELS * N_SCALES * (POOLED_SIDE - MAX_POOL_ROWS + 1);

pub type Rgb = [u8; 3];

/// Row-major 2-D array; row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![T::zero(); width * height] }
    }

    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// An RGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl SceneImage {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Result<Self> {
        let img = Self { width, height, pixels: vec![fill; width * height] };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % POOLED_SIDE != 0 || self.height % POOLED_SIDE != 0 {
            return Err(Error::Shape(format!(
                "image is {}x{}; both sides must be positive multiples of {POOLED_SIDE}",
                self.width, self.height
            )));
        }
        if self.pixels.len() != self.width * self.height {
            return Err(Error::Shape("pixel buffer length".into()));
        }
        Ok(())
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = Vec::new();
        let mut tokens = Vec::new();
        // magic, width, height, maxval; `#` comments run to end of line
        while tokens.len() < 4 {
            let mut byte = [0u8; 1];
            if r.read(&mut byte)? == 0 {
                return Err(Error::Image("truncated PPM header".into()));
            }
            match byte[0] {
                b'#' => {
                    let mut skip = String::new();
                    r.read_line(&mut skip)?;
                }
                c if c.is_ascii_whitespace() => {
                    if !header.is_empty() {
                        tokens.push(String::from_utf8_lossy(&header).into_owned());
                        header.clear();
                    }
                }
                c => header.push(c),
            }
        }
        if tokens[0] != "P6" {
            return Err(Error::Image(format!("unsupported magic `{}`", tokens[0])));
        }
        let parse = |t: &str| t.parse::<usize>().map_err(|_| Error::Image(format!("bad header field `{t}`")));
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(Error::Image(format!("maxval {maxval} unsupported")));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes).map_err(|_| Error::Image("truncated PPM body".into()))?;
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let img = Self { width, height, pixels };
        img.validate()?;
        Ok(img)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Upright cylinder: grey body with a coloured top band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub cx: f64,
    pub base_y: f64,
    pub width: f64,
    pub height: f64,
}

/// Objects to draw, in pixel coordinates (origin top-left).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub ball: Option<Ball>,
    pub cylinder: Option<Cylinder>,
}

impl Scene {
    pub fn empty() -> Self {
        Self { width: 64, height: 64, ball: None, cylinder: None }
    }
}

pub const BALL_PINK: Rgb = [255, 64, 192];
pub const CYLINDER_ORANGE: Rgb = [255, 128, 0];
const CYLINDER_BODY: Rgb = [120, 120, 120];
const WALL: Rgb = [90, 90, 90];
const FLOOR: Rgb = [50, 50, 50];

/// Rasterises a scene. Pixels are hit by their centres, so a larger ball
/// with the same centre always covers a superset of pixels.
pub fn render_scene(scene: &Scene) -> Result<SceneImage> {
    let mut img = SceneImage::new(scene.width, scene.height, FLOOR)?;
    for y in 0..scene.height / 2 {
        for x in 0..scene.width {
            img.set_pixel(x, y, WALL);
        }
    }
    if let Some(c) = scene.cylinder {
        let top = c.base_y - c.height;
        let band = (c.height / 4.0).max(1.0);
        for y in 0..scene.height {
            let py = y as f64 + 0.5;
            if py < top || py > c.base_y {
                continue;
            }
            for x in 0..scene.width {
                let px = x as f64 + 0.5;
                if (px - c.cx).abs() <= c.width / 2.0 {
                    img.set_pixel(x, y, if py <= top + band { CYLINDER_ORANGE } else { CYLINDER_BODY });
                }
            }
        }
    }
    if let Some(b) = scene.ball {
        for y in 0..scene.height {
            for x in 0..scene.width {
                let (dx, dy) = (x as f64 + 0.5 - b.cx, y as f64 + 0.5 - b.cy);
                if dx * dx + dy * dy <= b.radius * b.radius {
                    img.set_pixel(x, y, BALL_PINK);
                }
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub ball_color: Rgb,
    pub cylinder_color: Rgb,
    /// Cosine similarity at or below this maps to 0; 1 maps to 1.
    pub similarity_floor: f64,
    /// Saturation scales, strictly increasing.
    pub phi: [f64; N_SCALES],
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { ball_color: BALL_PINK, cylinder_color: CYLINDER_ORANGE, similarity_floor: 0.5, phi: [4.0, 16.0, 48.0] }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi[0] > 0.0 && self.phi.windows(2).all(|w| w[0] < w[1])) {
            return Err(Error::Config(format!("phi {:?} must be positive and strictly increasing", self.phi)));
        }
        if !(0.0..1.0).contains(&self.similarity_floor) {
            return Err(Error::Config("similarity_floor must lie in [0, 1)".into()));
        }
        for c in [self.ball_color, self.cylinder_color] {
            if chroma(c).iter().all(|&v| v == 0.0) {
                return Err(Error::Config(format!("reference colour {c:?} is grey")));
            }
        }
        Ok(())
    }
}

/// Pixel colour minus its grey component, unit length (zero for greys).
fn chroma(c: Rgb) -> [f64; 3] {
    let v = c.map(f64::from);
    let mean = (v[0] + v[1] + v[2]) / 3.0;
    let d = [v[0] - mean, v[1] - mean, v[2] - mean];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n < 1e-9 {
        [0.0; 3]
    } else {
        d.map(|x| x / n)
    }
}

fn similarity(p: [f64; 3], r: [f64; 3], floor: f64) -> f64 {
    let cos = p[0] * r[0] + p[1] * r[1] + p[2] * r[2];
    ((cos - floor) / (1.0 - floor)).clamp(0.0, 1.0)
}

/// Per-pixel similarity to the ball and cylinder colours.
pub fn color_channels<T: Scalar>(img: &SceneImage, config: &FeatureConfig) -> Result<[Plane<T>; N_CHANNELS]> {
    img.validate()?;
    let refs = [chroma(config.ball_color), chroma(config.cylinder_color)];
    let mut out = [Plane::zeros(img.width, img.height), Plane::zeros(img.width, img.height)];
    for (i, &px) in img.pixels.iter().enumerate() {
        let c = chroma(px);
        for (ch, r) in out.iter_mut().zip(&refs) {
            ch.data[i] = T::of(similarity(c, *r, config.similarity_floor));
        }
    }
    Ok(out)
}

/// Sums non-overlapping blocks down to an 8x8 grid.
pub fn sum_pool<T: Scalar>(channel: &Plane<T>) -> Result<Plane<T>> {
    if channel.width % POOLED_SIDE != 0 || channel.height % POOLED_SIDE != 0 || channel.width == 0 {
        return Err(Error::Shape(format!(
            "{}x{} map cannot be sum-pooled to {POOLED_SIDE}x{POOLED_SIDE}",
            channel.width, channel.height
        )));
    }
    let (bw, bh) = (channel.width / POOLED_SIDE, channel.height / POOLED_SIDE);
    let mut out = Plane::zeros(POOLED_SIDE, POOLED_SIDE);
    for y in 0..channel.height {
        for x in 0..channel.width {
            let cell = (y / bh) * POOLED_SIDE + x / bw;
            out.data[cell] += channel.get(x, y);
        }
    }
    Ok(out)
}

/// `T_i(x) = min(x / phi_i, 1)` for each scale.
pub fn threshold_units<T: Scalar>(grid: &Plane<T>, phi: &[f64; N_SCALES]) -> Result<[Plane<T>; N_SCALES]> {
    if phi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::arg("threshold scales must be positive"));
    }
    Ok(phi.map(|p| {
        let p = T::of(p);
        grid.map(|x| (x / p).min(T::one()))
    }))
}

/// Max over 2-row x 8-column windows, stride 1: 8x8 in, 7 values out.
pub fn max_pool<T: Scalar>(grid: &Plane<T>) -> Result<Vec<T>> {
    if grid.width != POOLED_SIDE || grid.height != POOLED_SIDE {
        return Err(Error::Shape(format!("max pool expects 8x8, got {}x{}", grid.width, grid.height)));
    }
    Ok((0..=POOLED_SIDE - MAX_POOL_ROWS)
        .map(|r| {
            grid.data[r * POOLED_SIDE..(r + MAX_POOL_ROWS) * POOLED_SIDE]
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max)
        })
        .collect())
}

/// The full pipeline.
pub fn extract_features<T: Scalar>(img: &SceneImage, config: &FeatureConfig) -> Result<Vec<T>> {
    config.validate()?;
    let mut out = Vec::with_capacity(FEATURE_LEN);
    for channel in color_channels::<T>(img, config)? {
        let pooled = sum_pool(&channel)?;
        for scale in threshold_units(&pooled, &config.phi)? {
            out.extend(max_pool(&scale)?);
        }
    }
    Ok(out)
}

/// [`FeatureMap`] over rendered images.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatures {
    pub config: FeatureConfig,
}

impl<T: Scalar> FeatureMap<T> for VisualFeatures {
    type State = SceneImage;

    fn dim(&self) -> usize {
        FEATURE_LEN
    }

    /// Panics on an invalid image; validate frames before use.
    fn features(&self, img: &SceneImage) -> Vec<T> {
        extract_features(img, &self.config).expect("valid image")
    }
}
