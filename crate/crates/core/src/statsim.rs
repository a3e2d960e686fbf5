//! Shape-stream data generation.
//!
//! A 2D silhouette stands in for a CAD model: the `Z` rotation turns the
//! polygon in the image plane and `X`/`Y` foreshorten it by `cos(X°)` along
//! the vertical axis and `cos(Y°)` along the horizontal axis. Renderings can
//! then be pushed towards real-image edge statistics with a Gaussian blur
//! followed by additive Gaussian noise.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{resize_bilinear, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Enumeration {
    /// Full cross product of the three axis lists.
    Cartesian,
    /// One axis varies while the other two sit at their list midpoints.
    AxisSweep,
}

/// Inclusive `min..=max` range sampled every `step` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || self.max < self.min {
            return Err(Error::invalid(format!("bad axis range {self:?}")));
        }
        let steps = (self.max - self.min) / self.step;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "step {} does not divide range [{}, {}]",
                self.step, self.min, self.max
            )));
        }
        let n = steps.round() as usize;
        Ok((0..=n).map(|i| self.min + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub mode: Enumeration,
}

impl PoseGrid {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, mode: Enumeration) -> Result<Self> {
        if x.is_empty() || y.is_empty() || z.is_empty() {
            return Err(Error::invalid("pose grid axes must be non-empty"));
        }
        Ok(Self { x, y, z, mode })
    }

    /// Concatenates the value lists of several ranges per axis.
    pub fn from_ranges(
        x: &[AxisRange],
        y: &[AxisRange],
        z: &[AxisRange],
        mode: Enumeration,
    ) -> Result<Self> {
        let collect = |rs: &[AxisRange]| -> Result<Vec<f64>> {
            let mut v = Vec::new();
            for r in rs {
                v.extend(r.values()?);
            }
            Ok(v)
        };
        Self::new(collect(x)?, collect(y)?, collect(z)?, mode)
    }

    /// X, Y in [-10, 10] and Z in [70, 110] ∪ [250, 290], 2° steps.
    pub fn standard(mode: Enumeration) -> Self {
        let r = |min, max| AxisRange { min, max, step: 2.0 };
        Self::from_ranges(
            &[r(-10.0, 10.0)],
            &[r(-10.0, 10.0)],
            &[r(70.0, 110.0), r(250.0, 290.0)],
            mode,
        )
        .expect("standard grid is valid")
    }

    pub fn pose_count(&self) -> usize {
        let (nx, ny, nz) = (self.x.len(), self.y.len(), self.z.len());
        match self.mode {
            Enumeration::Cartesian => nx * ny * nz,
            // The all-midpoint pose is shared by the three sweeps.
            Enumeration::AxisSweep => nx + ny + nz - 2,
        }
    }
}

/// Poses in X-major, then Y, then Z index order.
pub fn enumerate_poses(grid: &PoseGrid) -> Vec<Pose> {
    let (nx, ny, nz) = (grid.x.len(), grid.y.len(), grid.z.len());
    let pose = |i: usize, j: usize, k: usize| Pose {
        x: grid.x[i],
        y: grid.y[j],
        z: grid.z[k],
    };
    match grid.mode {
        Enumeration::Cartesian => {
            let mut out = Vec::with_capacity(nx * ny * nz);
            for i in 0..nx {
                for j in 0..ny {
                    for k in 0..nz {
                        out.push(pose(i, j, k));
                    }
                }
            }
            out
        }
        Enumeration::AxisSweep => {
            let (mx, my, mz) = (nx / 2, ny / 2, nz / 2);
            let mut idx = BTreeSet::new();
            idx.extend((0..nx).map(|i| (i, my, mz)));
            idx.extend((0..ny).map(|j| (mx, j, mz)));
            idx.extend((0..nz).map(|k| (mx, my, k)));
            idx.into_iter().map(|(i, j, k)| pose(i, j, k)).collect()
        }
    }
}

/// Simple polygon in the unit square, with an optional texture tile path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteTemplate {
    pub class: String,
    pub vertices: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

impl SilhouetteTemplate {
    pub fn new(class: impl Into<String>, vertices: Vec<[f64; 2]>) -> Result<Self> {
        let t = Self {
            class: class.into(),
            vertices,
            texture: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 {
            return Err(Error::invalid(format!(
                "template `{}` needs at least 3 vertices, has {n}",
                self.class
            )));
        }
        if v.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid(format!(
                "template `{}` has vertices outside the unit square",
                self.class
            )));
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                    return Err(Error::invalid(format!(
                        "template `{}` is self-intersecting (edges {i} and {j})",
                        self.class
                    )));
                }
            }
        }
        if polygon_area(v) <= 0.0 {
            return Err(Error::DegeneratePolygon { area: 0.0 });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: SilhouetteTemplate = serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        t.validate()?;
        Ok(t)
    }

    /// Vertices in pixel coordinates for `pose` on a `width`×`height` canvas.
    pub fn project(&self, pose: &Pose, width: usize, height: usize, scale: f64) -> Vec<[f64; 2]> {
        let (sx, sy) = (pose.y.to_radians().cos(), pose.x.to_radians().cos());
        let (sin, cos) = pose.z.to_radians().sin_cos();
        let extent = scale * width.min(height) as f64;
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        self.vertices
            .iter()
            .map(|&[u, v]| {
                let (px, py) = ((u - 0.5) * sx, (v - 0.5) * sy);
                let (rx, ry) = (px * cos - py * sin, px * sin + py * cos);
                [cx + rx * extent, cy + ry * extent]
            })
            .collect()
    }
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    White,
    /// A fixed image (typically the real corpus mean), resized to fit.
    MeanImage(Image),
    /// A random crop from one of the corpus images per rendering.
    CorpusPatch(Vec<Image>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fill {
    /// Constant 0.5 intensity.
    UniformGray,
    /// Tiled texture, with a random phase per rendering.
    Textured(Image),
}

pub const UNIFORM_GRAY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub background: Background,
    pub fill: Fill,
    /// Gaussian blur standard deviation in pixels.
    pub blur_sigma: f64,
    /// Additive noise standard deviation on the unit intensity scale.
    pub noise_sigma: f64,
    /// Object extent as a fraction of the shorter image side.
    pub object_scale: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 3,
            background: Background::White,
            fill: Fill::UniformGray,
            blur_sigma: 1.0,
            noise_sigma: 0.1,
            object_scale: 0.7,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("render dims must be positive"));
        }
        if !(self.blur_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("blur and noise sigmas must be non-negative"));
        }
        if !(self.object_scale > 0.0) {
            return Err(Error::invalid("object scale must be positive"));
        }
        Ok(())
    }
}

fn background_image<R: rand::Rng + ?Sized>(config: &RenderConfig, rng: &mut R) -> Result<Image> {
    let (w, h, c) = (config.width, config.height, config.channels);
    match &config.background {
        Background::White => Image::filled(w, h, c, 1.0),
        Background::MeanImage(img) => resize_bilinear(img, w, h)?.with_channels(c),
        Background::CorpusPatch(corpus) => {
            if corpus.is_empty() {
                return Err(Error::invalid("corpus-patch background needs a non-empty corpus"));
            }
            let src = &corpus[rng.random_range(0..corpus.len())];
            let src = if src.width() < w || src.height() < h {
                resize_bilinear(src, w.max(src.width()), h.max(src.height()))?
            } else {
                src.clone()
            };
            let x0 = rng.random_range(0..=src.width() - w);
            let y0 = rng.random_range(0..=src.height() - h);
            let bbox = crate::imageio::BoundingBox::new(x0, y0, x0 + w - 1, y0 + h - 1)?;
            crate::imageio::crop(&src, &bbox)?.with_channels(c)
        }
    }
}

/// Renders `template` at `pose`; returns the composited image and the
/// binary foreground mask (1 channel, values 0 or 1).
pub fn render_silhouette<R: rand::Rng + ?Sized>(
    template: &SilhouetteTemplate,
    pose: &Pose,
    config: &RenderConfig,
    rng: &mut R,
) -> Result<(Image, Image)> {
    config.validate()?;
    let (w, h, c) = (config.width, config.height, config.channels);
    let poly = template.project(pose, w, h, config.object_scale);
    let area = polygon_area(&poly);
    if !(area >= 1.0) {
        return Err(Error::DegeneratePolygon { area });
    }
    let mask = Image::from_fn(w, h, 1, |x, y, _| {
        if point_in_polygon([x as f64 + 0.5, y as f64 + 0.5], &poly) {
            1.0
        } else {
            0.0
        }
    })?;
    let fore = match &config.fill {
        Fill::UniformGray => Image::filled(w, h, c, UNIFORM_GRAY)?,
        Fill::Textured(tex) => {
            let tex = tex.with_channels(c)?;
            let (ox, oy) = (
                rng.random_range(0..tex.width()),
                rng.random_range(0..tex.height()),
            );
            Image::from_fn(w, h, c, |x, y, ch| {
                tex.get((x + ox) % tex.width(), (y + oy) % tex.height(), ch)
            })?
        }
    };
    let background = background_image(config, rng)?;
    let image = composite_background(&fore, &mask, &background)?;
    Ok((image, mask))
}

/// `mask·fore + (1−mask)·background`, with a 1-channel mask broadcast over
/// colour channels.
pub fn composite_background(fore: &Image, mask: &Image, background: &Image) -> Result<Image> {
    if fore.dims() != background.dims()
        || fore.dims() != mask.dims()
        || fore.channels() != background.channels()
        || (mask.channels() != 1 && mask.channels() != fore.channels())
    {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}x{}", fore.dims(), fore.channels()),
            actual: format!(
                "mask {:?}x{}, background {:?}x{}",
                mask.dims(),
                mask.channels(),
                background.dims(),
                background.channels()
            ),
        });
    }
    let c = fore.channels();
    let (f, b, m) = (fore.data(), background.data(), mask.data());
    let data = (0..f.len())
        .map(|i| {
            let a = if mask.channels() == 1 { m[i / c] } else { m[i] };
            a * f[i] + (1.0 - a) * b[i]
        })
        .collect();
    Image::from_clamped(fore.width(), fore.height(), c, data)
}

/// Per-pixel mean after resizing each corpus image to `dims`.
pub fn mean_image(corpus: &[Image], dims: (usize, usize)) -> Result<Image> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::NotEnoughSamples { needed: 1, got: 0 })?;
    let c = first.channels();
    let mut acc = vec![0.0; dims.0 * dims.1 * c];
    for img in corpus {
        if img.channels() != c {
            return Err(Error::DimensionMismatch {
                expected: format!("{c} channels"),
                actual: format!("{} channels", img.channels()),
            });
        }
        let r = resize_bilinear(img, dims.0, dims.1)?;
        for (a, v) in acc.iter_mut().zip(r.data()) {
            *a += v;
        }
    }
    let n = corpus.len() as f64;
    Image::from_clamped(dims.0, dims.1, c, acc.into_iter().map(|v| v / n).collect())
}

/// Mirror index without repeating the edge sample (`-1 → 1`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur with reflect padding. `sigma == 0` is identity.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().zip(-r..=r) {
                    let xx = reflect(x as isize + k, w);
                    acc += t * src[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().zip(-r..=r) {
                    let yy = reflect(y as isize + k, h);
                    acc += t * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Image::from_clamped(w, h, c, out).expect("dims preserved")
}

/// `clamp(blur(image) + noise)`; the blur uses `config.blur_sigma`, the
/// noise is i.i.d. `N(0, noise_sigma²)` per pixel-channel.
pub fn apply_statistics_matching<R: rand::Rng + ?Sized>(
    image: &Image,
    config: &RenderConfig,
    rng: &mut R,
) -> Result<Image> {
    config.validate()?;
    let blurred = gaussian_blur(image, config.blur_sigma);
    if config.noise_sigma == 0.0 {
        return Ok(blurred);
    }
    let normal = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let (w, h, c) = (blurred.width(), blurred.height(), blurred.channels());
    let data = blurred
        .into_data()
        .into_iter()
        .map(|v| v + normal.sample(rng))
        .collect();
    Image::from_clamped(w, h, c, data)
}

/// Sobel gradient magnitude of the channel-mean image at every interior
/// pixel, row-major, `(W−2)(H−2)` values.
pub fn sobel_magnitudes(image: &Image) -> Result<Vec<f64>> {
    let (w, h) = image.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: 3,
            min_height: 3,
        });
    }
    let gray = image.to_gray();
    let g = |x: usize, y: usize| gray.get(x, y, 0);
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (g(x + 1, y - 1) + 2.0 * g(x + 1, y) + g(x + 1, y + 1))
                - (g(x - 1, y - 1) + 2.0 * g(x - 1, y) + g(x - 1, y + 1));
            let gy = (g(x - 1, y + 1) + 2.0 * g(x, y + 1) + g(x + 1, y + 1))
                - (g(x - 1, y - 1) + 2.0 * g(x, y - 1) + g(x + 1, y - 1));
            out.push(gx.hypot(gy));
        }
    }
    Ok(out)
}

/// Largest Sobel magnitude possible on unit-range intensities.
pub const SOBEL_MAX: f64 = 4.0 * std::f64::consts::SQRT_2;

pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientHistogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl GradientHistogram {
    /// Uniform bins over `[0, upper]`; values at or above `upper` land in the
    /// last bin, and `upper == 0` sends everything to bin 0.
    pub fn from_values(values: &[f64], upper: f64, bins: usize) -> Self {
        let edges = (0..=bins).map(|i| upper * i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = if upper > 0.0 {
                ((v / upper * bins as f64).floor() as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// L1 distance between the normalized mass vectors of two histograms
    /// built on identical edges.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.edges != other.edges {
            return Err(Error::invalid("histograms have different bin edges"));
        }
        Ok(self
            .normalized()
            .iter()
            .zip(other.normalized())
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// 32-bin histogram of interior Sobel magnitudes over `[0, max observed]`.
pub fn edge_gradient_histogram(image: &Image) -> Result<GradientHistogram> {
    let mags = sobel_magnitudes(image)?;
    let max = mags.iter().copied().fold(0.0, f64::max);
    Ok(GradientHistogram::from_values(&mags, max, HISTOGRAM_BINS))
}

/// Nearest-rank percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
