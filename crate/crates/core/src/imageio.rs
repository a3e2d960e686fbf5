//! Rasters, boxes, dataset manifests and the center-crop augmentation.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", width * height * channels),
                actual: format!("{} samples", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from raw values, clamping each into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// `f(x, y, c)` must return a value in `[0, 1]`; anything else is clamped.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_clamped(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel mean at `(x, y)`.
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let base = (y * self.width + x) * self.channels;
        self.data[base..base + self.channels].iter().sum::<f64>() / self.channels as f64
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox {
            x1: 0,
            y1: 0,
            x2: self.width - 1,
            y2: self.height - 1,
        }
    }

    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = (0..self.width * self.height)
            .map(|i| self.data[i * 3..i * 3 + 3].iter().sum::<f64>() / 3.0)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Converts to `channels` (1 or 3): gray is replicated, colour is averaged.
    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (3, 1) => Ok(self.to_gray()),
            (1, 3) => Ok(Image {
                width: self.width,
                height: self.height,
                channels: 3,
                data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            }),
            (_, other) => Err(Error::invalid(format!("unsupported channel count {other}"))),
        }
    }

    /// Single-channel view of channel `c`.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn mean_intensity(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn load(path: &Path) -> Result<Image> {
        let dynimg = image::open(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let color = dynimg.color();
        if color.has_color() {
            let rgb = dynimg.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
            Image::new(w as usize, h as usize, 3, data)
        } else {
            let luma = dynimg.to_luma8();
            let (w, h) = luma.dimensions();
            let data = luma.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
            Image::new(w as usize, h as usize, 1, data)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    /// Writes PNG, or binary PPM/PGM when the extension is `ppm`/`pgm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if ext == "ppm" || ext == "pgm" {
            return self.save_pnm(path);
        }
        let bytes = self.to_bytes();
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn save_pnm(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        write!(w, "{magic}\n{} {}\n255\n", self.width, self.height)
            .and_then(|_| w.write_all(&self.to_bytes()))
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Inclusive integer pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl BoundingBox {
    pub fn new(x1: usize, y1: usize, x2: usize, y2: usize) -> Result<Self> {
        if x1 > x2 || y1 > y2 {
            return Err(Error::MalformedBox([
                x1 as i64, y1 as i64, x2 as i64, y2 as i64,
            ]));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_signed(coords: [i64; 4]) -> Result<Self> {
        let [x1, y1, x2, y2] = coords;
        if x1 < 0 || y1 < 0 || x1 > x2 || y1 > y2 {
            return Err(Error::MalformedBox(coords));
        }
        Ok(Self {
            x1: x1 as usize,
            y1: y1 as usize,
            x2: x2 as usize,
            y2: y2 as usize,
        })
    }

    pub fn width(&self) -> usize {
        self.x2 - self.x1 + 1
    }

    pub fn height(&self) -> usize {
        self.y2 - self.y1 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x2 < width && self.y2 < height
    }

    pub fn check_in(&self, width: usize, height: usize) -> Result<()> {
        if self.fits_in(width, height) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
                width,
                height,
            })
        }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub path: String,
    pub label: usize,
    pub split: Split,
    pub boxes: Option<Vec<BoundingBox>>,
}

/// Class list plus samples; image files are opened lazily by callers.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub samples: Vec<LabeledSample>,
    /// Directory relative sample paths are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    path: String,
    class: String,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boxes: Option<Vec<[i64; 4]>>,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    classes: Vec<String>,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::invalid(format!("duplicate class name `{c}`")));
            }
        }
        Ok(Self {
            classes,
            samples: Vec::new(),
            base_dir: base_dir.into(),
        })
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn push(&mut self, sample: LabeledSample) -> Result<()> {
        if sample.label >= self.classes.len() {
            return Err(Error::LabelOutOfRange {
                label: sample.label,
                classes: self.classes.len(),
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn resolve(&self, sample: &LabeledSample) -> PathBuf {
        let p = Path::new(&sample.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Parses the line-oriented JSON format.
    ///
    /// The first non-blank line may be a header `{"classes": [...]}`. When it
    /// is absent, `classes` must be supplied. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse(
        text: &str,
        classes: Option<&[String]>,
        base_dir: impl Into<PathBuf>,
        context: &str,
    ) -> Result<Self> {
        let mut manifest: Option<DatasetManifest> = None;
        let base_dir = base_dir.into();
        let parse_err = |line: usize, message: String| Error::Parse {
            context: context.to_string(),
            line,
            message,
        };
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if manifest.is_none() {
                if let Ok(header) = serde_json::from_str::<ManifestHeader>(line) {
                    manifest = Some(DatasetManifest::new(header.classes, base_dir.clone())?);
                    continue;
                }
                let classes = classes.ok_or_else(|| {
                    parse_err(lineno, "no class header and no class list supplied".into())
                })?;
                manifest = Some(DatasetManifest::new(classes.to_vec(), base_dir.clone())?);
            }
            let m = manifest.as_mut().expect("initialized above");
            let entry: ManifestLine =
                serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
            let label = m
                .class_index(&entry.class)
                .ok_or_else(|| Error::UnknownClass(entry.class.clone()))?;
            let boxes = entry
                .boxes
                .map(|bs| bs.into_iter().map(BoundingBox::from_signed).collect())
                .transpose()?;
            m.push(LabeledSample {
                path: entry.path,
                label,
                split: entry.split,
                boxes,
            })?;
        }
        match manifest {
            Some(m) => Ok(m),
            None => match classes {
                Some(c) => DatasetManifest::new(c.to_vec(), base_dir),
                None => Err(parse_err(0, "empty manifest without a class list".into())),
            },
        }
    }

    /// Serializes with a class header line followed by one line per sample.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&ManifestHeader {
            classes: self.classes.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            let line = ManifestLine {
                path: s.path.clone(),
                class: self.classes[s.label].clone(),
                split: s.split,
                boxes: s
                    .boxes
                    .as_ref()
                    .map(|bs| bs.iter().map(|b| b.as_array().map(|v| v as i64)).collect()),
            };
            out.push_str(&serde_json::to_string(&line).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a manifest; relative sample paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_with_classes(path, None)
}

pub fn load_manifest_with_classes(path: &Path, classes: Option<&[String]>) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, classes, base, &path.display().to_string())
}

/// Caches decoded images keyed by path for repeated reads of one manifest.
#[derive(Default)]
pub struct ImageCache {
    images: HashMap<PathBuf, Image>,
}

impl ImageCache {
    pub fn get(&mut self, path: &Path) -> Result<&Image> {
        if !self.images.contains_key(path) {
            let img = Image::load(path)?;
            self.images.insert(path.to_path_buf(), img);
        }
        Ok(&self.images[path])
    }
}

pub fn crop(image: &Image, bbox: &BoundingBox) -> Result<Image> {
    bbox.check_in(image.width, image.height)?;
    let (w, h, c) = (bbox.width(), bbox.height(), image.channels);
    let mut data = Vec::with_capacity(w * h * c);
    for y in bbox.y1..=bbox.y2 {
        let start = (y * image.width + bbox.x1) * c;
        data.extend_from_slice(&image.data[start..start + w * c]);
    }
    Ok(Image {
        width: w,
        height: h,
        channels: c,
        data,
    })
}

pub const DEFAULT_CROP_COUNT: usize = 40;

/// Integer corner intervals for the constrained center crop, endpoints
/// rounded inward: `(x1, y1, x2, y2)` ranges as inclusive pairs.
pub fn center_crop_intervals(width: usize, height: usize) -> Result<[(usize, usize); 4]> {
    if width < 20 || height < 20 {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min_width: 20,
            min_height: 20,
        });
    }
    let interval = |n: usize, lo: usize, hi: usize| ((n * lo).div_ceil(20), n * hi / 20);
    Ok([
        interval(width, 1, 3),
        interval(height, 1, 3),
        interval(width, 17, 19),
        interval(height, 17, 19),
    ])
}

/// Draws `count` boxes whose corners fall uniformly and independently on
/// the integer lattice of the center-crop intervals, keeping roughly
/// 49%–81% of the image around its center.
pub fn random_center_crops<R: rand::Rng + ?Sized>(
    image: &Image,
    count: usize,
    rng: &mut R,
) -> Result<Vec<BoundingBox>> {
    let [ix1, iy1, ix2, iy2] = center_crop_intervals(image.width, image.height)?;
    Ok((0..count)
        .map(|_| BoundingBox {
            x1: rng.random_range(ix1.0..=ix1.1),
            y1: rng.random_range(iy1.0..=iy1.1),
            x2: rng.random_range(ix2.0..=ix2.1),
            y2: rng.random_range(iy2.0..=iy2.1),
        })
        .collect())
}

/// Bilinear resize with corner-aligned sampling: output corners land
/// exactly on input corners.
pub fn resize_bilinear(image: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if (width, height) == image.dims() {
        return Ok(image.clone());
    }
    let c = image.channels;
    let coord = |i: usize, out: usize, src: usize| -> (usize, usize, f64) {
        let pos = if out == 1 {
            (src - 1) as f64 / 2.0
        } else {
            i as f64 * (src - 1) as f64 / (out - 1) as f64
        };
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let xs: Vec<_> = (0..width).map(|i| coord(i, width, image.width)).collect();
    let mut data = Vec::with_capacity(width * height * c);
    for j in 0..height {
        let (y0, y1, fy) = coord(j, height, image.height);
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = image.get(x0, y0, ch) * (1.0 - fx) + image.get(x1, y0, ch) * fx;
                let bot = image.get(x0, y1, ch) * (1.0 - fx) + image.get(x1, y1, ch) * fx;
                data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image {
        width,
        height,
        channels: c,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn gradient(w: usize, h: usize, c: usize) -> Image {
        Image::from_fn(w, h, c, |x, y, ch| {
            ((x * 7 + y * 13 + ch * 29) % 256) as f64 / 255.0
        })
        .unwrap()
    }

    #[test]
    fn image_rejects_out_of_range_and_bad_lengths() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(0, 1, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn full_box_crop_is_identity() {
        let img = gradient(9, 5, 3);
        assert_eq!(crop(&img, &img.full_box()).unwrap(), img);
    }

    #[test]
    fn single_pixel_crop() {
        let img = gradient(4, 4, 3);
        let px = crop(&img, &BoundingBox::new(0, 0, 0, 0).unwrap()).unwrap();
        assert_eq!(px.dims(), (1, 1));
        assert_eq!(px.data(), &img.data()[0..3]);
    }

    #[test]
    fn nested_crops_compose_by_offset() {
        let img = gradient(30, 20, 3);
        let outer = BoundingBox::new(4, 3, 25, 18).unwrap();
        let inner = BoundingBox::new(2, 5, 10, 9).unwrap();
        let twice = crop(&crop(&img, &outer).unwrap(), &inner).unwrap();
        let direct = BoundingBox::new(6, 8, 14, 12).unwrap();
        let once = crop(&img, &direct).unwrap();
        for y in 0..twice.height() {
            for x in 0..twice.width() {
                for c in 0..3 {
                    assert_eq!(twice.get(x, y, c), img.get(6 + x, 8 + y, c));
                }
            }
        }
        assert_eq!(twice, once);
    }

    #[test]
    fn crop_out_of_bounds_errors() {
        let img = gradient(10, 10, 1);
        let err = crop(&img, &BoundingBox::new(5, 5, 10, 9).unwrap()).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    #[test]
    fn center_crops_respect_intervals_for_200px() {
        let img = Image::filled(200, 200, 1, 0.5).unwrap();
        assert_eq!(
            center_crop_intervals(200, 200).unwrap(),
            [(10, 30), (10, 30), (170, 190), (170, 190)]
        );
        let mut rng = seed::rng(11);
        let boxes = random_center_crops(&img, 10_000, &mut rng).unwrap();
        assert_eq!(boxes.len(), 10_000);
        let (mut lo_seen, mut hi_seen) = (false, false);
        for b in &boxes {
            assert!((10..=30).contains(&b.x1) && (10..=30).contains(&b.y1));
            assert!((170..=190).contains(&b.x2) && (170..=190).contains(&b.y2));
            lo_seen |= b.x1 == 10;
            hi_seen |= b.x2 == 190;
        }
        // Lattice endpoints are reachable.
        assert!(lo_seen && hi_seen);
    }

    #[test]
    fn center_crops_keep_the_documented_area_band() {
        for (w, h) in [(20, 20), (64, 48), (227, 300), (999, 41)] {
            let img = Image::filled(w, h, 1, 0.0).unwrap();
            let mut rng = seed::rng(w as u64);
            let boxes = random_center_crops(&img, DEFAULT_CROP_COUNT, &mut rng).unwrap();
            assert_eq!(boxes.len(), DEFAULT_CROP_COUNT);
            for b in boxes {
                let extent = ((b.x2 - b.x1) * (b.y2 - b.y1)) as f64 / (w * h) as f64;
                assert!((0.49..=0.81).contains(&extent), "{w}x{h} {b:?} {extent}");
                assert!(b.fits_in(w, h));
            }
        }
    }

    #[test]
    fn center_crops_are_seed_deterministic_and_reject_small_images() {
        let img = Image::filled(64, 64, 3, 0.5).unwrap();
        let a = random_center_crops(&img, 40, &mut seed::rng(3)).unwrap();
        let b = random_center_crops(&img, 40, &mut seed::rng(3)).unwrap();
        assert_eq!(a, b);
        let small = Image::filled(19, 64, 1, 0.0).unwrap();
        assert!(matches!(
            random_center_crops(&small, 1, &mut seed::rng(0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn resize_identity_constant_and_hand_case() {
        let img = gradient(7, 5, 3);
        assert_eq!(resize_bilinear(&img, 7, 5).unwrap(), img);

        let flat = Image::filled(5, 3, 3, 0.3).unwrap();
        for (w, h) in [(1, 1), (2, 9), (17, 4)] {
            let r = resize_bilinear(&flat, w, h).unwrap();
            assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        }

        let two = Image::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let three = resize_bilinear(&two, 3, 1).unwrap();
        assert_eq!(three.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn manifest_maps_classes_and_validates_boxes() {
        let classes: Vec<String> = ["dog", "cat", "cow"].iter().map(|s| s.to_string()).collect();
        let text = r#"{"path": "a.png", "class": "cow", "split": "train"}"#;
        let m = DatasetManifest::parse(text, Some(&classes), "/data", "t").unwrap();
        assert_eq!(m.samples[0].label, 2);
        assert_eq!(m.resolve(&m.samples[0]), PathBuf::from("/data/a.png"));

        let empty = DatasetManifest::parse("", Some(&classes), "/", "t").unwrap();
        assert!(empty.samples.is_empty());

        let bad = r#"{"path": "a.png", "class": "cow", "split": "test", "boxes": [[10, 0, 5, 4]]}"#;
        assert!(matches!(
            DatasetManifest::parse(bad, Some(&classes), "/", "t"),
            Err(Error::MalformedBox(_))
        ));

        let unknown = r#"{"path": "a.png", "class": "yak", "split": "test"}"#;
        assert!(matches!(
            DatasetManifest::parse(unknown, Some(&classes), "/", "t"),
            Err(Error::UnknownClass(_))
        ));

        let broken = "{\"classes\": [\"a\"]}\n\n{\"path\": 3";
        match DatasetManifest::parse(broken, None, "/", "m.jsonl") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_header_round_trip() {
        let mut m = DatasetManifest::new(vec!["a".into(), "b".into()], "/x").unwrap();
        m.push(LabeledSample {
            path: "p/1.png".into(),
            label: 1,
            split: Split::Test,
            boxes: Some(vec![BoundingBox::new(1, 2, 3, 4).unwrap()]),
        })
        .unwrap();
        let back = DatasetManifest::parse(&m.to_jsonl(), None, "/x", "rt").unwrap();
        assert_eq!(back, m);
        assert!(DatasetManifest::new(vec!["a".into(), "a".into()], "/").is_err());
    }

    #[test]
    fn png_and_ppm_round_trip_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(6, 4, 3);
        for name in ["x.png", "x.ppm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            let back = Image::load(&p).unwrap();
            assert_eq!(back.dims(), img.dims());
            assert_eq!(back.channels(), 3);
            for (a, b) in back.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        let gray = gradient(5, 5, 1);
        let p = dir.path().join("g.png");
        gray.save(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap().channels(), 1);
    }

    #[test]
    fn channel_conversion() {
        let g = gradient(3, 2, 1);
        let rgb = g.with_channels(3).unwrap();
        assert_eq!(rgb.channels(), 3);
        let back = rgb.to_gray();
        assert!(back.data().iter().zip(g.data()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(rgb.channel(2), g);
    }
}
