//! Forgery visual clue extraction.
//!
//! An image `I` is restored `N` times, coarse to fine. The last `K + 1`
//! restorations give signed differences `D_n = I - R_n`, each difference is
//! Fourier transformed into `F_n`, and the auxiliary input is the channel
//! concatenation of `sum(F_n)` and `sum(D_n)`.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

pub const DEFAULT_STEPS: usize = 5;
pub const DEFAULT_LAST: usize = 2;
pub const DEFAULT_MAX_SIGMA: f64 = 4.0;

pub const CONTAINER_MAGIC: &[u8; 4] = b"FVCE";
pub const CONTAINER_VERSION: u16 = 1;
pub const CONTAINER_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FvceError {
    #[error("restoration backend failed: {0}")]
    BackendFailure(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("need {needed} restorations, have {available}")]
    IndexOutOfRange { needed: usize, available: usize },
    #[error("invalid plane: {0}")]
    InvalidPlane(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("bad container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Planar image: `data[c * H * W + y * W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, FvceError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(FvceError::InvalidPlane(format!(
                "dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(FvceError::InvalidPlane(format!(
                "{} values for {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FvceError::InvalidPlane("non-finite value".into()));
        }
        Ok(ImagePlane {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        ImagePlane {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn scale(&self, factor: f64) -> ImagePlane {
        ImagePlane {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_same_shape(&self, other: &ImagePlane) -> Result<(), FvceError> {
        if self.shape() != other.shape() {
            return Err(FvceError::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// Decodes to `[0, 1]` reals: one channel for grayscale sources, RGB otherwise.
    pub fn from_image(image: &DynamicImage) -> Self {
        Self::from_image_with_channels(image, if image.color().has_color() { 3 } else { 1 })
    }

    fn from_image_with_channels(image: &DynamicImage, channels: usize) -> Self {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut data = vec![0.0; w * h * channels];
        if channels == 1 {
            let luma = image.to_luma16();
            for (x, y, p) in luma.enumerate_pixels() {
                data[y as usize * w + x as usize] = p.0[0] as f64 / 65535.0;
            }
        } else {
            let rgb = image.to_rgb16();
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    data[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 65535.0;
                }
            }
        }
        ImagePlane {
            height: h,
            width: w,
            channels,
            data,
        }
    }

    pub fn load(path: &Path) -> Result<Self, FvceError> {
        Ok(Self::from_image(&image::open(path)?))
    }
}

/// Produces restorations of an image, ordered coarse to fine.
pub trait RestorationBackend: Send + Sync {
    /// `source` is the file the image came from, when there is one.
    fn restore(
        &self,
        image: &ImagePlane,
        source: Option<&Path>,
        steps: usize,
    ) -> Result<Vec<ImagePlane>, FvceError>;
}

/// Returns the input unchanged at every step.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRestorer;

impl RestorationBackend for IdentityRestorer {
    fn restore(
        &self,
        image: &ImagePlane,
        _: Option<&Path>,
        steps: usize,
    ) -> Result<Vec<ImagePlane>, FvceError> {
        Ok(vec![image.clone(); steps])
    }
}

/// Progressive Gaussian low-pass: step `n` of `N` blurs with
/// `sigma = max_sigma * (N - n + 1) / N`, applied in the frequency domain
/// with periodic boundaries.
#[derive(Debug, Clone, Copy)]
pub struct LowPassRestorer {
    pub max_sigma: f64,
}

impl Default for LowPassRestorer {
    fn default() -> Self {
        LowPassRestorer {
            max_sigma: DEFAULT_MAX_SIGMA,
        }
    }
}

fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    };
    k / n as f64
}

impl RestorationBackend for LowPassRestorer {
    fn restore(
        &self,
        image: &ImagePlane,
        _: Option<&Path>,
        steps: usize,
    ) -> Result<Vec<ImagePlane>, FvceError> {
        if !(self.max_sigma.is_finite() && self.max_sigma > 0.0) {
            return Err(FvceError::BackendFailure(format!(
                "max_sigma must be positive, got {}",
                self.max_sigma
            )));
        }
        let (h, w, channels) = image.shape();
        let mut planner = FftPlanner::new();
        let spectra: Vec<Vec<Complex64>> = (0..channels)
            .map(|c| fft2d(&mut planner, image.channel(c), h, w))
            .collect();
        let radius2: Vec<f64> = (0..h * w)
            .map(|i| {
                let fy = signed_frequency(i / w, h);
                let fx = signed_frequency(i % w, w);
                fx * fx + fy * fy
            })
            .collect();

        let mut out = Vec::with_capacity(steps);
        for n in 1..=steps {
            let sigma = self.max_sigma * (steps - n + 1) as f64 / steps as f64;
            let k = -2.0 * PI * PI * sigma * sigma;
            let mut data = Vec::with_capacity(h * w * channels);
            for spectrum in &spectra {
                let filtered: Vec<Complex64> = spectrum
                    .iter()
                    .zip(&radius2)
                    .map(|(v, r2)| v * (k * r2).exp())
                    .collect();
                let spatial = ifft2d(&mut planner, filtered, h, w);
                data.extend(spatial.iter().map(|v| v.re));
            }
            out.push(ImagePlane::new(h, w, channels, data)?);
        }
        Ok(out)
    }
}

/// Reads `<stem>.restore.<n>.png` for `n = 1..=N` from `dir`, or from the
/// source image's directory when `dir` is unset.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedRestorer {
    pub dir: Option<PathBuf>,
}

impl PrecomputedRestorer {
    pub fn restoration_path(dir: &Path, stem: &str, n: usize) -> PathBuf {
        dir.join(format!("{stem}.restore.{n}.png"))
    }
}

impl RestorationBackend for PrecomputedRestorer {
    fn restore(
        &self,
        image: &ImagePlane,
        source: Option<&Path>,
        steps: usize,
    ) -> Result<Vec<ImagePlane>, FvceError> {
        let source = source.ok_or_else(|| {
            FvceError::BackendFailure("precomputed restorations need a source path".into())
        })?;
        let stem = source
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| FvceError::BackendFailure(format!("no stem in {}", source.display())))?;
        let dir = match &self.dir {
            Some(d) => d.clone(),
            None => source.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        (1..=steps)
            .map(|n| {
                let path = Self::restoration_path(&dir, stem, n);
                let decoded = image::open(&path)
                    .map_err(|e| FvceError::BackendFailure(format!("{}: {e}", path.display())))?;
                Ok(ImagePlane::from_image_with_channels(
                    &decoded,
                    image.channels(),
                ))
            })
            .collect()
    }
}

/// Runs the backend and checks it returned `steps` planes shaped like `image`.
pub fn restore_sequence(
    image: &ImagePlane,
    backend: &dyn RestorationBackend,
    source: Option<&Path>,
    steps: usize,
) -> Result<Vec<ImagePlane>, FvceError> {
    if steps == 0 {
        return Err(FvceError::BackendFailure(
            "at least one step is required".into(),
        ));
    }
    let restorations = backend.restore(image, source, steps)?;
    if restorations.len() != steps {
        return Err(FvceError::BackendFailure(format!(
            "backend returned {} restorations for {steps} steps",
            restorations.len()
        )));
    }
    for r in &restorations {
        image.check_same_shape(r)?;
    }
    Ok(restorations)
}

/// `D_n = I - R_n` for the last `last + 1` restorations, oldest first. Signed, unclamped.
pub fn difference_stack(
    image: &ImagePlane,
    restorations: &[ImagePlane],
    last: usize,
) -> Result<Vec<ImagePlane>, FvceError> {
    let needed = last + 1;
    if needed > restorations.len() {
        return Err(FvceError::IndexOutOfRange {
            needed,
            available: restorations.len(),
        });
    }
    restorations[restorations.len() - needed..]
        .iter()
        .map(|r| {
            image.check_same_shape(r)?;
            Ok(ImagePlane {
                data: image.data.iter().zip(&r.data).map(|(a, b)| a - b).collect(),
                ..image.clone()
            })
        })
        .collect()
}

fn fft2d(planner: &mut FftPlanner<f64>, values: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform2d(planner, &mut buf, h, w, false);
    buf
}

/// Inverse transform including the `1 / (H * W)` normalization.
fn ifft2d(
    planner: &mut FftPlanner<f64>,
    mut buf: Vec<Complex64>,
    h: usize,
    w: usize,
) -> Vec<Complex64> {
    transform2d(planner, &mut buf, h, w, true);
    let norm = 1.0 / (h * w) as f64;
    buf.iter_mut().for_each(|v| *v *= norm);
    buf
}

fn transform2d(
    planner: &mut FftPlanner<f64>,
    buf: &mut [Complex64],
    h: usize,
    w: usize,
    inverse: bool,
) {
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Frequency maps for a difference stack.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyStack {
    /// Zero-frequency-centered `log1p(|F|)` planes.
    pub planes: Vec<ImagePlane>,
    /// Unshifted, unscaled spectra: `raw[n][channel][y * W + x]`.
    pub raw: Vec<Vec<Vec<Complex64>>>,
}

pub fn frequency_stack(differences: &[ImagePlane]) -> FrequencyStack {
    let mut planner = FftPlanner::new();
    let mut planes = Vec::with_capacity(differences.len());
    let mut raw = Vec::with_capacity(differences.len());
    for d in differences {
        let (h, w, channels) = d.shape();
        let mut data = vec![0.0; h * w * channels];
        let mut spectra = Vec::with_capacity(channels);
        for c in 0..channels {
            let spectrum = fft2d(&mut planner, d.channel(c), h, w);
            let out = &mut data[c * h * w..(c + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let sy = (y + h / 2) % h;
                    let sx = (x + w / 2) % w;
                    out[sy * w + sx] = spectrum[y * w + x].norm().ln_1p();
                }
            }
            spectra.push(spectrum);
        }
        planes.push(ImagePlane {
            height: h,
            width: w,
            channels,
            data,
        });
        raw.push(spectra);
    }
    FrequencyStack { planes, raw }
}

/// `Concat(sum F_n, sum D_n)` along channels, frequency sums first.
pub fn build_extra_info(
    frequencies: &[ImagePlane],
    differences: &[ImagePlane],
) -> Result<ImagePlane, FvceError> {
    if frequencies.len() != differences.len() {
        return Err(FvceError::InvalidPlane(format!(
            "{} frequency planes for {} differences",
            frequencies.len(),
            differences.len()
        )));
    }
    let first = differences
        .first()
        .ok_or_else(|| FvceError::InvalidPlane("empty stack".into()))?;
    for p in frequencies.iter().chain(differences) {
        first.check_same_shape(p)?;
    }
    let (h, w, channels) = first.shape();
    let n = h * w * channels;
    let mut data = vec![0.0; 2 * n];
    for f in frequencies {
        data[..n].iter_mut().zip(&f.data).for_each(|(a, v)| *a += v);
    }
    for d in differences {
        data[n..].iter_mut().zip(&d.data).for_each(|(a, v)| *a += v);
    }
    Ok(ImagePlane {
        height: h,
        width: w,
        channels: 2 * channels,
        data,
    })
}

/// All artifacts for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClueStack {
    /// `R_n` for `n = N - K ..= N`.
    pub restorations: Vec<ImagePlane>,
    pub differences: Vec<ImagePlane>,
    pub frequencies: FrequencyStack,
    pub extra_info: ImagePlane,
}

pub fn extract_clues(
    image: &ImagePlane,
    backend: &dyn RestorationBackend,
    source: Option<&Path>,
    steps: usize,
    last: usize,
) -> Result<ClueStack, FvceError> {
    let all = restore_sequence(image, backend, source, steps)?;
    let differences = difference_stack(image, &all, last)?;
    let frequencies = frequency_stack(&differences);
    let extra_info = build_extra_info(&frequencies.planes, &differences)?;
    let restorations = all[all.len() - (last + 1)..].to_vec();
    Ok(ClueStack {
        restorations,
        differences,
        frequencies,
        extra_info,
    })
}

/// Little-endian container: 16-byte header `FVCE | version u16 | H u16 | W u16
/// | planes u16 | 4 reserved bytes`, then `planes * H * W` f32 values, plane-major.
pub fn write_container<W: Write>(plane: &ImagePlane, out: &mut W) -> Result<(), FvceError> {
    let dim = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| FvceError::Container(format!("{what} {v} exceeds u16")))
    };
    let mut header = [0u8; CONTAINER_HEADER_LEN];
    header[..4].copy_from_slice(CONTAINER_MAGIC);
    header[4..6].copy_from_slice(&CONTAINER_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&dim(plane.height, "height")?.to_le_bytes());
    header[8..10].copy_from_slice(&dim(plane.width, "width")?.to_le_bytes());
    header[10..12].copy_from_slice(&dim(plane.channels, "planes")?.to_le_bytes());
    out.write_all(&header)?;
    let mut body = Vec::with_capacity(plane.data.len() * 4);
    for v in &plane.data {
        body.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&body)?;
    Ok(())
}

pub fn encode_container(plane: &ImagePlane) -> Result<Vec<u8>, FvceError> {
    let mut buf = Vec::with_capacity(CONTAINER_HEADER_LEN + plane.data.len() * 4);
    write_container(plane, &mut buf)?;
    Ok(buf)
}

pub fn read_container<R: Read>(input: &mut R) -> Result<ImagePlane, FvceError> {
    let mut header = [0u8; CONTAINER_HEADER_LEN];
    input.read_exact(&mut header)?;
    if &header[..4] != CONTAINER_MAGIC {
        return Err(FvceError::Container("bad magic".into()));
    }
    let field = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]) as usize;
    let version = field(4);
    if version != CONTAINER_VERSION as usize {
        return Err(FvceError::Container(format!(
            "unsupported version {version}"
        )));
    }
    let (h, w, planes) = (field(6), field(8), field(10));
    let mut body = vec![0u8; h * w * planes * 4];
    input.read_exact(&mut body)?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    ImagePlane::new(h, w, planes, data).map_err(|e| FvceError::Container(e.to_string()))
}

/// One min-max normalized grayscale image per channel. Constant planes render black.
pub fn visualize(plane: &ImagePlane) -> Vec<GrayImage> {
    let (h, w, channels) = plane.shape();
    (0..channels)
        .map(|c| {
            let values = plane.channel(c);
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let span = hi - lo;
            GrayImage::from_fn(w as u32, h as u32, |x, y| {
                let v = values[y as usize * w + x as usize];
                let scaled = if span > 0.0 { (v - lo) / span } else { 0.0 };
                Luma([(scaled * 255.0).round() as u8])
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(h: usize, w: usize, values: &[f64]) -> ImagePlane {
        ImagePlane::new(h, w, 1, values.to_vec()).unwrap()
    }

    fn ramp(h: usize, w: usize, channels: usize) -> ImagePlane {
        let data = (0..h * w * channels)
            .map(|i| ((i * 37 + 11) % 101) as f64 / 100.0)
            .collect();
        ImagePlane::new(h, w, channels, data).unwrap()
    }

    #[test]
    fn identity_restorer_gives_zero_extra_info() {
        let img = ramp(8, 6, 3);
        let clues = extract_clues(&img, &IdentityRestorer, None, 5, 2).unwrap();
        assert_eq!(clues.restorations.len(), 3);
        assert!(clues.restorations.iter().all(|r| r == &img));
        assert_eq!(clues.extra_info.channels(), 6);
        assert!(clues.extra_info.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_by_zero() {
        let img = plane(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let zero = ImagePlane::zeros(2, 2, 1);
        let d = difference_stack(&img, &[zero], 0).unwrap();
        assert_eq!(d[0].data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn difference_bounds() {
        let img = ramp(4, 4, 1);
        let rs = vec![img.clone(); 3];
        assert_eq!(difference_stack(&img, &rs, 2).unwrap().len(), 3);
        assert!(matches!(
            difference_stack(&img, &rs, 3),
            Err(FvceError::IndexOutOfRange {
                needed: 4,
                available: 3
            })
        ));
        let other = ramp(4, 5, 1);
        assert!(matches!(
            difference_stack(&img, &[other], 0),
            Err(FvceError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn delta_spectrum_is_flat() {
        let d = plane(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let f = frequency_stack(&[d]);
        for v in &f.raw[0][0] {
            assert!((v.norm() - 1.0).abs() < 1e-15);
        }
        for v in f.planes[0].data() {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_difference_zero_spectrum() {
        let f = frequency_stack(&[ImagePlane::zeros(3, 5, 2)]);
        assert!(f.planes[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centering_moves_dc_to_middle() {
        // A constant plane has all its energy at zero frequency.
        let f = frequency_stack(&[plane(4, 4, &[1.0; 16])]);
        let p = &f.planes[0];
        assert!((p.get(0, 2, 2) - 17f64.ln()).abs() < 1e-12);
        assert_eq!(p.get(0, 0, 0), 0.0);
    }

    #[test]
    fn extra_info_linearity() {
        let d = ramp(3, 3, 1);
        let f = frequency_stack(&[d.clone(), d.clone()]);
        let extra = build_extra_info(&f.planes, &[d.clone(), d.clone()]).unwrap();
        for (a, b) in extra.channel(1).iter().zip(d.data()) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(matches!(
            build_extra_info(&f.planes, &[d]),
            Err(FvceError::InvalidPlane(_))
        ));
    }

    #[test]
    fn low_pass_is_coarse_to_fine() {
        let img = ramp(16, 12, 1);
        let rs = restore_sequence(&img, &LowPassRestorer::default(), None, 5).unwrap();
        let norms: Vec<f64> = difference_stack(&img, &rs, 4)
            .unwrap()
            .iter()
            .map(ImagePlane::l2_norm)
            .collect();
        for pair in norms.windows(2) {
            assert!(pair[1] <= pair[0], "{norms:?}");
        }
    }

    #[test]
    fn container_round_trip() {
        let p = ramp(5, 7, 4);
        let bytes = encode_container(&p).unwrap();
        assert_eq!(&bytes[..4], b"FVCE");
        assert_eq!(bytes.len(), 16 + 5 * 7 * 4 * 4);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 5);
        assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 7);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 4);
        let back = read_container(&mut bytes.as_slice()).unwrap();
        for (a, b) in back.data().iter().zip(p.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_container(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn rejects_bad_planes() {
        assert!(ImagePlane::new(0, 1, 1, vec![]).is_err());
        assert!(ImagePlane::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImagePlane::new(2, 1, 1, vec![0.0]).is_err());
    }

    #[test]
    fn visualization_spans_full_range() {
        let imgs = visualize(&plane(1, 3, &[-1.0, 0.0, 1.0]));
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].as_raw(), &vec![0, 128, 255]);
    }
}
