//! Pixel images, tile averaging and radial profiles.
//!
//! Images are row-major intensity grids with a physical pixel pitch and
//! a lab-frame origin; pixel `(col, row)` has its center at
//! `(origin_x + col·pitch, origin_y + row·pitch)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Intensity image (counts/s) on a square pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_nm: f64,
    pub origin_x_nm: f64,
    pub origin_y_nm: f64,
    /// Row-major: `data[row * width + col]`.
    pub data: Vec<f64>,
}

impl PixelImage {
    pub fn zeros(
        width: usize,
        height: usize,
        pixel_pitch_nm: f64,
        origin_x_nm: f64,
        origin_y_nm: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter("image dimensions must be nonzero".into()));
        }
        if !(pixel_pitch_nm.is_finite() && pixel_pitch_nm > 0.0) {
            return Err(Error::Parameter(format!(
                "pixel pitch must be positive, got {pixel_pitch_nm}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch_nm,
            origin_x_nm,
            origin_y_nm,
            data: vec![0.0; width * height],
        })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Lab-frame center of a pixel.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x_nm + col as f64 * self.pixel_pitch_nm,
            self.origin_y_nm + row as f64 * self.pixel_pitch_nm,
        )
    }

    /// Nearest pixel to a lab-frame point, if within the grid.
    pub fn nearest_pixel(&self, x_nm: f64, y_nm: f64) -> Option<(usize, usize)> {
        let col = ((x_nm - self.origin_x_nm) / self.pixel_pitch_nm).round();
        let row = ((y_nm - self.origin_y_nm) / self.pixel_pitch_nm).round();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((col as usize, row as usize))
    }

    pub fn max_pixel(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for row in 0..self.height {
            for col in 0..self.width {
                let v = self.get(col, row);
                if v > best.2 {
                    best = (col, row, v);
                }
            }
        }
        best
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

const TEXT_MAGIC: &str = "nvsim-image 1";
const BINARY_MAGIC: &[u8; 8] = b"NVIMGB1\n";

/// Write the plain-text image format: a small header followed by
/// row-major whitespace-separated intensities.
pub fn write_image_text(image: &PixelImage, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TEXT_MAGIC}")?;
    writeln!(w, "width {}", image.width)?;
    writeln!(w, "height {}", image.height)?;
    writeln!(w, "pitch_nm {}", image.pixel_pitch_nm)?;
    writeln!(w, "origin_x_nm {}", image.origin_x_nm)?;
    writeln!(w, "origin_y_nm {}", image.origin_y_nm)?;
    for row in 0..image.height {
        let line: Vec<String> = (0..image.width)
            .map(|col| format!("{}", image.get(col, row)))
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Write the binary image format: magic, little-endian header
/// (u64 width, u64 height, f64 pitch, f64 origin_x, f64 origin_y) and
/// row-major little-endian f64 intensities.
pub fn write_image_binary(image: &PixelImage, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(image.width as u64).to_le_bytes())?;
    w.write_all(&(image.height as u64).to_le_bytes())?;
    w.write_all(&image.pixel_pitch_nm.to_le_bytes())?;
    w.write_all(&image.origin_x_nm.to_le_bytes())?;
    w.write_all(&image.origin_y_nm.to_le_bytes())?;
    for v in &image.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read either image format, detected from the leading magic bytes.
pub fn read_image(path: &Path) -> Result<PixelImage> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 8];
    let n = file.read(&mut magic)?;
    if n == 8 && &magic == BINARY_MAGIC {
        return read_image_binary_body(file, path);
    }
    drop(file);
    read_image_text(path)
}

fn read_image_binary_body(mut file: File, path: &Path) -> Result<PixelImage> {
    let mut u64_buf = [0u8; 8];
    let mut read_u64 = |f: &mut File| -> Result<u64> {
        f.read_exact(&mut u64_buf)?;
        Ok(u64::from_le_bytes(u64_buf))
    };
    let width = read_u64(&mut file)? as usize;
    let height = read_u64(&mut file)? as usize;
    let mut f64_buf = [0u8; 8];
    let mut read_f64 = |f: &mut File| -> Result<f64> {
        f.read_exact(&mut f64_buf)?;
        Ok(f64::from_le_bytes(f64_buf))
    };
    let pitch = read_f64(&mut file)?;
    let ox = read_f64(&mut file)?;
    let oy = read_f64(&mut file)?;
    let mut image = PixelImage::zeros(width, height, pitch, ox, oy)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut bytes = vec![0u8; width * height * 8];
    file.read_exact(&mut bytes)
        .map_err(|_| Error::Parse(format!("{}: truncated pixel data", path.display())))?;
    for (i, chunk) in bytes.chunks_exact(8).enumerate() {
        image.data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(image)
}

fn read_image_text(path: &Path) -> Result<PixelImage> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let bad = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));

    let first = lines.next().ok_or_else(|| bad("empty file"))??;
    if first.trim() != TEXT_MAGIC {
        return Err(bad("not an nvsim image (bad magic line)"));
    }
    let mut width = None;
    let mut height = None;
    let mut pitch = None;
    let mut ox = None;
    let mut oy = None;
    for _ in 0..5 {
        let line = lines.next().ok_or_else(|| bad("truncated header"))??;
        let mut parts = line.split_whitespace();
        let key = parts.next().ok_or_else(|| bad("empty header line"))?;
        let value = parts.next().ok_or_else(|| bad("header line missing value"))?;
        match key {
            "width" => width = Some(value.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
            "height" => height = Some(value.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
            "pitch_nm" => pitch = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?),
            "origin_x_nm" => ox = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?),
            "origin_y_nm" => oy = Some(value.parse::<f64>().map_err(|e| bad(&e.to_string()))?),
            other => return Err(bad(&format!("unknown header key {other}"))),
        }
    }
    let width = width.ok_or_else(|| bad("missing width"))?;
    let height = height.ok_or_else(|| bad("missing height"))?;
    let mut image = PixelImage::zeros(
        width,
        height,
        pitch.ok_or_else(|| bad("missing pitch_nm"))?,
        ox.ok_or_else(|| bad("missing origin_x_nm"))?,
        oy.ok_or_else(|| bad("missing origin_y_nm"))?,
    )?;
    let mut idx = 0;
    for line in lines {
        for token in line?.split_whitespace() {
            if idx >= width * height {
                return Err(bad("more pixels than width × height"));
            }
            image.data[idx] = token.parse::<f64>().map_err(|e| bad(&e.to_string()))?;
            idx += 1;
        }
    }
    if idx != width * height {
        return Err(bad(&format!(
            "expected {} pixels, found {idx}",
            width * height
        )));
    }
    Ok(image)
}

/// Bookkeeping for tile averaging: skipped tiles are counted, never
/// silently dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileStats {
    pub n_used: usize,
    pub n_skipped: usize,
}

/// Pixel-wise average of square tiles centered on the nearest pixel to
/// each target. The output is in target-centered coordinates (the target
/// sits at `(0, 0)`), with the input pitch.
pub fn tile_average(
    image: &PixelImage,
    targets: &[(f64, f64)],
    tile_size_nm: f64,
) -> Result<(PixelImage, TileStats)> {
    if targets.is_empty() {
        return Err(Error::Parameter("tile averaging needs ≥ 1 target".into()));
    }
    if !(tile_size_nm.is_finite() && tile_size_nm > 0.0) {
        return Err(Error::Parameter(format!(
            "tile size must be positive, got {tile_size_nm}"
        )));
    }
    let half = ((tile_size_nm / (2.0 * image.pixel_pitch_nm)).round() as usize).max(1);
    let size = 2 * half + 1;
    let mut sum = vec![0.0f64; size * size];
    let mut stats = TileStats {
        n_used: 0,
        n_skipped: 0,
    };

    for &(tx, ty) in targets {
        let center = image.nearest_pixel(tx, ty);
        let (c, r) = match center {
            Some(p) => p,
            None => {
                stats.n_skipped += 1;
                continue;
            }
        };
        if c < half || r < half || c + half >= image.width || r + half >= image.height {
            stats.n_skipped += 1;
            continue;
        }
        for dy in 0..size {
            let row = r + dy - half;
            for dx in 0..size {
                let col = c + dx - half;
                sum[dy * size + dx] += image.get(col, row);
            }
        }
        stats.n_used += 1;
    }

    if stats.n_used == 0 {
        return Err(Error::Degenerate(format!(
            "no tile fits inside the image ({} skipped)",
            stats.n_skipped
        )));
    }
    let offset = -(half as f64) * image.pixel_pitch_nm;
    let mut out = PixelImage::zeros(size, size, image.pixel_pitch_nm, offset, offset)?;
    for (o, s) in out.data.iter_mut().zip(&sum) {
        *o = s / stats.n_used as f64;
    }
    Ok((out, stats))
}

/// Parameters for synthesizing a spot-array test image: a rectangular
/// grid of Gaussian emission spots whose centers are jittered around
/// their targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotArraySpec {
    pub pixel_pitch_nm: f64,
    pub spot_spacing_nm: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub margin_nm: f64,
    pub amplitude: f64,
    pub psf_sigma_nm: f64,
    /// Per-axis Gaussian jitter of the spot centers.
    pub jitter_sigma_nm: f64,
    pub offset: f64,
    /// Additive per-pixel Gaussian noise.
    pub noise_sigma: f64,
    /// Rescale the drawn jitters so their realized pooled per-axis RMS
    /// equals `jitter_sigma_nm` exactly, removing generator shot noise
    /// from round-trip tests.
    pub normalize_jitter: bool,
}

/// Synthesize a spot-array image; returns the image and the target
/// positions of the spots.
pub fn synthesize_spot_array(spec: &SpotArraySpec, seed: u64) -> Result<(PixelImage, Vec<(f64, f64)>)> {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    let width =
        ((2.0 * spec.margin_nm + (spec.n_cols - 1) as f64 * spec.spot_spacing_nm)
            / spec.pixel_pitch_nm)
            .ceil() as usize
            + 1;
    let height =
        ((2.0 * spec.margin_nm + (spec.n_rows - 1) as f64 * spec.spot_spacing_nm)
            / spec.pixel_pitch_nm)
            .ceil() as usize
            + 1;
    let mut image = PixelImage::zeros(width, height, spec.pixel_pitch_nm, 0.0, 0.0)?;

    let mut targets = Vec::with_capacity(spec.n_cols * spec.n_rows);
    for row in 0..spec.n_rows {
        for col in 0..spec.n_cols {
            targets.push((
                spec.margin_nm + col as f64 * spec.spot_spacing_nm,
                spec.margin_nm + row as f64 * spec.spot_spacing_nm,
            ));
        }
    }

    let mut rng = crate::rng::rng_from_seed(seed);
    let mut jitters = Vec::with_capacity(targets.len());
    if spec.jitter_sigma_nm > 0.0 {
        let jitter = Normal::new(0.0, spec.jitter_sigma_nm)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        for _ in 0..targets.len() {
            jitters.push((jitter.sample(&mut rng), jitter.sample(&mut rng)));
        }
        if spec.normalize_jitter {
            let pooled = (jitters
                .iter()
                .map(|(dx, dy)| dx * dx + dy * dy)
                .sum::<f64>()
                / (2.0 * jitters.len() as f64))
                .sqrt();
            let scale = spec.jitter_sigma_nm / pooled;
            for j in jitters.iter_mut() {
                j.0 *= scale;
                j.1 *= scale;
            }
        }
    } else {
        jitters.resize(targets.len(), (0.0, 0.0));
    }

    for v in image.data.iter_mut() {
        *v = spec.offset;
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        for v in image.data.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let _ = rng.random::<u64>();

    let window = (5.0 * spec.psf_sigma_nm / spec.pixel_pitch_nm).ceil() as i64;
    let inv_2s2 = 1.0 / (2.0 * spec.psf_sigma_nm * spec.psf_sigma_nm);
    for (&(tx, ty), &(dx, dy)) in targets.iter().zip(&jitters) {
        let (cx, cy) = (tx + dx, ty + dy);
        let c0 = (cx / spec.pixel_pitch_nm).round() as i64;
        let r0 = (cy / spec.pixel_pitch_nm).round() as i64;
        for row in (r0 - window).max(0)..=(r0 + window).min(height as i64 - 1) {
            for col in (c0 - window).max(0)..=(c0 + window).min(width as i64 - 1) {
                let (px, py) = image.pixel_center(col as usize, row as usize);
                let r2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                let v = image.get(col as usize, row as usize)
                    + spec.amplitude * (-r2 * inv_2s2).exp();
                image.set(col as usize, row as usize, v);
            }
        }
    }
    Ok((image, targets))
}

/// One annular bin of a radial profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialBin {
    pub r_mid_nm: f64,
    pub mean: f64,
    pub se: f64,
    pub n_pixels: usize,
}

/// Angle-averaged radial profile about `(center_x, center_y)`.
pub fn radial_profile(
    image: &PixelImage,
    center_x_nm: f64,
    center_y_nm: f64,
    bin_width_nm: f64,
) -> Result<Vec<RadialBin>> {
    if !(bin_width_nm.is_finite() && bin_width_nm > 0.0) {
        return Err(Error::Parameter(format!(
            "bin width must be positive, got {bin_width_nm}"
        )));
    }
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for row in 0..image.height {
        for col in 0..image.width {
            let (x, y) = image.pixel_center(col, row);
            let r = ((x - center_x_nm).powi(2) + (y - center_y_nm).powi(2)).sqrt();
            let bin = (r / bin_width_nm) as usize;
            if bin >= sums.len() {
                sums.resize(bin + 1, (0.0, 0.0, 0));
            }
            let v = image.get(col, row);
            sums[bin].0 += v;
            sums[bin].1 += v * v;
            sums[bin].2 += 1;
        }
    }
    Ok(sums
        .iter()
        .enumerate()
        .filter(|(_, (_, _, n))| *n > 0)
        .map(|(bin, &(s, s2, n))| {
            let mean = s / n as f64;
            let var = if n > 1 {
                ((s2 - s * s / n as f64) / (n - 1) as f64).max(0.0)
            } else {
                0.0
            };
            RadialBin {
                r_mid_nm: (bin as f64 + 0.5) * bin_width_nm,
                mean,
                se: (var / n as f64).sqrt(),
                n_pixels: n,
            }
        })
        .collect())
}
