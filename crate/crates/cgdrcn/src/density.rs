//! Density-map targets from point annotations.
//!
//! Each head location contributes a truncated, per-head-renormalized 2-D
//! Gaussian, so the map's pixel sum equals the head count — including heads
//! near image borders, whose kernels would otherwise lose mass to the
//! outside. Per-scale training targets are built by sum-pooling the
//! full-resolution map, which keeps the count identical across the pyramid.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// A 2-D grid of per-pixel crowd density. `scale_divisor` records the
/// resolution relative to the source image (1 = full resolution).
///
/// Rasterized targets are non-negative by construction; maps produced by the
/// network may carry small negative values.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    pub height: usize,
    pub width: usize,
    pub scale_divisor: u32,
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize, scale_divisor: u32) -> Self {
        DensityMap { height, width, scale_divisor, values: vec![0.0; height * width] }
    }

    /// Pixel sum — the count of people in the covered region.
    pub fn count(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Crop a window (full-resolution maps only make sense here, but the
    /// operation is defined for any scale).
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<DensityMap> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{y0}+{x0} exceeds map {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(height * width);
        for y in y0..y0 + height {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(DensityMap { height, width, scale_divisor: self.scale_divisor, values })
    }
}

/// Isotropic Gaussian kernel parameters for rasterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSpec {
    /// Standard deviation in full-resolution pixels.
    pub sigma: f64,
    /// Half-width of the square support window; at least 3 sigma.
    pub truncation_radius: f64,
}

impl GaussianSpec {
    pub fn with_sigma(sigma: f64) -> Result<Self> {
        Self::new(sigma, 4.0 * sigma)
    }

    pub fn new(sigma: f64, truncation_radius: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Usage(format!("sigma must be positive, got {sigma}")));
        }
        if truncation_radius < 3.0 * sigma {
            return Err(Error::Usage(format!(
                "truncation_radius {truncation_radius} must be at least 3*sigma ({})",
                3.0 * sigma
            )));
        }
        Ok(GaussianSpec { sigma, truncation_radius })
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec { sigma: 4.0, truncation_radius: 16.0 }
    }
}

/// Rasterize head points into a full-resolution density map.
///
/// Pixel centers sit at integer-plus-half coordinates. Each head's kernel is
/// evaluated on its truncated window intersected with the image and then
/// renormalized so the in-image mass is exactly 1.
pub fn rasterize(heads: &[(f64, f64)], image_size: (usize, usize), spec: &GaussianSpec) -> Result<DensityMap> {
    let (width, height) = image_size;
    if width == 0 || height == 0 {
        return Err(Error::Usage("rasterize: empty image".into()));
    }
    for (i, &(x, y)) in heads.iter().enumerate() {
        if !(0.0..width as f64).contains(&x) || !(0.0..height as f64).contains(&y) {
            return Err(Error::Validation(vec![(
                format!("head[{i}]"),
                format!("head ({x}, {y}) outside image {width}x{height}"),
            )]));
        }
    }
    let mut map = DensityMap::zeros(height, width, 1);
    let inv_two_sigma_sq = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let r = spec.truncation_radius;
    for &(hx, hy) in heads {
        // Pixels whose center (i+0.5, j+0.5) lies within the support window.
        let x_lo = ((hx - r - 0.5).ceil().max(0.0)) as usize;
        let x_hi = ((hx + r - 0.5).floor().min(width as f64 - 1.0)) as usize;
        let y_lo = ((hy - r - 0.5).ceil().max(0.0)) as usize;
        let y_hi = ((hy + r - 0.5).floor().min(height as f64 - 1.0)) as usize;
        let mut mass = 0.0;
        for py in y_lo..=y_hi {
            let dy = (py as f64 + 0.5) - hy;
            for px in x_lo..=x_hi {
                let dx = (px as f64 + 0.5) - hx;
                mass += (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();
            }
        }
        debug_assert!(mass > 0.0, "support window always contains the head's own pixel");
        let norm = 1.0 / mass;
        for py in y_lo..=y_hi {
            let dy = (py as f64 + 0.5) - hy;
            for px in x_lo..=x_hi {
                let dx = (px as f64 + 0.5) - hx;
                map.values[py * width + px] += (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp() * norm;
            }
        }
    }
    Ok(map)
}

/// Sum non-overlapping `factor`x`factor` blocks; the pixel sum is preserved
/// exactly and the scale divisor multiplies by `factor`.
pub fn sum_pool(map: &DensityMap, factor: usize) -> Result<DensityMap> {
    if factor == 0 {
        return Err(Error::Usage("sum_pool: factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(map.clone());
    }
    if map.height % factor != 0 || map.width % factor != 0 {
        return Err(Error::Shape(format!(
            "sum_pool: {}x{} not divisible by {factor}",
            map.height, map.width
        )));
    }
    let (oh, ow) = (map.height / factor, map.width / factor);
    let mut out = DensityMap::zeros(oh, ow, map.scale_divisor * factor as u32);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += map.values[(oy * factor + dy) * map.width + ox * factor + dx];
                }
            }
            out.values[oy * ow + ox] = acc;
        }
    }
    Ok(out)
}

/// Supervision targets at 1/4, 1/8, 1/16, and 1/32 of full resolution, all
/// integrating to the same count.
#[derive(Clone, Debug)]
pub struct TargetPyramid {
    pub d4: DensityMap,
    pub d8: DensityMap,
    pub d16: DensityMap,
    pub d32: DensityMap,
}

pub fn target_pyramid(full: &DensityMap) -> Result<TargetPyramid> {
    if full.height % 32 != 0 || full.width % 32 != 0 {
        return Err(Error::Shape(format!(
            "target_pyramid: extents {}x{} must be multiples of 32",
            full.height, full.width
        )));
    }
    let d4 = sum_pool(full, 4)?;
    let d8 = sum_pool(&d4, 2)?;
    let d16 = sum_pool(&d8, 2)?;
    let d32 = sum_pool(&d16, 2)?;
    Ok(TargetPyramid { d4, d8, d16, d32 })
}

// ── Serialization ────────────────────────────────────────────────────────
//
// Binary layout: 16-byte header (magic "DMAP", u32 height, u32 width,
// u32 scale_divisor, little-endian) followed by row-major f32 LE values.

const DMAP_MAGIC: &[u8; 4] = b"DMAP";

pub fn write_dmap(map: &DensityMap, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * map.values.len());
    buf.extend_from_slice(DMAP_MAGIC);
    buf.extend_from_slice(&(map.height as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width as u32).to_le_bytes());
    buf.extend_from_slice(&map.scale_divisor.to_le_bytes());
    for &v in &map.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_dmap(path: &Path) -> Result<DensityMap> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 16 || &bytes[0..4] != DMAP_MAGIC {
        return Err(Error::Parse(format!("{}: not a DMAP file", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let height = u32_at(4) as usize;
    let width = u32_at(8) as usize;
    let scale_divisor = u32_at(12);
    let expected = 16 + 4 * height * width;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "{}: expected {expected} bytes for {height}x{width}, got {}",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DensityMap { height, width, scale_divisor, values })
}

/// Max-normalized 8-bit grayscale rendering (PGM) for visualization.
pub fn write_pgm(map: &DensityMap, path: &Path) -> Result<()> {
    let peak = map.values.iter().cloned().fold(0.0f64, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let mut buf = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    buf.extend(map.values.iter().map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8));
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_head_set_gives_zero_map() {
        let map = rasterize(&[], (32, 16), &GaussianSpec::default()).unwrap();
        assert_eq!(map.count(), 0.0);
        assert_eq!((map.height, map.width), (16, 32));
    }

    #[test]
    fn centered_head_has_unit_mass_and_reflection_symmetry() {
        let map = rasterize(&[(32.0, 32.0)], (64, 64), &GaussianSpec::with_sigma(4.0).unwrap()).unwrap();
        assert!((map.count() - 1.0).abs() < 1e-6);
        for y in 0..64 {
            for x in 0..64 {
                let v = map.get(y, x);
                assert_eq!(v, map.get(y, 63 - x), "x reflection at ({x},{y})");
                assert_eq!(v, map.get(63 - y, x), "y reflection at ({x},{y})");
            }
        }
    }

    #[test]
    fn corner_head_keeps_unit_mass_despite_truncation() {
        // Oracle: brute-force kernel evaluation over the whole image plus
        // renormalization over the in-image window is exactly what rasterize
        // promises; verify the promise on the hardest case.
        let spec = GaussianSpec::with_sigma(4.0).unwrap();
        let map = rasterize(&[(0.0, 0.0)], (64, 64), &spec).unwrap();
        assert!((map.count() - 1.0).abs() < 1e-6, "count {}", map.count());

        let inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
        let mut oracle = vec![0.0f64; 64 * 64];
        let mut mass = 0.0;
        for y in 0..64 {
            for x in 0..64 {
                let (dx, dy) = (x as f64 + 0.5, y as f64 + 0.5);
                if dx.abs() <= spec.truncation_radius + 0.0 && dy.abs() <= spec.truncation_radius {
                    let g = (-(dx * dx + dy * dy) * inv).exp();
                    oracle[y * 64 + x] = g;
                    mass += g;
                }
            }
        }
        for v in &mut oracle {
            *v /= mass;
        }
        for i in 0..oracle.len() {
            assert!((map.values[i] - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn head_outside_image_is_rejected_with_index() {
        let err = rasterize(&[(1.0, 1.0), (32.0, 5.0)], (32, 32), &GaussianSpec::default()).unwrap_err();
        match err {
            Error::Validation(v) => assert_eq!(v[0].0, "head[1]"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mass_conservation_over_random_head_sets_with_border_heads() {
        let mut s = 7u64;
        let mut uni = move || {
            s = crate::seed::splitmix64(s);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..20 {
            let n = 1 + (trial % 7);
            let heads: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    if i % 3 == 0 {
                        // Hug a border.
                        (uni() * 0.5, uni() * 63.9)
                    } else {
                        (uni() * 63.9, uni() * 63.9)
                    }
                })
                .collect();
            let map = rasterize(&heads, (64, 64), &GaussianSpec::default()).unwrap();
            let n = n as f64;
            assert!((map.count() - n).abs() <= 1e-4 * n + 1e-6, "count {} for {} heads", map.count(), n);
        }
    }

    #[test]
    fn interior_translation_covariance_is_exact() {
        let spec = GaussianSpec::with_sigma(2.0).unwrap();
        let a = rasterize(&[(24.0, 26.0)], (64, 64), &spec).unwrap();
        let b = rasterize(&[(29.0, 23.0)], (64, 64), &spec).unwrap();
        // b is a shifted by (+5, -3); compare on the overlapping region.
        for y in 0..61 {
            for x in 0..59 {
                assert_eq!(a.get(y + 3, x), b.get(y, x + 5), "at ({x},{y})");
            }
        }
    }

    #[test]
    fn superposition_of_interior_head_sets() {
        let spec = GaussianSpec::with_sigma(3.0).unwrap();
        let s1 = [(20.0, 20.0), (40.0, 25.0)];
        let s2 = [(30.0, 40.0)];
        let all: Vec<_> = s1.iter().chain(s2.iter()).cloned().collect();
        let m_all = rasterize(&all, (64, 64), &spec).unwrap();
        let m1 = rasterize(&s1, (64, 64), &spec).unwrap();
        let m2 = rasterize(&s2, (64, 64), &spec).unwrap();
        for i in 0..m_all.values.len() {
            assert!((m_all.values[i] - (m1.values[i] + m2.values[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn sum_pool_preserves_mass_and_handles_identity() {
        let mut map = DensityMap::zeros(4, 4, 1);
        map.values = vec![1.0; 16];
        let pooled = sum_pool(&map, 2).unwrap();
        assert_eq!(pooled.values, vec![4.0; 4]);
        assert_eq!(pooled.count(), 16.0);
        assert_eq!(pooled.scale_divisor, 2);

        let same = sum_pool(&map, 1).unwrap();
        assert_eq!(same, map);

        let mut s = 11u64;
        let mut rand_map = DensityMap::zeros(32, 32, 1);
        for v in &mut rand_map.values {
            s = crate::seed::splitmix64(s);
            *v = (s >> 11) as f64 / (1u64 << 53) as f64;
        }
        let p8 = sum_pool(&rand_map, 8).unwrap();
        assert!((p8.count() - rand_map.count()).abs() / rand_map.count() <= 1e-6);

        let odd = DensityMap::zeros(6, 6, 1);
        assert!(matches!(sum_pool(&odd, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn count_basics() {
        assert_eq!(DensityMap::zeros(8, 8, 1).count(), 0.0);
        let heads: Vec<(f64, f64)> = (0..7).map(|i| (8.0 + 6.0 * i as f64, 30.0)).collect();
        let map = rasterize(&heads, (64, 64), &GaussianSpec::default()).unwrap();
        assert!((map.count() - 7.0).abs() < 1e-3);
        let pooled = sum_pool(&map, 4).unwrap();
        assert!((pooled.count() - map.count()).abs() < 1e-9);
    }

    #[test]
    fn pyramid_levels_have_expected_shapes_and_equal_counts() {
        let heads: Vec<(f64, f64)> = (0..12).map(|i| (10.0 + 16.0 * (i % 12) as f64, 13.0 + 15.0 * (i / 4) as f64)).collect();
        let full = rasterize(&heads, (224, 224), &GaussianSpec::default()).unwrap();
        let pyr = target_pyramid(&full).unwrap();
        assert_eq!((pyr.d4.height, pyr.d4.width), (56, 56));
        assert_eq!((pyr.d8.height, pyr.d8.width), (28, 28));
        assert_eq!((pyr.d16.height, pyr.d16.width), (14, 14));
        assert_eq!((pyr.d32.height, pyr.d32.width), (7, 7));
        assert_eq!(pyr.d32.scale_divisor, 32);
        let c = full.count();
        for level in [&pyr.d4, &pyr.d8, &pyr.d16, &pyr.d32] {
            assert!((level.count() - c).abs() / c.max(1.0) <= 1e-6);
        }

        let zero = DensityMap::zeros(64, 64, 1);
        let zpyr = target_pyramid(&zero).unwrap();
        assert_eq!(zpyr.d32.count(), 0.0);

        let odd = DensityMap::zeros(50, 64, 1);
        assert!(matches!(target_pyramid(&odd), Err(Error::Shape(_))));
    }

    #[test]
    fn dmap_roundtrip_preserves_f32_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dmap");
        let map = rasterize(&[(5.0, 9.0), (20.5, 14.25)], (32, 24), &GaussianSpec::default()).unwrap();
        write_dmap(&map, &path).unwrap();
        let back = read_dmap(&path).unwrap();
        assert_eq!((back.height, back.width, back.scale_divisor), (24, 32, 1));
        for (a, b) in map.values.iter().zip(back.values.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }

        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(read_dmap(&path), Err(Error::Parse(_))));
    }
}
