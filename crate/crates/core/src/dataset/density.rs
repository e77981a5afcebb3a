//! Gaussian density-map generation and the on-disk map cache.

use std::path::Path;

use ndarray::Array2;

use super::AnnotatedSample;
use crate::error::{Error, Result};
use crate::util::{read_file, write_file};

/// Magic bytes of the density-map cache format.
pub const CACHE_MAGIC: &[u8; 8] = b"CCDMAP01";

/// A non-negative grid of person densities. The grid covers the sample's
/// image at `1/downsample_factor` resolution and its total mass equals the
/// sample's head count (each head contributes exactly one unit of mass).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub values: Array2<f32>,
    pub downsample_factor: u32,
}

impl DensityMap {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// Total mass, accumulated in f64.
    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }
}

/// Renders the head annotations of `sample` into a density map.
///
/// Each head contributes a discretized Gaussian kernel with standard
/// deviation `sigma / downsample_factor` grid cells, truncated at radius
/// 4*sigma and renormalized over the in-bounds cells so the head's mass is
/// exactly 1.0 even at image borders. Image dimensions not divisible by the
/// factor are padded at the bottom/right (the padded cells stay empty).
pub fn generate_density_map(
    sample: &AnnotatedSample,
    sigma: f64,
    downsample_factor: u32,
) -> Result<DensityMap> {
    if !(sigma > 0.0) {
        return Err(Error::parameter("sigma", "must be > 0"));
    }
    if downsample_factor == 0 {
        return Err(Error::parameter("downsample_factor", "must be >= 1"));
    }
    let f = downsample_factor as usize;
    let grid_h = sample.height().div_ceil(f);
    let grid_w = sample.width().div_ceil(f);

    let sigma_cells = sigma / f as f64;
    let radius = 4.0 * sigma_cells;
    let mut grid = Array2::<f64>::zeros((grid_h, grid_w));

    for &(x, y) in &sample.heads {
        // Pixel-center mapping of the head into grid coordinates.
        let cx = (x + 0.5) / f as f64 - 0.5;
        let cy = (y + 0.5) / f as f64 - 0.5;

        let i_lo = ((cy - radius).floor().max(0.0)) as usize;
        let i_hi = ((cy + radius).ceil() as isize).min(grid_h as isize - 1).max(0) as usize;
        let j_lo = ((cx - radius).floor().max(0.0)) as usize;
        let j_hi = ((cx + radius).ceil() as isize).min(grid_w as isize - 1).max(0) as usize;

        let inv_two_sigma_sq = 1.0 / (2.0 * sigma_cells * sigma_cells);
        let radius_sq = radius * radius;

        let mut weights: Vec<(usize, usize, f64)> = Vec::new();
        let mut total = 0.0f64;
        for i in i_lo..=i_hi {
            for j in j_lo..=j_hi {
                let dy = i as f64 - cy;
                let dx = j as f64 - cx;
                let d_sq = dx * dx + dy * dy;
                if d_sq > radius_sq {
                    continue;
                }
                let w = (-d_sq * inv_two_sigma_sq).exp();
                weights.push((i, j, w));
                total += w;
            }
        }

        if total > 0.0 {
            for (i, j, w) in weights {
                grid[(i, j)] += w / total;
            }
        } else {
            // Degenerate truncation window (very small sigma near a border):
            // deposit the whole unit on the nearest in-bounds cell.
            let i = (cy.round().max(0.0) as usize).min(grid_h - 1);
            let j = (cx.round().max(0.0) as usize).min(grid_w - 1);
            grid[(i, j)] += 1.0;
        }
    }

    Ok(DensityMap {
        values: grid.mapv(|v| v as f32),
        downsample_factor,
    })
}

/// Writes a density map in the binary cache format: the magic bytes
/// `CCDMAP01`, grid height and width as u32 little-endian, then the cells
/// as f32 little-endian in row-major order.
pub fn write_density_cache(path: &Path, map: &DensityMap) -> Result<()> {
    let (h, w) = (map.height(), map.width());
    let mut bytes = Vec::with_capacity(16 + 4 * h * w);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for v in map.values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

/// Reads a density map written by [`write_density_cache`]. The downsample
/// factor is not part of the file; the caller supplies it.
pub fn read_density_cache(path: &Path, downsample_factor: u32) -> Result<DensityMap> {
    let bytes = read_file(path)?;
    let fail = |message: &str| Error::CacheFormat {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 16 {
        return Err(fail("file shorter than header"));
    }
    if &bytes[..8] != CACHE_MAGIC {
        return Err(fail("bad magic"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 4 * h * w;
    if bytes.len() != expected {
        return Err(fail(&format!(
            "expected {expected} bytes for {h}x{w} grid, found {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(h * w);
    for chunk in bytes[16..].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let values = Array2::from_shape_vec((h, w), values)
        .map_err(|e| fail(&format!("shape error: {e}")))?;
    Ok(DensityMap {
        values,
        downsample_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleSource;
    use ndarray::Array3;

    fn sample_with_heads(h: usize, w: usize, heads: Vec<(f64, f64)>) -> AnnotatedSample {
        AnnotatedSample {
            id: "t0".to_string(),
            image: Array3::zeros((3, h, w)),
            heads,
            source: SampleSource::Synthetic,
        }
    }

    #[test]
    fn single_centered_head_has_unit_mass() {
        let s = sample_with_heads(64, 64, vec![(32.0, 32.0)]);
        let map = generate_density_map(&s, 4.0, 1).unwrap();
        assert!((map.sum() - 1.0).abs() <= 1e-6, "sum = {}", map.sum());
        assert_eq!(map.downsample_factor, 1);
        assert_eq!((map.height(), map.width()), (64, 64));
    }

    #[test]
    fn no_heads_gives_zero_map() {
        let s = sample_with_heads(64, 64, vec![]);
        let map = generate_density_map(&s, 4.0, 1).unwrap();
        assert_eq!(map.sum(), 0.0);
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn five_heads_with_corner_conserve_mass_downsampled() {
        let heads = vec![(0.0, 0.0), (10.0, 50.0), (31.5, 31.5), (63.0, 2.0), (40.0, 40.0)];
        let s = sample_with_heads(64, 64, heads);
        let map = generate_density_map(&s, 4.0, 4).unwrap();
        assert_eq!((map.height(), map.width()), (16, 16));
        assert!((map.sum() - 5.0).abs() <= 1e-3, "sum = {}", map.sum());
    }

    #[test]
    fn mass_invariant_across_factors() {
        let heads = vec![(0.0, 0.0), (63.0, 63.0), (12.3, 45.6), (62.9, 0.1)];
        let s = sample_with_heads(64, 64, heads);
        for factor in [1u32, 2, 4, 8] {
            let map = generate_density_map(&s, 4.0, factor).unwrap();
            assert!(
                (map.sum() - 4.0).abs() <= 1e-3 * 4.0 + 1e-6,
                "factor {factor}: sum = {}",
                map.sum()
            );
            assert!(map.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn non_divisible_dims_are_padded() {
        let s = sample_with_heads(30, 45, vec![(44.0, 29.0)]);
        let map = generate_density_map(&s, 4.0, 4).unwrap();
        assert_eq!((map.height(), map.width()), (8, 12));
        assert!((map.sum() - 1.0).abs() <= 1e-3 + 1e-6);
    }

    #[test]
    fn rejects_bad_sigma() {
        let s = sample_with_heads(8, 8, vec![]);
        assert!(generate_density_map(&s, 0.0, 1).is_err());
        assert!(generate_density_map(&s, -1.0, 1).is_err());
    }

    #[test]
    fn tiny_sigma_still_conserves_mass_at_border() {
        let s = sample_with_heads(64, 64, vec![(0.0, 0.0), (63.0, 63.0)]);
        let map = generate_density_map(&s, 0.1, 8).unwrap();
        assert!((map.sum() - 2.0).abs() <= 1e-3 * 2.0 + 1e-6, "sum = {}", map.sum());
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let s = sample_with_heads(32, 48, vec![(1.0, 2.0), (40.0, 20.0)]);
        let map = generate_density_map(&s, 4.0, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("maps/t0.ccdmap");
        write_density_cache(&path, &map).unwrap();
        let back = read_density_cache(&path, 2).unwrap();
        assert_eq!(map, back);

        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..8], CACHE_MAGIC);
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(raw[12..16].try_into().unwrap()), 24);
    }

    #[test]
    fn cache_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ccdmap");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(read_density_cache(&path, 1).is_err());
    }
}
