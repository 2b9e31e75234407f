//! Image, depth-map and mask files.
//!
//! Depth maps are written either as little-endian PFM (lossless at `f32`)
//! or as 16-bit grayscale PNG plus a `{ "min", "max" }` JSON sidecar that
//! records the dequantization range.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{DepthMap, ImageTensor, TextMask};
use crate::error::{Error, Result};

/// A depth map read from disk and how many stored values had to be raised
/// to the positivity floor.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedDepth {
    pub map: DepthMap,
    pub clamped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Path of the dequantization sidecar of a 16-bit depth PNG.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

pub fn load_depth(path: &Path) -> Result<LoadedDepth> {
    let (h, w, values) = match extension(path).as_str() {
        "pfm" => read_pfm(path)?,
        "png" => read_depth_png(path)?,
        other => return Err(Error::format(path, format!("unsupported depth format `{other}`"))),
    };
    let (map, clamped) = DepthMap::floored(h, w, values)?;
    if clamped > 0 {
        log::warn!("{}: raised {clamped} depth values to the positivity floor", path.display());
    }
    Ok(LoadedDepth { map, clamped })
}

/// Writes PFM for `.pfm` paths; for `.png` paths writes 16 bits over the
/// map's own value range.
pub fn save_depth(map: &DepthMap, path: &Path) -> Result<()> {
    match extension(path).as_str() {
        "pfm" => {
            let values: Vec<f32> = map.data().iter().map(|&v| v as f32).collect();
            write_pfm(path, map.width(), map.height(), &values)
        }
        "png" => save_depth_png(
            map,
            path,
            DepthRange {
                min: map.min(),
                max: map.max(),
            },
        ),
        other => Err(Error::format(path, format!("unsupported depth format `{other}`"))),
    }
}

/// Quantizes `map` over `range` into a 16-bit PNG and writes the sidecar.
pub fn save_depth_png(map: &DepthMap, path: &Path, range: DepthRange) -> Result<()> {
    if !(range.max >= range.min) || !range.min.is_finite() || !range.max.is_finite() {
        return Err(Error::Domain(format!("bad depth range {range:?}")));
    }
    let span = range.max - range.min;
    let pixels: Vec<u16> = map
        .data()
        .iter()
        .map(|&v| {
            if span == 0.0 {
                0
            } else {
                (((v - range.min) / span).clamp(0.0, 1.0) * 65535.0).round() as u16
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, pixels)
            .expect("buffer matches dimensions");
    img.save(path).map_err(|e| Error::format(path, e.to_string()))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string(&range).expect("plain struct serializes");
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}

fn read_depth_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let range: DepthRange =
        serde_json::from_str(&text).map_err(|e| Error::format(&sidecar, e.to_string()))?;
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let img = img.to_luma16();
    let span = range.max - range.min;
    let values = img
        .pixels()
        .map(|p| range.min + p.0[0] as f64 / 65535.0 * span)
        .collect();
    Ok((img.height() as usize, img.width() as usize, values))
}

/// Writes a grayscale little-endian PFM (scale `-1.0`), rows bottom-to-top.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!(
            "{width}x{height} PFM needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    let mut bytes = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    bytes.reserve(values.len() * 4);
    for row in values.chunks(width).rev() {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<fs::File>| -> Result<String> {
        line.clear();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    match next_line(&mut reader)?.as_str() {
        "Pf" => {}
        "PF" => return Err(Error::format(path, "colour PFM is not a depth map")),
        other => return Err(Error::format(path, format!("bad PFM magic `{other}`"))),
    }
    let dims = next_line(&mut reader)?;
    let parsed: Vec<usize> = dims
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| Error::format(path, format!("bad PFM dimensions `{dims}`")))?;
    let [width, height] = parsed[..] else {
        return Err(Error::format(path, format!("bad PFM dimensions `{dims}`")));
    };
    let scale: f64 = next_line(&mut reader)?
        .parse()
        .map_err(|_| Error::format(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() != width * height * 4 {
        return Err(Error::format(
            path,
            format!("expected {} data bytes, got {}", width * height * 4, raw.len()),
        ));
    }
    let mut rows: Vec<Vec<f64>> = raw
        .chunks(width * 4)
        .map(|row| {
            row.chunks(4)
                .map(|b| {
                    let b = [b[0], b[1], b[2], b[3]];
                    (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
                })
                .collect()
        })
        .collect();
    rows.reverse();
    Ok((height, width, rows.concat()))
}

/// Loads PNG or JPEG as RGB in `[0, 1]`; grayscale is replicated.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    let sixteen_bit = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    if sixteen_bit {
        for (i, p) in img.to_rgb16().pixels().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = p.0[c] as f64 / 65535.0;
            }
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = p.0[c] as f64 / 255.0;
            }
        }
    }
    ImageTensor::new(h, w, data)
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (img.get(y as usize, x as usize, c) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    out.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Mask PNG: 8-bit, 0 or 255; anything above 127 reads as text.
pub fn load_mask(path: &Path) -> Result<TextMask> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let gray = img.to_luma8();
    let data = gray.pixels().map(|p| u8::from(p.0[0] > 127)).collect();
    TextMask::new(gray.height() as usize, gray.width() as usize, data)
}

pub fn save_mask(mask: &TextMask, path: &Path) -> Result<()> {
    let data = mask.data().iter().map(|&v| v * 255).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data)
        .expect("buffer matches dimensions");
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a whole file; `Error::Io` carries the path.
pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Writes through a temporary sibling and renames it into place, so a
/// concurrent reader never observes a partial file.
pub(crate) fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = extension(path);
    let tmp = path.with_file_name(format!(
        ".{name}.{}.tmp.{ext}",
        std::process::id()
    ));
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let map = DepthMap::filled(4, 4, 1.0).unwrap();
        save_depth(&map, &path).unwrap();
        let loaded = load_depth(&path).unwrap();
        assert_eq!(loaded.map, map);
        assert_eq!(loaded.clamped, 0);

        let vals: Vec<f64> = (1..=12).map(|i| i as f64 * 0.375).collect();
        let map = DepthMap::new(3, 4, vals).unwrap();
        save_depth(&map, &path).unwrap();
        assert_eq!(load_depth(&path).unwrap().map, map);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let map = DepthMap::new(2, 1, vec![1.0, 2.0]).unwrap();
        save_depth(&map, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"Pf\n1 2\n-1.0\n".len();
        assert_eq!(&bytes[header..header + 4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn png_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let map = DepthMap::filled(3, 5, 0.5).unwrap();
        save_depth_png(&map, &path, DepthRange { min: 0.0, max: 1.0 }).unwrap();
        assert!(sidecar_path(&path).exists());
        let loaded = load_depth(&path).unwrap();
        assert!(loaded.map.data().iter().all(|v| (v - 0.5).abs() <= 1.0 / 65535.0));
    }

    #[test]
    fn zero_depth_is_floored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pfm");
        write_pfm(&path, 2, 1, &[0.0, 3.0]).unwrap();
        let loaded = load_depth(&path).unwrap();
        assert_eq!(loaded.map.data(), &[crate::data::DEPTH_FLOOR, 3.0]);
        assert_eq!(loaded.clamped, 1);
    }

    #[test]
    fn image_scaling_and_gray_replication() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        GrayImage::from_raw(2, 1, vec![255, 0]).unwrap().save(&path).unwrap();
        let img = load_image(&path).unwrap();
        for c in 0..3 {
            assert_eq!(img.get(0, 0, c), 1.0);
            assert_eq!(img.get(0, 1, c), 0.0);
        }
    }

    #[test]
    fn unsupported_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        fs::write(&path, "hello").unwrap();
        assert!(load_image(&path).is_err());
        assert!(load_depth(&path).is_err());
        assert!(matches!(load_image(&dir.path().join("missing.png")), Err(_)));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = TextMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        save_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);
    }
}
