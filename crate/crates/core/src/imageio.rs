//! 8-bit grayscale image files: binary PGM (P5) and PNG.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, ImageErrorKind, Result};
use crate::raster::Image;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

fn image_err<T>(path: &Path, kind: ImageErrorKind) -> Result<T> {
    Err(Error::Image {
        path: path.to_path_buf(),
        kind,
    })
}

/// Reads a P5 PGM or PNG into `[0, 1]`. Colour PNGs are reduced to
/// luminance `0.299 R + 0.587 G + 0.114 B`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_image(&bytes).or_else(|kind| image_err(path, kind))
}

pub fn decode_image(bytes: &[u8]) -> std::result::Result<Image, ImageErrorKind> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
        Err(ImageErrorKind::Unsupported("only binary grayscale PGM (P5) is read".into()))
    } else {
        Err(ImageErrorKind::Unsupported("neither PGM nor PNG signature".into()))
    }
}

/// Splits the PGM header into its four fields and returns the payload offset.
fn pgm_header(bytes: &[u8]) -> std::result::Result<([usize; 3], usize), ImageErrorKind> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageErrorKind::BadHeader(format!("missing {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[i] = text
            .parse()
            .map_err(|_| ImageErrorKind::BadHeader(format!("{name} `{text}` out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((fields, pos + 1)),
        _ => Err(ImageErrorKind::BadHeader("no whitespace after maxval".into())),
    }
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, ImageErrorKind> {
    let ([width, height, maxval], offset) = pgm_header(bytes)?;
    if width == 0 || height == 0 {
        return Err(ImageErrorKind::BadHeader(format!("empty extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageErrorKind::Unsupported(format!("maxval {maxval} (8-bit only)")));
    }
    let expected = width * height;
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(ImageErrorKind::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let scale = maxval as f64;
    let data = payload[..expected].iter().map(|&b| b as f64 / scale).collect();
    Ok(Image::new(height, width, data).expect("extent checked"))
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image, ImageErrorKind> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageErrorKind::Png(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageRgb8(rgb) => rgb.pixels().map(|p| luminance(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(rgba) => rgba.pixels().map(|p| luminance(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(ImageErrorKind::Unsupported(format!(
                "PNG colour type {:?} (8-bit gray or RGB only)",
                other.color()
            )))
        }
    };
    Ok(Image::new(h, w, data).expect("decoder extent"))
}

fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Clips to `[0, 1]` and rounds half away from zero onto `0..=255`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PGM or PNG, chosen by extension.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    write_gray(&bytes, img.width(), img.height(), path)
}

/// Writes raw 8-bit gray samples, format chosen by extension.
pub fn write_gray(bytes: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let encoded = match ext.as_deref() {
        Some("pgm") => {
            let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
            out.extend_from_slice(bytes);
            out
        }
        Some("png") => {
            let mut buf = Cursor::new(Vec::new());
            PngEncoder::new(&mut buf)
                .write_image(bytes, width as u32, height as u32, ExtendedColorType::L8)
                .or_else(|e| image_err(path, ImageErrorKind::Png(e.to_string())))?;
            buf.into_inner()
        }
        _ => return image_err(path, ImageErrorKind::Unsupported("extension must be .pgm or .png".into())),
    };
    fs::write(path, encoded)?;
    Ok(())
}

/// `.pgm` and `.png` files directly inside `dir`, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Every image in `dir` with its file stem.
pub fn read_dir_images(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let dir = dir.as_ref();
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::NoImages(dir.to_path_buf()));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_image(&p)?))
        })
        .collect()
}
