//! PNG import/export for masks, sketches and normalized scalar previews.
//!
//! Grids are stored with `j = 0` at the bottom; images have row 0 at the
//! top, so every conversion flips rows.

use std::io::{BufWriter, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType};

use super::{FieldError, GridSpec, MaskField, ScalarField};

/// Gray image with row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn png_err(e: impl std::fmt::Display) -> FieldError {
    FieldError::Format(format!("png: {e}"))
}

pub fn encode_gray8(img: &GrayImage) -> Result<Vec<u8>, FieldError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(ColorType::Grayscale);
        enc.set_depth(BitDepth::Eight);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&img.pixels).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// 1-bit grayscale; a pixel is white (1) when its byte is >= 128.
pub fn encode_gray1(img: &GrayImage) -> Result<Vec<u8>, FieldError> {
    let stride = img.width.div_ceil(8);
    let mut packed = vec![0u8; stride * img.height];
    for r in 0..img.height {
        for c in 0..img.width {
            if img.pixels[r * img.width + c] >= 128 {
                packed[r * stride + c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(ColorType::Grayscale);
        enc.set_depth(BitDepth::One);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&packed).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Decodes any PNG to 8-bit gray (color images are averaged, alpha dropped).
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage, FieldError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(png_err("unexpanded palette")),
    };
    let mut pixels = Vec::with_capacity(w * h);
    for r in 0..h {
        let row = &buf[r * info.line_size..r * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            let g = match channels {
                1 | 2 => px[0],
                _ => ((px[0] as u16 + px[1] as u16 + px[2] as u16) / 3) as u8,
            };
            pixels.push(g);
        }
    }
    Ok(GrayImage { width: w, height: h, pixels })
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage, FieldError> {
    decode_gray(&std::fs::read(path)?)
}

fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), FieldError> {
    use std::io::Write;
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn mask_to_image(mask: &MaskField, on: u8, off: u8) -> GrayImage {
    let s = mask.spec();
    let mut pixels = Vec::with_capacity(s.cells());
    for r in 0..s.ny {
        let j = s.ny - 1 - r;
        for i in 0..s.nx {
            pixels.push(if mask.get(i, j) { on } else { off });
        }
    }
    GrayImage { width: s.nx, height: s.ny, pixels }
}

fn image_to_mask(img: &GrayImage, spec: Option<GridSpec>, on_is_dark: bool) -> Result<MaskField, FieldError> {
    let spec = match spec {
        Some(s) => {
            if s.nx != img.width || s.ny != img.height {
                return Err(FieldError::DimensionMismatch { expected: (s.nx, s.ny), found: (img.width, img.height) });
            }
            s
        }
        None => GridSpec::new(img.width, img.height, 1.0)?,
    };
    Ok(MaskField::from_fn(spec, |i, j| {
        let p = img.pixels[(spec.ny - 1 - j) * spec.nx + i];
        if on_is_dark {
            p < 128
        } else {
            p >= 128
        }
    }))
}

/// Mask as 8-bit PNG, 255 inside and 0 outside.
pub fn encode_mask_png(mask: &MaskField) -> Result<Vec<u8>, FieldError> {
    encode_gray8(&mask_to_image(mask, 255, 0))
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &MaskField) -> Result<(), FieldError> {
    write_bytes(path, &encode_mask_png(mask)?)
}

/// Mask as 1-bit PNG, white inside.
pub fn write_mask_png_1bit(path: impl AsRef<Path>, mask: &MaskField) -> Result<(), FieldError> {
    write_bytes(path, &encode_gray1(&mask_to_image(mask, 255, 0))?)
}

/// Reads a white-on-black mask of any bit depth. With `spec` given the image
/// dimensions must match it.
pub fn read_mask_png(path: impl AsRef<Path>, spec: Option<GridSpec>) -> Result<MaskField, FieldError> {
    image_to_mask(&read_gray(path)?, spec, false)
}

/// Stroke raster as 1-bit PNG, black strokes on white.
pub fn encode_sketch_png(strokes: &MaskField) -> Result<Vec<u8>, FieldError> {
    encode_gray1(&mask_to_image(strokes, 0, 255))
}

pub fn write_sketch_png(path: impl AsRef<Path>, strokes: &MaskField) -> Result<(), FieldError> {
    write_bytes(path, &encode_sketch_png(strokes)?)
}

pub fn read_sketch_png(path: impl AsRef<Path>, spec: Option<GridSpec>) -> Result<MaskField, FieldError> {
    image_to_mask(&read_gray(path)?, spec, true)
}

/// Min-max normalized 8-bit preview. Returns the encoded PNG and the
/// `(min, max)` used for the mapping.
pub fn encode_scalar_png(field: &ScalarField) -> Result<(Vec<u8>, f64, f64), FieldError> {
    let s = field.spec();
    let (lo, hi) = (field.min(), field.max());
    let span = hi - lo;
    let mut pixels = Vec::with_capacity(s.cells());
    for r in 0..s.ny {
        let j = s.ny - 1 - r;
        for i in 0..s.nx {
            let t = if span > 0.0 { (field.get(i, j) - lo) / span } else { 0.0 };
            pixels.push((t * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok((encode_gray8(&GrayImage { width: s.nx, height: s.ny, pixels })?, lo, hi))
}

pub fn write_scalar_png(path: impl AsRef<Path>, field: &ScalarField) -> Result<(f64, f64), FieldError> {
    let (bytes, lo, hi) = encode_scalar_png(field)?;
    write_bytes(path, &bytes)?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(spec: GridSpec) -> MaskField {
        MaskField::from_fn(spec, |i, j| (i * 3 + j * 7) % 5 == 0 || j == 0)
    }

    #[test]
    fn mask_png_round_trips_both_depths() {
        let spec = GridSpec::new(13, 9, 1.0).unwrap();
        let m = checker(spec);
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("m8.png");
        let p1 = dir.path().join("m1.png");
        write_mask_png(&p8, &m).unwrap();
        write_mask_png_1bit(&p1, &m).unwrap();
        assert_eq!(read_mask_png(&p8, Some(spec)).unwrap(), m);
        assert_eq!(read_mask_png(&p1, Some(spec)).unwrap(), m);
    }

    #[test]
    fn sketch_png_is_black_on_white_and_bottom_row_last() {
        let spec = GridSpec::new(8, 4, 1.0).unwrap();
        let m = MaskField::from_fn(spec, |_, j| j == 0);
        let img = decode_gray(&encode_sketch_png(&m).unwrap()).unwrap();
        assert!(img.pixels[..8 * 3].iter().all(|p| *p == 255));
        assert!(img.pixels[8 * 3..].iter().all(|p| *p == 0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        write_sketch_png(&p, &m).unwrap();
        assert_eq!(read_sketch_png(&p, Some(spec)).unwrap(), m);
    }

    #[test]
    fn wrong_dimensions_are_rejected() {
        let spec = GridSpec::new(8, 8, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        write_mask_png(&p, &MaskField::empty(spec)).unwrap();
        assert!(read_mask_png(&p, Some(GridSpec::new(8, 9, 1.0).unwrap())).is_err());
    }
}
