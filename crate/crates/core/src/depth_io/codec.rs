//! PNG codecs for depth maps (16-bit grayscale, value / 256 = meters,
//! 0 = no measurement) and 8-bit RGB color images.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType};

use crate::depth_io::{ColorImage, DepthMap};
use crate::error::{Error, Result};

/// Stored units per meter.
pub const DEPTH_SCALE: f64 = 256.0;
/// Largest depth a 16-bit PNG can hold: 65535 / 256 m.
pub const PNG_MAX_DEPTH_M: f64 = 65535.0 / DEPTH_SCALE;

/// Rounds a depth to the nearest multiple of 1/256 m, the codec's resolution.
/// Valid depths never quantize to the invalid sentinel.
pub fn quantize_depth(value: f64) -> Result<u16> {
    if value == 0.0 {
        return Ok(0);
    }
    if !value.is_finite() || value < 0.0 {
        return Err(Error::Range(format!("depth {value} not storable")));
    }
    let stored = (value * DEPTH_SCALE).round();
    if stored > 65535.0 {
        return Err(Error::Range(format!(
            "depth {value} m exceeds the 16-bit maximum of {PNG_MAX_DEPTH_M} m"
        )));
    }
    Ok((stored as u16).max(1))
}

pub fn encode_depth_png(map: &DepthMap) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(map.len() * 2);
    for &v in map.values() {
        raw.extend_from_slice(&quantize_depth(v)?.to_be_bytes());
    }
    write_png(
        map.width(),
        map.height(),
        ColorType::Grayscale,
        BitDepth::Sixteen,
        &raw,
    )
}

pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthMap> {
    let (info, buf) = read_png(bytes)?;
    if info.color_type != ColorType::Grayscale {
        return Err(Error::Decode(format!(
            "depth PNG must be single-channel grayscale, found {:?}",
            info.color_type
        )));
    }
    if info.bit_depth != BitDepth::Sixteen {
        return Err(Error::Decode(format!(
            "depth PNG must be 16-bit, found {:?}",
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + 2 * w];
        values.extend(
            row.chunks_exact(2)
                .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / DEPTH_SCALE),
        );
    }
    Ok(DepthMap::from_raw(h, w, values, PNG_MAX_DEPTH_M))
}

pub fn encode_color_png(image: &ColorImage) -> Result<Vec<u8>> {
    let (h, w) = image.dims();
    let mut raw = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw.push((image.get(c, y, x) * 255.0).round() as u8);
            }
        }
    }
    write_png(w, h, ColorType::Rgb, BitDepth::Eight, &raw)
}

/// Decodes an 8-bit PNG into `[0, 1]` RGB. Grayscale is replicated and alpha
/// is dropped.
pub fn decode_color_png(bytes: &[u8]) -> Result<ColorImage> {
    let (info, buf) = read_png(bytes)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::Decode(format!(
            "color PNG must be 8-bit, found {:?}",
            info.bit_depth
        )));
    }
    let samples = match info.color_type {
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(Error::Decode(format!(
                "unsupported color PNG type {other:?}"
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = vec![0.0; 3 * w * h];
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let px = &row[x * samples..(x + 1) * samples];
            for c in 0..3 {
                let s = if samples >= 3 { px[c] } else { px[0] };
                data[(c * h + y) * w + x] = f64::from(s) / 255.0;
            }
        }
    }
    Ok(ColorImage::from_raw(h, w, data))
}

pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth_png(&bytes).map_err(|e| annotate(e, path))
}

pub fn write_depth_png(path: impl AsRef<Path>, map: &DepthMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_depth_png(map)?).map_err(|e| Error::io(path, e))
}

pub fn read_color_png(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_color_png(&bytes).map_err(|e| annotate(e, path))
}

pub fn write_color_png(path: impl AsRef<Path>, image: &ColorImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_color_png(image)?).map_err(|e| Error::io(path, e))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Decode(msg) => Error::Decode(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn write_png(
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    raw: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    writer
        .write_image_data(raw)
        .map_err(|e| Error::Format(format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::Format(format!("png finish: {e}")))?;
    Ok(out)
}

fn read_png(bytes: &[u8]) -> Result<(png::OutputInfo, Vec<u8>)> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(format!("malformed PNG: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Decode("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(format!("malformed PNG: {e}")))?;
    Ok((info, buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stored(bytes: &[u8]) -> Vec<u16> {
        let (_, buf) = read_png(bytes).unwrap();
        buf.chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    }

    #[test]
    fn unit_and_sentinel_values() {
        let m = DepthMap::new(1, 3, vec![1.0, 0.0, 0.5]).unwrap();
        let bytes = encode_depth_png(&m).unwrap();
        assert_eq!(stored(&bytes), vec![256, 0, 128]);
        let back = decode_depth_png(&bytes).unwrap();
        assert_eq!(back.values(), &[1.0, 0.0, 0.5]);
        assert_eq!(back.valid_mask(), vec![true, false, true]);
    }

    #[test]
    fn all_invalid_encodes_to_zero_payload() {
        let bytes = encode_depth_png(&DepthMap::invalid(4, 5)).unwrap();
        assert!(stored(&bytes).iter().all(|&s| s == 0));
    }

    #[test]
    fn sixteen_bit_boundary() {
        assert_eq!(quantize_depth(255.99609375).unwrap(), 65535);
        assert!(matches!(quantize_depth(256.0), Err(Error::Range(_))));
        let m = DepthMap::with_max_range(1, 1, vec![256.0], 300.0).unwrap();
        assert!(matches!(encode_depth_png(&m), Err(Error::Range(_))));
    }

    #[test]
    fn tiny_valid_depth_stays_valid() {
        assert_eq!(quantize_depth(1e-4).unwrap(), 1);
    }

    #[test]
    fn rejects_wrong_bit_depth_channels_and_garbage() {
        let color = encode_color_png(&ColorImage::black(2, 2)).unwrap();
        let err = decode_depth_png(&color).unwrap_err();
        assert!(err.to_string().contains("single-channel"), "{err}");

        let gray8 = write_png(2, 2, ColorType::Grayscale, BitDepth::Eight, &[0; 4]).unwrap();
        let err = decode_depth_png(&gray8).unwrap_err();
        assert!(err.to_string().contains("16-bit"), "{err}");

        let err = decode_depth_png(b"not a png").unwrap_err();
        assert!(err.to_string().contains("malformed"), "{err}");
    }

    #[test]
    fn color_round_trip_is_exact_on_8bit_grid() {
        let data: Vec<f64> = (0..3 * 2 * 3)
            .map(|i| f64::from(i * 13 % 256) / 255.0)
            .collect();
        let img = ColorImage::new(2, 3, data).unwrap();
        let back = decode_color_png(&encode_color_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }
}
