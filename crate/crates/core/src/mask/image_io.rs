//! Single-channel PNG codec for masks.
//!
//! Reads accept grayscale or indexed PNGs at any bit depth (plus RGB(A) as a
//! fallback); a pixel is foreground when any non-alpha sample is nonzero.
//! Writes are always 8-bit grayscale with values 0 and 255.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{BinaryMask, MaskError};

pub fn encode_png(mask: &BinaryMask) -> Result<Vec<u8>, MaskError> {
    let mut out = Vec::new();
    write_png_to(&mut out, mask)?;
    Ok(out)
}

fn write_png_to<W: Write>(w: W, mask: &BinaryMask) -> Result<(), MaskError> {
    let mut encoder = png::Encoder::new(w, mask.width() as u32, mask.height() as u32);
    encoder.set_color(ColorType::Grayscale);
    encoder.set_depth(BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    let data: Vec<u8> = mask.to_bytes().into_iter().map(|b| b * 255).collect();
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}

pub fn decode_png(bytes: &[u8]) -> Result<BinaryMask, MaskError> {
    decode_from(Cursor::new(bytes))
}

fn decode_from<R: std::io::BufRead + std::io::Seek>(r: R) -> Result<BinaryMask, MaskError> {
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader.output_buffer_size().ok_or(png::DecodingError::LimitsExceeded)?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let (width, height) = (info.width as usize, info.height as usize);

    let (samples, alpha) = match info.color_type {
        ColorType::Grayscale | ColorType::Indexed => (1, None),
        ColorType::GrayscaleAlpha => (2, Some(1)),
        ColorType::Rgb => (3, None),
        ColorType::Rgba => (4, Some(3)),
    };
    let depth = info.bit_depth as usize;
    let mut bytes = vec![0u8; width * height];
    for y in 0..height {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..width {
            let fg = (0..samples)
                .filter(|&c| Some(c) != alpha)
                .any(|c| sample(row, (x * samples + c) * depth, depth) != 0);
            bytes[y * width + x] = u8::from(fg);
        }
    }
    BinaryMask::from_bytes(height, width, &bytes)
}

fn sample(row: &[u8], bit_offset: usize, depth: usize) -> u16 {
    match depth {
        16 => u16::from_be_bytes([row[bit_offset / 8], row[bit_offset / 8 + 1]]),
        8 => row[bit_offset / 8] as u16,
        _ => {
            let byte = row[bit_offset / 8];
            let shift = 8 - depth - bit_offset % 8;
            ((byte >> shift) & ((1u8 << depth) - 1)) as u16
        }
    }
}

pub fn read_png(path: impl AsRef<Path>) -> Result<BinaryMask, MaskError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_from(BufReader::new(file)).map_err(|e| e.at_path(path))
}

pub fn write_png(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<(), MaskError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    write_png_to(&mut w, mask).map_err(|e| e.at_path(path))?;
    w.flush().map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_raw(w: u32, h: u32, color: ColorType, depth: BitDepth, data: &[u8], palette: bool) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            if palette {
                enc.set_palette(vec![0, 0, 0, 128, 0, 0, 0, 128, 0, 128, 128, 0]);
            }
            let mut wr = enc.write_header().unwrap();
            wr.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn writes_zero_and_255() {
        let m = BinaryMask::from_fn(2, 3, |y, x| y == 1 && x > 0).unwrap();
        let bytes = encode_png(&m).unwrap();
        let mut dec = png::Decoder::new(Cursor::new(&bytes));
        dec.set_transformations(Transformations::IDENTITY);
        let mut r = dec.read_info().unwrap();
        let mut buf = vec![0; r.output_buffer_size().unwrap()];
        let info = r.next_frame(&mut buf).unwrap();
        assert_eq!(info.color_type, ColorType::Grayscale);
        assert_eq!(info.bit_depth, BitDepth::Eight);
        assert_eq!(&buf[..6], &[0, 0, 0, 0, 255, 255]);
        assert_eq!(decode_png(&bytes).unwrap(), m);
    }

    #[test]
    fn any_nonzero_gray_is_foreground() {
        let bytes = encode_raw(4, 1, ColorType::Grayscale, BitDepth::Eight, &[0, 1, 7, 255], false);
        let m = decode_png(&bytes).unwrap();
        assert_eq!(m.to_bytes(), vec![0, 1, 1, 1]);
    }

    #[test]
    fn indexed_palette_uses_raw_indices() {
        // 2-bit indexed, 5 px wide: indices 0,1,2,0,3 packed MSB first
        let row = [0b0001_1000u8, 0b1100_0000];
        let bytes = encode_raw(5, 1, ColorType::Indexed, BitDepth::Two, &row, true);
        let m = decode_png(&bytes).unwrap();
        assert_eq!(m.to_bytes(), vec![0, 1, 1, 0, 1]);
    }

    #[test]
    fn sixteen_bit_low_byte_counts() {
        let data = [0u8, 0, 0, 1, 1, 0];
        let bytes = encode_raw(3, 1, ColorType::Grayscale, BitDepth::Sixteen, &data, false);
        assert_eq!(decode_png(&bytes).unwrap().to_bytes(), vec![0, 1, 1]);
    }

    #[test]
    fn rgba_ignores_alpha() {
        let data = [0u8, 0, 0, 255, 0, 9, 0, 0];
        let bytes = encode_raw(2, 1, ColorType::Rgba, BitDepth::Eight, &data, false);
        assert_eq!(decode_png(&bytes).unwrap().to_bytes(), vec![0, 1]);
    }

    #[test]
    fn file_roundtrip_and_missing_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("00000.png");
        let m = BinaryMask::from_fn(7, 5, |y, x| (y * x) % 3 == 1).unwrap();
        write_png(&path, &m).unwrap();
        assert_eq!(read_png(&path).unwrap(), m);
        let err = read_png(dir.path().join("nope.png")).unwrap_err();
        assert!(err.to_string().contains("nope.png"));
    }

    #[test]
    fn garbage_is_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = read_png(&path).unwrap_err();
        assert!(matches!(err, MaskError::AtPath { .. }));
        assert!(err.to_string().contains("bad.png"));
    }
}
