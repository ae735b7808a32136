use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageError, ImageFormat, ImageReader};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Sample depth of a written image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Whether `path` has an extension [`load_image`] understands.
pub fn is_supported(path: &Path) -> bool {
    extension(path).is_some_and(|e| EXTENSIONS.contains(&e.as_str()))
}

fn corrupt(path: &Path, e: impl ToString) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

/// Read a PNG (8/16-bit) or PGM/PPM into `[C, H, W]` with values in `[0, 1]`.
/// Gray images give one channel, everything else three; alpha is dropped.
pub fn load_image(path: &Path) -> Result<Tensor> {
    if !is_supported(path) {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected one of {}",
            path.display(),
            EXTENSIONS.join(", ")
        )));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => {
            return Err(Error::UnsupportedFormat(format!("{}: {other:?} content", path.display())));
        }
        None => return Err(corrupt(path, "unrecognized image signature")),
    }
    let img = reader.decode().map_err(|e| match e {
        // The file opened, so a read failure here is a short or damaged body.
        ImageError::IoError(io) => corrupt(path, io),
        ImageError::Unsupported(u) => Error::UnsupportedFormat(format!("{}: {u}", path.display())),
        other => corrupt(path, other),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() >= 2;
    let (c, data): (usize, Vec<f32>) = match (gray, sixteen) {
        (true, false) => (1, img.into_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
        (true, true) => (1, img.into_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
        (false, false) => (3, img.into_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
        (false, true) => (3, img.into_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
    };
    // Interleaved HWC to planar CHW.
    let planar = Tensor::from_fn([c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        data[p * c + ch]
    });
    Ok(planar)
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Write `[C, H, W]` (C = 1 or 3) as PNG, PGM or PPM, chosen by extension.
/// Values are clamped to `[0, 1]` and rounded to the nearest level.
pub fn save_image(img: &Tensor, path: &Path, depth: BitDepth) -> Result<()> {
    let [c, h, w] = img.dims3("save_image")?;
    let color = match (c, depth) {
        (1, BitDepth::Eight) => ExtendedColorType::L8,
        (1, BitDepth::Sixteen) => ExtendedColorType::L16,
        (3, BitDepth::Eight) => ExtendedColorType::Rgb8,
        (3, BitDepth::Sixteen) => ExtendedColorType::Rgb16,
        _ => return Err(Error::shape("save_image", format!("{c} channels; only 1 or 3 can be written"))),
    };
    let ext = extension(path).unwrap_or_default();
    let subtype = match (ext.as_str(), c) {
        ("png", _) => None,
        ("pgm", 1) | ("pnm", 1) => Some(PnmSubtype::Graymap(SampleEncoding::Binary)),
        ("ppm", 3) | ("pnm", 3) => Some(PnmSubtype::Pixmap(SampleEncoding::Binary)),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: cannot write {c}-channel images with this extension",
                path.display()
            )))
        }
    };
    let plane = h * w;
    let interleaved = (0..plane * c).map(|i| img.data()[(i % c) * plane + i / c]);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (w, h) = (w as u32, h as u32);
    let result = match (subtype, depth) {
        (_, BitDepth::Eight) => {
            let bytes: Vec<u8> = interleaved.map(|v| quantize(v, 255.0) as u8).collect();
            match subtype {
                None => PngEncoder::new(out).write_image(&bytes, w, h, color),
                Some(s) => PnmEncoder::new(out).with_subtype(s).write_image(&bytes, w, h, color),
            }
        }
        (None, BitDepth::Sixteen) => {
            // The PNG encoder takes native-endian 16-bit samples.
            let bytes: Vec<u8> = interleaved
                .flat_map(|v| (quantize(v, 65535.0) as u16).to_ne_bytes())
                .collect();
            PngEncoder::new(out).write_image(&bytes, w, h, color)
        }
        (Some(_), BitDepth::Sixteen) => {
            // The PNM encoder only writes 8-bit P5/P6; binary 16-bit samples
            // are big-endian with maxval 65535.
            let magic = if c == 1 { "P5" } else { "P6" };
            let bytes: Vec<u8> = interleaved
                .flat_map(|v| (quantize(v, 65535.0) as u16).to_be_bytes())
                .collect();
            write!(out, "{magic}\n{w} {h}\n65535\n")
                .and_then(|_| out.write_all(&bytes))
                .and_then(|_| out.flush())
                .map_err(ImageError::IoError)
        }
    };
    result.map_err(|e| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize, levels: f32) -> Tensor {
        Tensor::from_fn([c, h, w], |i| ((i * 37) % (levels as usize + 1)) as f32 / levels)
    }

    #[test]
    fn round_trips_are_exact_at_matching_depth() {
        let dir = tempfile::tempdir().unwrap();
        for (name, c, depth, levels) in [
            ("a.png", 1, BitDepth::Eight, 255.0),
            ("b.png", 3, BitDepth::Eight, 255.0),
            ("c.png", 1, BitDepth::Sixteen, 65535.0),
            ("d.pgm", 1, BitDepth::Eight, 255.0),
            ("e.pgm", 1, BitDepth::Sixteen, 65535.0),
            ("f.ppm", 3, BitDepth::Eight, 255.0),
            ("g.ppm", 3, BitDepth::Sixteen, 65535.0),
        ] {
            let img = ramp(c, 5, 7, levels);
            let path = dir.path().join(name);
            save_image(&img, &path, depth).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back, img, "{name}");
        }
    }

    #[test]
    fn sixteen_bit_maximum_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("max.pgm");
        std::fs::write(&path, [b"P5\n2 1\n65535\n".as_slice(), &[0xff, 0xff, 0x00, 0x00]].concat()).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        save_image(&ramp(1, 16, 16, 255.0), &path, BitDepth::Eight).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&path), Err(Error::Corrupt { .. })));
        let pgm = dir.path().join("t.pgm");
        std::fs::write(&pgm, b"P5\n4 4\n255\n\x01\x02").unwrap();
        assert!(matches!(load_image(&pgm), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn unsupported_and_missing_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(&dir.path().join("x.jpg")), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(load_image(&dir.path().join("missing.png")), Err(Error::Io { .. })));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image at all").unwrap();
        assert!(matches!(load_image(&junk), Err(Error::Corrupt { .. })));
    }
}
