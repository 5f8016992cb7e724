use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::vision::ImageTensor;

/// Reads a binary PPM (P6, max value 255) into `[0, 1]` RGB.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path)?;
    decode_ppm(&bytes, path)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let fmt_err = |msg: String| Error::ImageFormat {
        path: path.to_path_buf(),
        msg,
    };
    if !bytes.starts_with(b"P6") {
        return Err(fmt_err("expected P6 magic".into()));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| fmt_err(e.to_string()))?;
    let rgb = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(fmt_err(format!(
                "expected 8-bit RGB, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|b| b as f32 / 255.0)
        .collect();
    ImageTensor::new(h as usize, w as usize, data)
}

/// Quantizes to 8 bits (round to nearest) and encodes as binary PPM.
pub fn encode_ppm(image: &ImageTensor) -> Vec<u8> {
    let bytes: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
    let mut out = Vec::with_capacity(bytes.len() + 16);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            image.width as u32,
            image.height as u32,
            ExtendedColorType::Rgb8,
        )
        .expect("in-memory encode");
    out
}

pub fn save_image(image: &ImageTensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff", Path::new("w.ppm")).unwrap();
        assert_eq!(img.data, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_of_two_by_two() {
        let img = ImageTensor::filled(2, 2, [0.2, 0.4, 0.6]);
        let back = decode_ppm(&encode_ppm(&img), Path::new("x")).unwrap();
        assert_eq!(back.shape(), [2, 2, 3]);
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            decode_ppm(b"P3\n1 1\n255\n1 1 1", Path::new("a")),
            Err(Error::ImageFormat { .. })
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\x00\x01", Path::new("b")),
            Err(Error::ImageFormat { .. })
        ));
    }

    #[test]
    fn writes_p6() {
        assert!(encode_ppm(&ImageTensor::filled(1, 1, [1.0; 3])).starts_with(b"P6"));
    }
}
