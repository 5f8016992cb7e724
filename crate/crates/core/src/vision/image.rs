use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// RGB image, row-major, channel-interleaved (`data[(y * W + x) * 3 + c]`), values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::Shape {
                op: "image",
                lhs: vec![height, width, Self::CHANNELS],
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, Self::CHANNELS]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn patch_count(height: usize, width: usize, patch: usize) -> Result<usize> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::Indivisible {
            height,
            width,
            patch,
        });
    }
    Ok((height / patch) * (width / patch))
}

/// Splits into `r × (l·l·3)` patches, patches in row-major order from the
/// top-left. Within a patch: pixel rows top to bottom, pixels left to right,
/// then R, G, B.
pub fn patchify<T: Scalar>(image: &ImageTensor, patch: usize) -> Result<Tensor<T>> {
    let r = patch_count(image.height, image.width, patch)?;
    let per_row = image.width / patch;
    let plen = patch * patch * 3;
    let mut out = Vec::with_capacity(r * plen);
    for p in 0..r {
        let (py, px) = (p / per_row * patch, p % per_row * patch);
        for dy in 0..patch {
            let start = ((py + dy) * image.width + px) * 3;
            out.extend(
                image.data[start..start + patch * 3]
                    .iter()
                    .map(|&v| T::lit(v as f64)),
            );
        }
    }
    Tensor::new(vec![r, plen], out)
}

pub fn unpatchify<T: Scalar>(
    patches: &Tensor<T>,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<ImageTensor> {
    let r = patch_count(height, width, patch)?;
    let plen = patch * patch * 3;
    if patches.shape() != [r, plen] {
        return Err(Error::Shape {
            op: "unpatchify",
            lhs: patches.shape().to_vec(),
            rhs: vec![r, plen],
        });
    }
    let per_row = width / patch;
    let mut data = vec![0.0f32; height * width * 3];
    for (p, row) in patches.data().chunks(plen).enumerate() {
        let (py, px) = (p / per_row * patch, p % per_row * patch);
        for dy in 0..patch {
            let start = ((py + dy) * width + px) * 3;
            for (dst, src) in data[start..start + patch * 3]
                .iter_mut()
                .zip(&row[dy * patch * 3..(dy + 1) * patch * 3])
            {
                *dst = src.as_f64() as f32;
            }
        }
    }
    ImageTensor::new(height, width, data)
}
