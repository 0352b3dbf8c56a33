use crate::error::{Error, Result};
use crate::image::{to_grayscale, Image};

/// A dense `(batch, channels, height, width)` array of doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "{} values for tensor shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// A `(1, 1, h, w)` tensor of the luma channel scaled to `[0, 1]`.
    pub fn from_image(img: &Image) -> Self {
        let g = to_grayscale(img);
        let data = g.plane(0).iter().map(|v| v / g.max_value()).collect();
        Tensor4 {
            shape: [1, 1, img.height(), img.width()],
            data,
        }
    }

    /// Converts sample `n`, channel 0, back to an image in `[0, max_value]`.
    pub fn to_image(&self, n: usize, max_value: f64) -> Result<Image> {
        let [_, _, h, w] = self.shape;
        let plane = &self.sample_slice(n)[..h * w];
        Image::from_clamped(w, h, 1, plane.iter().map(|v| v * max_value).collect(), max_value)
    }

    /// Concatenates tensors of equal per-sample shape along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Empty("no tensors to stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * first.data.len());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return Err(Error::Dimension(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample_slice(&self, n: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    /// A batch-of-one copy of sample `n`.
    pub fn sample(&self, n: usize) -> Tensor4 {
        let [_, c, h, w] = self.shape;
        Tensor4 {
            shape: [1, c, h, w],
            data: self.sample_slice(n).to_vec(),
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
