use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("tensor dims must be >= 1, got {shape:?}")));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(&shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: [usize; 4], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "tensor dims must be >= 1, got {shape:?}");
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let [n, c, h, w] = shape;
        let mut i = 0;
        for a in 0..n {
            for b in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f([a, b, y, x]);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    /// Stack single-channel images into an `(n, 1, h, w)` batch.
    pub fn from_images(images: &[Image<T>]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.len());
        for img in images {
            first.ensure_same_shape(img)?;
            data.extend_from_slice(img.data());
        }
        Tensor::new([images.len(), 1, first.height(), first.width()], data)
    }

    pub fn from_image(image: &Image<T>) -> Self {
        Tensor {
            shape: [1, 1, image.height(), image.width()],
            data: image.data().to_vec(),
        }
    }

    /// Channel `c` of batch item `n` as an image.
    pub fn image(&self, n: usize, c: usize) -> Image<T> {
        let [_, _, h, w] = self.shape;
        let plane = h * w;
        let start = self.offset(n, c, 0, 0);
        Image::new(h, w, self.data[start..start + plane].to_vec()).expect("plane shape")
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, h, w] = self.shape;
        ((n * cc + c) * h + y) * w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub(crate) fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape[2] * self.shape[3];
        let s = (n * self.shape[1] + c) * p;
        &self.data[s..s + p]
    }

    #[inline]
    pub(crate) fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape[2] * self.shape[3];
        let s = (n * self.shape[1] + c) * p;
        &mut self.data[s..s + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// Channels `[start, start + count)` as a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if count == 0 || start + count > c {
            return Err(Error::InvalidArgument(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + count
            )));
        }
        let mut out = Self::zeros([n, count, h, w]);
        for b in 0..n {
            for k in 0..count {
                out.plane_mut(b, k).copy_from_slice(self.plane(b, start + k));
            }
        }
        Ok(out)
    }

    /// Stacks tensors of equal per-sample shape along the batch axis.
    pub fn concat_batch(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape(&first.shape, &p.shape));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: [n, c, h, w], data })
    }

    /// Samples `[start, start + count)` as a new tensor.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if count == 0 || start + count > n {
            return Err(Error::InvalidArgument(format!(
                "batch slice {start}..{} out of range for {n} samples",
                start + count
            )));
        }
        let per = c * h * w;
        Ok(Tensor {
            shape: [count, c, h, w],
            data: self.data[start * per..(start + count) * per].to_vec(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
