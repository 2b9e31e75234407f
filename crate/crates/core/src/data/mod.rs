//! Domain types shared by every stage of the pipeline, plus their file I/O.

mod annotation;
pub mod io;

pub use annotation::{parse_annotations, AnnotationEntry, OrderingAnnotation};

use autograd::Tensor;

use crate::error::{Error, Result};

/// Smallest admissible depth; log-depth losses need strictly positive maps.
pub const DEPTH_FLOOR: f64 = 1e-6;

/// RGB image with channel values in `[0, 1]`, stored as three planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// `data` is planar: all of R, then G, then B, each row-major.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, height * width));
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 3, self.height, self.width], self.data.clone()).expect("consistent shape")
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{left}+{top} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Self::new(height, width, data)
    }
}

/// Relative depth, strictly positive; smaller is closer.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_plane(height, width, data.len())?;
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!("depth value {v} is not finite and positive")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Raises values below [`DEPTH_FLOOR`] to the floor; returns the map and
    /// how many values were clamped. Non-finite values are rejected.
    pub fn floored(height: usize, width: usize, mut data: Vec<f64>) -> Result<(Self, usize)> {
        check_plane(height, width, data.len())?;
        let mut clamped = 0;
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::Domain(format!("depth value {v} is not finite")));
            }
            if *v < DEPTH_FLOOR {
                clamped += 1;
                *v = DEPTH_FLOOR;
            }
        }
        Ok((
            Self {
                height,
                width,
                data,
            },
            clamped,
        ))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape<T: Plane>(&self, other: &T) -> bool {
        (self.height, self.width) == other.dims()
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.data.clone()).expect("consistent shape")
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Binary text / speech-balloon mask; 1 marks text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl TextMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_plane(height, width, data.len())?;
        if let Some(v) = data.iter().find(|v| **v > 1) {
            return Err(Error::Domain(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of text pixels.
    pub fn ratio(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// `[1, 1, H, W]` tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, 1, self.height, self.width],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("consistent shape")
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape("mask crop outside bounds".into()));
        }
        let data = (top..top + height)
            .flat_map(|y| self.data[y * self.width + left..y * self.width + left + width].iter().copied())
            .collect();
        Self::new(height, width, data)
    }
}

/// Anything with a `(height, width)` extent.
pub trait Plane {
    fn dims(&self) -> (usize, usize);
}

impl Plane for ImageTensor {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Plane for DepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Plane for TextMask {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub(crate) fn ensure_same_dims(op: &str, a: &impl Plane, b: &impl Plane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn check_plane(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("empty map {height}x{width}")));
    }
    if len != height * width {
        return Err(Error::Shape(format!(
            "{height}x{width} map needs {} values, got {len}",
            height * width
        )));
    }
    Ok(())
}
