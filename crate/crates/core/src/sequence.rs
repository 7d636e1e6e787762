use crate::error::{Error, Result};
use crate::matrix::{BinMask, Mat};

/// Pixel grid of one frame. Pixel `(x, y)` maps to vector index `y * width + x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub width: usize,
    pub height: usize,
}

impl FrameShape {
    pub fn new(width: usize, height: usize) -> Self {
        FrameShape { width, height }
    }

    /// A one-pixel-wide column of `m` pixels.
    pub fn column(m: usize) -> Self {
        FrameShape { width: 1, height: m }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Observation matrix with one vectorized frame per column.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    data: Mat,
    shape: FrameShape,
}

impl FrameSequence {
    pub fn new(data: Mat, shape: FrameShape) -> Result<Self> {
        if data.rows() != shape.pixels() {
            return Err(Error::Dimension(format!(
                "{} rows for {}x{} frames",
                data.rows(),
                shape.width,
                shape.height
            )));
        }
        Ok(FrameSequence { data, shape })
    }

    /// Treats every column as a 1-pixel-wide frame.
    pub fn from_columns(data: Mat) -> Self {
        let shape = FrameShape::column(data.rows());
        FrameSequence { data, shape }
    }

    pub fn from_frames(frames: &[Mat]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Dimension("empty frame list".into()))?;
        let shape = FrameShape::new(first.cols(), first.rows());
        if let Some(k) = frames.iter().position(|f| f.shape() != first.shape()) {
            return Err(Error::Dimension(format!("frame {k} differs in size from frame 0")));
        }
        let columns: Vec<Vec<f64>> = frames.iter().map(|f| f.as_slice().to_vec()).collect();
        FrameSequence::new(Mat::from_columns(&columns)?, shape)
    }

    pub fn matrix(&self) -> &Mat {
        &self.data
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.cols() == 0
    }

    pub fn frame(&self, j: usize) -> Mat {
        column_to_frame(&self.data.column(j), self.shape)
    }

    pub fn frames(&self) -> Vec<Mat> {
        (0..self.len()).map(|j| self.frame(j)).collect()
    }
}

pub fn column_to_frame(column: &[f64], shape: FrameShape) -> Mat {
    Mat::from_vec(shape.height, shape.width, column.to_vec()).expect("column length matches frame shape")
}

pub fn mask_column_to_frame(column: &[bool], shape: FrameShape) -> BinMask {
    BinMask::from_bits(shape.height, shape.width, column.to_vec()).expect("column length matches frame shape")
}
