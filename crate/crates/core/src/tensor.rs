//! Dense channel-major arrays shared by every stage of the pipeline.
//!
//! [`Tensor3`] holds images and feature-map stacks as `channels` contiguous
//! planes of `height x width` values. [`Matrix`] is the row-major design
//! matrix consumed by the shallow classifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default maximum raw intensity (8-bit images).
/// Dot product with four partial sums, so the reduction vectorises.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub const DEFAULT_MAX_RAW: f64 = 255.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// Tensor with every element set to `fill`.
    pub fn new(channels: usize, height: usize, width: usize, fill: f64) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "tensor dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if !fill.is_finite() {
            return Err(Error::range(format!("fill value {fill} is not finite")));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data: vec![fill; channels * height * width],
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, 0.0)
    }

    /// Wraps channel-major data, checking length and finiteness.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "tensor dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::range(format!("non-finite value at flat index {pos}")));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub(crate) fn zeros_unchecked(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub(crate) fn from_vec_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, s: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + s]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, s: usize, v: f64) {
        self.data[(c * self.height + r) * self.width + s] = v;
    }

    /// Extracts channel `c` as a single-plane tensor.
    pub fn channel(&self, c: usize) -> Tensor3 {
        Tensor3::from_vec_unchecked(1, self.height, self.width, self.plane(c).to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3::from_vec_unchecked(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::range(format!(
                "non-finite matrix value at row {}, col {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::Red => 0,
            Channel::Green => 1,
            Channel::Blue => 2,
        }
    }

    fn letter(self) -> char {
        match self {
            Channel::Red => 'r',
            Channel::Green => 'g',
            Channel::Blue => 'b',
        }
    }
}

/// Ordered, duplicate-free subset of the RGB planes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChannelMask {
    selection: Vec<Channel>,
}

impl ChannelMask {
    pub fn new(channels: &[Channel]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("channel mask must not be empty"));
        }
        let mut selection = channels.to_vec();
        selection.sort();
        selection.dedup();
        if selection.len() != channels.len() {
            return Err(Error::invalid("channel mask contains duplicates"));
        }
        Ok(ChannelMask { selection })
    }

    pub fn red() -> Self {
        ChannelMask {
            selection: vec![Channel::Red],
        }
    }

    pub fn red_green() -> Self {
        ChannelMask {
            selection: vec![Channel::Red, Channel::Green],
        }
    }

    pub fn rgb() -> Self {
        ChannelMask {
            selection: vec![Channel::Red, Channel::Green, Channel::Blue],
        }
    }

    /// The three compositions compared in the channel ablation.
    pub fn ablation_set() -> Vec<ChannelMask> {
        vec![Self::red(), Self::red_green(), Self::rgb()]
    }

    pub fn selection(&self) -> &[Channel] {
        &self.selection
    }

    pub fn len(&self) -> usize {
        self.selection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selection.is_empty()
    }
}

impl fmt::Display for ChannelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.selection {
            write!(f, "{}", c.letter())?;
        }
        Ok(())
    }
}

impl FromStr for ChannelMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let channels = s
            .trim()
            .chars()
            .map(|ch| match ch.to_ascii_lowercase() {
                'r' => Ok(Channel::Red),
                'g' => Ok(Channel::Green),
                'b' => Ok(Channel::Blue),
                other => Err(Error::invalid(format!("unknown channel letter '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        ChannelMask::new(&channels)
    }
}

impl Serialize for ChannelMask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ChannelMask {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Copies the masked planes of an RGB image, in R, G, B order.
pub fn channel_select(image: &Tensor3, mask: &ChannelMask) -> Result<Tensor3> {
    if image.channels() != 3 {
        return Err(Error::shape(format!(
            "channel selection needs a 3-channel image, got {} channels",
            image.channels()
        )));
    }
    let mut data = Vec::with_capacity(mask.len() * image.plane_len());
    for c in mask.selection() {
        data.extend_from_slice(image.plane(c.index()));
    }
    Ok(Tensor3::from_vec_unchecked(
        mask.len(),
        image.height(),
        image.width(),
        data,
    ))
}

/// Scales raw intensities in `[0, max_raw]` to the unit interval.
pub fn normalize(image: &Tensor3, max_raw: f64) -> Result<Tensor3> {
    if !(max_raw > 0.0 && max_raw.is_finite()) {
        return Err(Error::invalid(format!("max_raw must be positive, got {max_raw}")));
    }
    if let Some((i, v)) = image
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(0.0..=max_raw).contains(&v))
    {
        return Err(Error::range(format!(
            "raw value {v} at flat index {i} outside [0, {max_raw}]"
        )));
    }
    Ok(image.map(|v| v / max_raw))
}

/// Channel-major feature vector of an image.
pub fn flatten(image: &Tensor3) -> Vec<f64> {
    image.as_slice().to_vec()
}

/// Inverse of [`flatten`].
pub fn reshape(values: Vec<f64>, channels: usize, height: usize, width: usize) -> Result<Tensor3> {
    Tensor3::from_vec(channels, height, width, values)
}

/// Stacks flattened images into a design matrix, one row per image.
pub fn flatten_all<'a>(images: impl IntoIterator<Item = &'a Tensor3>) -> Result<Matrix> {
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for img in images {
        match cols {
            None => cols = Some(img.len()),
            Some(c) if c != img.len() => {
                return Err(Error::shape(format!(
                    "image {rows} has {} values, expected {c}",
                    img.len()
                )))
            }
            _ => {}
        }
        data.extend_from_slice(img.as_slice());
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}
