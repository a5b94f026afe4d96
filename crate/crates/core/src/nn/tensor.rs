use alloc::vec;
use alloc::vec::Vec;

/// Dense `[batch, channels, len]` array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    batch: usize,
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(batch: usize, channels: usize, len: usize) -> Self {
        Self { batch, channels, len, data: vec![0.0; batch * channels * len] }
    }

    pub fn from_vec(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), batch * channels * len, "tensor shape does not match data");
        Self { batch, channels, len, data }
    }

    /// Stacks equal-length sequences into a `[n, 1, len]` tensor.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let len = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * len);
        for r in rows {
            assert_eq!(r.as_ref().len(), len, "rows must share one length");
            data.extend_from_slice(r.as_ref());
        }
        Self { batch: rows.len(), channels: 1, len, data }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.len)
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

    /// The `[len]` row for `(b, c)`.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let off = (b * self.channels + c) * self.len;
        &self.data[off..off + self.len]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let off = (b * self.channels + c) * self.len;
        &mut self.data[off..off + self.len]
    }

    /// All channels of item `b`, contiguous.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.channels * self.len;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.channels * self.len;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            batch: self.batch,
            channels: self.channels,
            len: self.len,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Crops or zero-pads the time axis to `len`.
    pub fn fit_len(&self, len: usize) -> Self {
        if len == self.len {
            return self.clone();
        }
        let mut out = Self::zeros(self.batch, self.channels, len);
        let keep = len.min(self.len);
        for b in 0..self.batch {
            for c in 0..self.channels {
                out.row_mut(b, c)[..keep].copy_from_slice(&self.row(b, c)[..keep]);
            }
        }
        out
    }
}
