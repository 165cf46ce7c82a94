use super::Real;

/// Batched feature maps stored channel-major: `[channel][sample][row][col]`.
///
/// Keeping each channel's values contiguous across the whole batch makes a
/// convolution a single matrix product over all samples and keeps
/// per-channel normalization statistics on one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    channels: usize,
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        batch: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Self {
        assert_eq!(
            data.len(),
            channels * batch * height * width,
            "tensor buffer size"
        );
        Self {
            channels,
            batch,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.channels, self.batch, self.height, self.width]
    }

    /// Elements per channel: `batch * height * width`.
    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    /// Elements per sample per channel.
    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn index(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.batch + n) * self.height + y) * self.width + x
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "tensor shapes differ");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Iterates over the values belonging to sample `n`, channel by channel.
    pub fn sample_values(&self, n: usize) -> impl Iterator<Item = T> + '_ {
        let s = self.spatial();
        (0..self.channels).flat_map(move |c| {
            let start = (c * self.batch + n) * s;
            self.data[start..start + s].iter().copied()
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}
