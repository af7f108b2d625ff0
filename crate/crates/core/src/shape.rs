use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the five tensor axes: batch, channel, time, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    N,
    C,
    T,
    H,
    W,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::N => 0,
            Axis::C => 1,
            Axis::T => 2,
            Axis::H => 3,
            Axis::W => 4,
        }
    }

    pub fn label(self) -> char {
        match self {
            Axis::N => 'n',
            Axis::C => 'c',
            Axis::T => 't',
            Axis::H => 'h',
            Axis::W => 'w',
        }
    }
}

/// Dense 5-D extent `(N, C, T, H, W)`, row-major with W fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Shape5 { n, c, t, h, w }
    }

    /// Shape of a scalar-valued tensor.
    pub fn scalar() -> Self {
        Shape5::new(1, 1, 1, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.t, self.h, self.w]
    }

    pub fn axis_len(&self, axis: Axis) -> usize {
        self.dims()[axis.index()]
    }

    /// Element stride of `axis` in the flat row-major layout.
    pub fn axis_stride(&self, axis: Axis) -> usize {
        match axis {
            Axis::N => self.c * self.t * self.h * self.w,
            Axis::C => self.t * self.h * self.w,
            Axis::T => self.h * self.w,
            Axis::H => self.w,
            Axis::W => 1,
        }
    }

    pub fn with_axis(&self, axis: Axis, len: usize) -> Self {
        let mut d = self.dims();
        d[axis.index()] = len;
        Shape5::new(d[0], d[1], d[2], d[3], d[4])
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        (((n * self.c + c) * self.t + t) * self.h + h) * self.w + w
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::config(format!("all shape entries must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.n, self.c, self.t, self.h, self.w)
    }
}
