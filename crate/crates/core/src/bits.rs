//! Dense bit matrix with word-aligned rows.

/// Row-major bit matrix. Each row starts on a fresh `u64` word so that row
/// prefixes of the matrix can be sliced without shifting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = cols.div_ceil(64);
        BitMatrix {
            rows,
            cols,
            stride,
            words: vec![0; rows * stride],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        let w = self.words[row * self.stride + (col >> 6)];
        (w >> (col & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.rows && col < self.cols);
        let word = &mut self.words[row * self.stride + (col >> 6)];
        let mask = 1u64 << (col & 63);
        if value {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    /// Copy of the first `rows` rows.
    pub fn prefix(&self, rows: usize) -> Self {
        assert!(rows <= self.rows);
        BitMatrix {
            rows,
            cols: self.cols,
            stride: self.stride,
            words: self.words[..rows * self.stride].to_vec(),
        }
    }

    /// Iterator over the bits of one row.
    pub fn row_iter(&self, row: usize) -> impl Iterator<Item = bool> + '_ {
        (0..self.cols).map(move |c| self.get(row, c))
    }
}
