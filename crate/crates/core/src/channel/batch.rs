use crate::error::{Error, Result};
use crate::numkit::Mat;

/// `B × 2N` block of channel symbols: columns `0..N` hold the real parts and
/// `N..2N` the imaginary parts of `N` complex channel uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBatch {
    mat: Mat,
    n_uses: usize,
}

impl SymbolBatch {
    pub fn new(mat: Mat) -> Result<Self> {
        if !mat.cols().is_multiple_of(2) || mat.cols() == 0 {
            return Err(Error::shape("SymbolBatch width (even, > 0)", "2N", mat.cols()));
        }
        let n_uses = mat.cols() / 2;
        Ok(SymbolBatch { mat, n_uses })
    }

    pub fn zeros(batch: usize, n_uses: usize) -> Self {
        SymbolBatch {
            mat: Mat::zeros(batch, 2 * n_uses),
            n_uses,
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        SymbolBatch::new(Mat::from_rows(rows)?)
    }

    #[inline]
    pub fn n_uses(&self) -> usize {
        self.n_uses
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.mat.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.mat
    }

    pub fn as_mat_mut(&mut self) -> &mut Mat {
        &mut self.mat
    }

    pub fn into_mat(self) -> Mat {
        self.mat
    }

    #[inline]
    pub fn re(&self, b: usize, k: usize) -> f64 {
        self.mat[(b, k)]
    }

    #[inline]
    pub fn im(&self, b: usize, k: usize) -> f64 {
        self.mat[(b, self.n_uses + k)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, k: usize, re: f64, im: f64) {
        let n = self.n_uses;
        self.mat[(b, k)] = re;
        self.mat[(b, n + k)] = im;
    }

    /// Average energy per complex symbol over the whole batch.
    pub fn mean_symbol_energy(&self) -> f64 {
        self.mat.sum_sq() / (self.batch() * self.n_uses) as f64
    }

    /// Prepends `prefix` complex uses taken from `head` to every block.
    pub fn prepend_uses(&self, head: &SymbolBatch) -> Result<SymbolBatch> {
        if head.batch() != self.batch() {
            return Err(Error::shape("SymbolBatch::prepend_uses", self.batch(), head.batch()));
        }
        let (p, n) = (head.n_uses, self.n_uses);
        let mut out = SymbolBatch::zeros(self.batch(), p + n);
        for b in 0..self.batch() {
            for k in 0..p {
                out.set(b, k, head.re(b, k), head.im(b, k));
            }
            for k in 0..n {
                out.set(b, p + k, self.re(b, k), self.im(b, k));
            }
        }
        Ok(out)
    }

    /// Complex uses `from..from+len` of every block.
    pub fn uses(&self, from: usize, len: usize) -> SymbolBatch {
        let mut out = SymbolBatch::zeros(self.batch(), len);
        for b in 0..self.batch() {
            for k in 0..len {
                out.set(b, k, self.re(b, from + k), self.im(b, from + k));
            }
        }
        out
    }
}
