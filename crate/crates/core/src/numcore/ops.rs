//! Row/column helpers composed from the primitive graph operations.
//!
//! Reductions and broadcasts along one axis are expressed as products with
//! constant ones-matrices, so they inherit the matmul gradient rule.

use super::{Graph, NumError, Tensor, Var};

impl Graph {
    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize), NumError> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(NumError::Dimension(format!("{what} expects a matrix, got {s:?}"))),
        }
    }

    /// `[r × c] → [r × 1]`
    pub fn row_sum(&mut self, a: Var) -> Result<Var, NumError> {
        let (_, c) = self.matrix_dims(a, "row_sum")?;
        let ones = self.constant(Tensor::filled(&[c, 1], 1.0));
        self.matmul(a, ones)
    }

    /// `[r × c] → [1 × c]`
    pub fn col_sum(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, _) = self.matrix_dims(a, "col_sum")?;
        let ones = self.constant(Tensor::filled(&[1, r], 1.0));
        self.matmul(ones, a)
    }

    /// `[r × c] → [1 × c]`
    pub fn col_mean(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, _) = self.matrix_dims(a, "col_mean")?;
        let w = self.constant(Tensor::filled(&[1, r], 1.0 / r as f64));
        self.matmul(w, a)
    }

    /// Repeats a `[c]` or `[1 × c]` row `rows` times.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var, NumError> {
        let row = match self.shape(v) {
            [c] => {
                let c = *c;
                self.reshape(v, &[1, c])?
            }
            [1, _] => v,
            s => return Err(NumError::Dimension(format!("broadcast_rows of {s:?}"))),
        };
        let ones = self.constant(Tensor::filled(&[rows, 1], 1.0));
        self.matmul(ones, row)
    }

    /// Repeats an `[r × 1]` column `cols` times.
    pub fn broadcast_cols(&mut self, v: Var, cols: usize) -> Result<Var, NumError> {
        match self.shape(v) {
            [_, 1] => {}
            s => return Err(NumError::Dimension(format!("broadcast_cols of {s:?}"))),
        }
        let ones = self.constant(Tensor::filled(&[1, cols], 1.0));
        self.matmul(v, ones)
    }

    /// Per-row inner products of two equally shaped matrices: `[r × 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let prod = self.mul(a, b)?;
        self.row_sum(prod)
    }

    /// Scales a vector, or every row of a matrix, to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        match self.shape(a) {
            [d] => {
                let d = *d;
                let m = self.reshape(a, &[1, d])?;
                let n = self.l2_normalize_rows(m)?;
                self.reshape(n, &[d])
            }
            [_, _] => self.l2_normalize_rows(a),
            s => Err(NumError::Dimension(format!("l2_normalize of {s:?}"))),
        }
    }

    fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.matrix_dims(a, "l2_normalize")?;
        let value = self.value(a);
        for i in 0..r {
            if value.row(i).iter().all(|&x| x == 0.0) {
                return Err(NumError::Degenerate(format!("row {i} has zero norm")));
            }
        }
        let sq = self.mul(a, a)?;
        let norm_sq = self.row_sum(sq)?;
        let norm = self.sqrt(norm_sq)?;
        let norm = self.broadcast_cols(norm, c)?;
        self.div(a, norm)
    }

    /// Row-wise softmax. The per-row max shift is a constant, which leaves
    /// both value and gradient unchanged.
    pub fn softmax_rows(&mut self, logits: Var) -> Result<Var, NumError> {
        let (r, c) = self.matrix_dims(logits, "softmax_rows")?;
        let value = self.value(logits);
        let maxes: Vec<f64> = (0..r)
            .map(|i| value.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = self.constant(Tensor::new(vec![r, 1], maxes)?);
        let shift = self.broadcast_cols(shift, c)?;
        let centered = self.sub(logits, shift)?;
        let e = self.exp(centered);
        let total = self.row_sum(e)?;
        let total = self.broadcast_cols(total, c)?;
        self.div(e, total)
    }
}
