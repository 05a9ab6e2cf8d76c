//! Dense row-major f64 tensors.
//!
//! The same kernels back both the recorded forward pass in [`super::graph`]
//! and the plain value-level eval paths (coding, sweeps), so the two routes
//! produce bit-identical numbers.

use crate::error::{Error, Result};

/// Product of dims; the empty shape is a rank-0 scalar with one element.
pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Numpy-style trailing-aligned broadcast of two shapes.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel_of(&shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, numel_of(&shape), data.len()),
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel_of(shape)],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel_of(shape)],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            grad: None,
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    /// Row-major matrix from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::invalid("tensor", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::invalid(
                "scalar_value",
                format!("tensor of shape {:?} is not a scalar", self.shape),
            ))
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(Error::ShapeMismatch {
                    op: "set_grad",
                    lhs: self.shape.clone(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub fn validate_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::non_finite(context))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    fn binary(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
                grad: None,
            });
        }
        let target = broadcast_shapes(op, &self.shape, &other.shape)?;
        let a = self.broadcast_to(&target)?;
        let b = other.broadcast_to(&target)?;
        a.binary(&b, op, f)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data.iter().any(|&v| v == 0.0) {
            return Err(Error::invalid("div", "division by zero"));
        }
        self.binary(other, "div", |a, b| a / b)
    }

    /// 2-D matrix product [m,k] x [k,n].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// x W + b with b broadcast over rows; x [m,k], w [k,n], b [n].
    pub fn affine(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        if b.rank() != 1 || (w.rank() == 2 && b.shape[0] != w.shape[1]) {
            return Err(Error::ShapeMismatch {
                op: "affine",
                lhs: w.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let mut out = self.matmul(w)?;
        let n = b.shape[0];
        for row in out.data.chunks_mut(n) {
            for (o, &bias) in row.iter_mut().zip(&b.data) {
                *o += bias;
            }
        }
        Ok(out)
    }

    /// [m,n] -> [n,m].
    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(
                "transpose2",
                format!("expected rank 2, got shape {:?}", self.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], data)
    }

    pub fn reduce_sum(&self) -> Tensor {
        Tensor::scalar(self.data.iter().sum())
    }

    pub fn reduce_mean(&self) -> Tensor {
        Tensor::scalar(self.data.iter().sum::<f64>() / self.data.len() as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            grad: None,
        })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        // Verify compatibility: every source dim must match or be 1.
        let rank = shape.len();
        if self.shape.len() > rank {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let offset = rank - self.shape.len();
        for (i, &d) in self.shape.iter().enumerate() {
            if d != shape[offset + i] && d != 1 {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: self.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
        }
        let src_strides = strides_of(&self.shape);
        let out_numel = numel_of(shape);
        let mut data = vec![0.0; out_numel];
        let out_strides = strides_of(shape);
        for (o, slot) in data.iter_mut().enumerate() {
            let mut src = 0usize;
            for i in 0..self.shape.len() {
                let coord = (o / out_strides[offset + i]) % shape[offset + i];
                if self.shape[i] != 1 {
                    src += coord * src_strides[i];
                }
            }
            *slot = self.data[src];
        }
        Tensor::new(shape.to_vec(), data)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::invalid(
                "concat",
                format!("axis {} out of range for shape {:?}", axis, first.shape),
            ));
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = 0;
        for p in parts {
            if p.rank() != first.rank() {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            for (i, (&a, &b)) in first.shape.iter().zip(&p.shape).enumerate() {
                if i != axis && a != b {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape.clone(),
                        rhs: p.shape.clone(),
                    });
                }
            }
            out_shape[axis] += p.shape[axis];
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel_of(&out_shape));
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(out_shape, data)
    }

    /// Contiguous range along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!(
                    "range {}..{} on axis {} exceeds shape {:?}",
                    start,
                    start + len,
                    axis,
                    self.shape
                ),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        let stride = self.shape[axis] * inner;
        for o in 0..outer {
            let base = o * stride + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Tensor::new(out_shape, data)
    }
}

/// Sum `data` (laid out as `from`) down to `to`, undoing an implicit
/// broadcast. `to` must be broadcastable to `from`.
pub fn reduce_to_shape(data: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return data.to_vec();
    }
    let offset = from.len() - to.len();
    let from_strides = strides_of(from);
    let to_strides = strides_of(to);
    let mut out = vec![0.0; numel_of(to)];
    for (i, &v) in data.iter().enumerate() {
        let mut dst = 0usize;
        for k in 0..to.len() {
            let coord = (i / from_strides[offset + k]) % from[offset + k];
            if to[k] != 1 {
                dst += coord * to_strides[k];
            }
        }
        out[dst] += v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_mismatch_is_rejected() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_identity_returns_input() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = a.matmul(&Tensor::identity(2)).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_inner_dim_mismatch_names_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn broadcast_row_over_matrix() {
        let row = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let out = row.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_broadcasts_to_any_shape() {
        let s = Tensor::scalar(5.0);
        let out = s.broadcast_to(&[2, 2]).unwrap();
        assert_eq!(out.data(), &[5.0; 4]);
    }

    #[test]
    fn implicit_broadcast_in_add() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![10.0, 20.0]).unwrap();
        let out = a.add(&b).unwrap();
        assert_eq!(out.data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        // grad of a [1,2] operand broadcast to [2,2]
        let grad = [1.0, 2.0, 3.0, 4.0];
        let out = reduce_to_shape(&grad, &[2, 2], &[1, 2]);
        assert_eq!(out, vec![4.0, 6.0]);
        // rank-0 target collects everything
        let out = reduce_to_shape(&grad, &[2, 2], &[]);
        assert_eq!(out, vec![10.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip_on_axis1() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let cat = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(cat.shape(), &[2, 3]);
        assert_eq!(cat.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = cat.slice(1, 0, 2).unwrap();
        assert_eq!(back.data(), a.data());
        let tail = cat.slice(1, 2, 1).unwrap();
        assert_eq!(tail.data(), b.data());
    }

    #[test]
    fn slice_out_of_range_is_rejected() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(a.slice(1, 2, 2).is_err());
        assert!(a.slice(2, 0, 1).is_err());
    }

    #[test]
    fn rank0_scalar_has_one_element() {
        let s = Tensor::scalar(7.0);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.scalar_value().unwrap(), 7.0);
    }
}
