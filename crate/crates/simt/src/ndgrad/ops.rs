//! Elementwise and shape operations.

use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// Elementwise addition. The right side may also be a suffix shape of the
    /// left (e.g. `[D]` bias onto `[B,T,D]`, `[T,D]` positions onto `[B,T,D]`),
    /// in which case it is broadcast over the leading dimensions.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls == rs {
            let out = self.with_data(|a| {
                rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>())
            });
            return Ok(Tensor::from_op(
                out,
                ls,
                vec![self.clone(), rhs.clone()],
                move |g| vec![Some(g.to_vec()), Some(g.to_vec())],
            ));
        }
        if ls.len() > rs.len() && ls[ls.len() - rs.len()..] == rs[..] {
            let block = super::numel_of(&rs);
            let out = self.with_data(|a| {
                rhs.with_data(|b| {
                    let mut out = a.to_vec();
                    for chunk in out.chunks_mut(block.max(1)) {
                        for (x, y) in chunk.iter_mut().zip(b) {
                            *x += y;
                        }
                    }
                    out
                })
            });
            return Ok(Tensor::from_op(
                out,
                ls,
                vec![self.clone(), rhs.clone()],
                move |g| {
                    let mut rg = vec![0.0; block];
                    for chunk in g.chunks(block.max(1)) {
                        for (acc, gi) in rg.iter_mut().zip(chunk) {
                            *acc += gi;
                        }
                    }
                    vec![Some(g.to_vec()), Some(rg)]
                },
            ));
        }
        Err(Error::ShapeMismatch { op: "add", lhs: ls, rhs: rs })
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(Error::ShapeMismatch { op: "mul", lhs: ls, rhs: rs });
        }
        let out = self.with_data(|a| {
            rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
        });
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            out,
            ls,
            vec![self.clone(), rhs.clone()],
            move |g| {
                let da = pb.with_data(|b| g.iter().zip(b).map(|(gi, y)| gi * y).collect());
                let db = pa.with_data(|a| g.iter().zip(a).map(|(gi, x)| gi * x).collect());
                vec![Some(da), Some(db)]
            },
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out = self.with_data(|a| a.iter().map(|x| x * c).collect::<Vec<_>>());
        Tensor::from_op(out, self.shape(), vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|gi| gi * c).collect())]
        })
    }

    pub fn relu(&self) -> Tensor {
        let out = self.with_data(|a| a.iter().map(|x| x.max(0.0)).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::from_op(out, self.shape(), vec![self.clone()], move |g| {
            let d = p.with_data(|a| {
                g.iter()
                    .zip(a)
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect()
            });
            vec![Some(d)]
        })
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum_all(&self) -> Tensor {
        let s = self.with_data(|a| a.iter().sum::<f64>());
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    /// View with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if super::numel_of(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            move |g| vec![Some(g.to_vec())],
        ))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let shape = self.shape();
        let rank = shape.len();
        if rank < 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose_last2",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (m, n) = (shape[rank - 2], shape[rank - 1]);
        let batch: usize = shape[..rank - 2].iter().product();
        let transpose = move |src: &[f64]| {
            let mut out = vec![0.0; src.len()];
            for b in 0..batch {
                let s = &src[b * m * n..(b + 1) * m * n];
                let d = &mut out[b * m * n..(b + 1) * m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[j * m + i] = s[i * n + j];
                    }
                }
            }
            out
        };
        let mut out_shape = shape.clone();
        out_shape[rank - 2] = n;
        out_shape[rank - 1] = m;
        let out = self.with_data(|a| transpose(a));
        Ok(Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            move |g| {
                // transposing back swaps m and n roles
                let mut back = vec![0.0; g.len()];
                for b in 0..batch {
                    let s = &g[b * m * n..(b + 1) * m * n];
                    let d = &mut back[b * m * n..(b + 1) * m * n];
                    for i in 0..n {
                        for j in 0..m {
                            d[j * n + i] = s[i * m + j];
                        }
                    }
                }
                vec![Some(back)]
            },
        ))
    }

    /// Slice `len` columns of the last axis starting at `offset`.
    pub fn narrow_last(&self, offset: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        let d = *shape.last().ok_or(Error::ShapeMismatch {
            op: "narrow_last",
            lhs: shape.clone(),
            rhs: vec![],
        })?;
        if offset + len > d {
            return Err(Error::ShapeMismatch {
                op: "narrow_last",
                lhs: shape,
                rhs: vec![offset, len],
            });
        }
        let rows = self.numel() / d;
        let out = self.with_data(|a| {
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&a[r * d + offset..r * d + offset + len]);
            }
            out
        });
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = len;
        let total = self.numel();
        Ok(Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            move |g| {
                let mut back = vec![0.0; total];
                for r in 0..rows {
                    back[r * d + offset..r * d + offset + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![Some(back)]
            },
        ))
    }
}

/// Concatenate tensors along the last axis; all other extents must match.
pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Usage("concat_last of zero tensors".into()));
    }
    let first = parts[0].shape();
    let lead = &first[..first.len() - 1];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != first.len() || &s[..s.len() - 1] != lead {
            return Err(Error::ShapeMismatch {
                op: "concat_last",
                lhs: first.clone(),
                rhs: s,
            });
        }
        widths.push(*s.last().unwrap());
    }
    let rows: usize = lead.iter().product();
    let out_d: usize = widths.iter().sum();
    let mut out = vec![0.0; rows * out_d];
    let mut col = 0;
    for (p, w) in parts.iter().zip(&widths) {
        p.with_data(|a| {
            for r in 0..rows {
                out[r * out_d + col..r * out_d + col + w]
                    .copy_from_slice(&a[r * w..(r + 1) * w]);
            }
        });
        col += w;
    }
    let mut out_shape = lead.to_vec();
    out_shape.push(out_d);
    let widths_bw = widths.clone();
    Ok(Tensor::from_op(
        out,
        out_shape,
        parts.to_vec(),
        move |g| {
            let mut col = 0;
            let mut contribs = Vec::with_capacity(widths_bw.len());
            for w in &widths_bw {
                let mut part = vec![0.0; rows * w];
                for r in 0..rows {
                    part[r * w..(r + 1) * w]
                        .copy_from_slice(&g[r * out_d + col..r * out_d + col + w]);
                }
                contribs.push(Some(part));
                col += w;
            }
            contribs
        },
    ))
}
