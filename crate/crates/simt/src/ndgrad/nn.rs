//! Neural-network ops: softmax, layer normalization, embedding gather,
//! label-smoothed cross-entropy.

use super::Tensor;
use crate::error::{Error, Result};

/// Walk the lanes of `shape` along `axis`: calls `f(lane_start, stride)` for
/// every (outer, inner) combination.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for r in 0..inner {
            f(o * n * inner + r, inner);
        }
    }
}

impl Tensor {
    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Usage(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let n = shape[axis];
        let mut out = self.to_vec();
        for_each_lane(&shape, axis, |start, stride| {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..n {
                mx = mx.max(out[start + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..n {
                let e = (out[start + i * stride] - mx).exp();
                out[start + i * stride] = e;
                sum += e;
            }
            for i in 0..n {
                out[start + i * stride] /= sum;
            }
        });
        let y = out.clone();
        let bw_shape = shape.clone();
        Ok(Tensor::from_op(out, shape, vec![self.clone()], move |g| {
            // dx = y * (g - sum(g*y)) per lane
            let mut dx = vec![0.0; g.len()];
            for_each_lane(&bw_shape, axis, |start, stride| {
                let mut dot = 0.0;
                for i in 0..n {
                    let idx = start + i * stride;
                    dot += g[idx] * y[idx];
                }
                for i in 0..n {
                    let idx = start + i * stride;
                    dx[idx] = y[idx] * (g[idx] - dot);
                }
            });
            vec![Some(dx)]
        }))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let shape = self.shape();
        let d = *shape.last().ok_or(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: shape.clone(),
            rhs: vec![],
        })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: gamma.shape(),
            });
        }
        let rows = self.numel() / d;
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        self.with_data(|x| {
            gamma.with_data(|gm| {
                beta.with_data(|bt| {
                    for r in 0..rows {
                        let row = &x[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        inv_std[r] = inv;
                        for j in 0..d {
                            let h = (row[j] - mean) * inv;
                            xhat[r * d + j] = h;
                            out[r * d + j] = gm[j] * h + bt[j];
                        }
                    }
                })
            })
        });
        let pg = gamma.clone();
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                let mut dx = vec![0.0; rows * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                pg.with_data(|gm| {
                    for r in 0..rows {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_h = 0.0;
                        for j in 0..d {
                            dgamma[j] += grow[j] * hrow[j];
                            dbeta[j] += grow[j];
                            let dh = grow[j] * gm[j];
                            mean_dxhat += dh;
                            mean_dxhat_h += dh * hrow[j];
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_h /= d as f64;
                        let inv = inv_std[r];
                        for j in 0..d {
                            let dh = grow[j] * gm[j];
                            dx[r * d + j] = inv * (dh - mean_dxhat - hrow[j] * mean_dxhat_h);
                        }
                    }
                });
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            },
        ))
    }

    /// Gather rows of an embedding table `[V, D]` by id; output `[ids.len, D]`.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embed",
                lhs: shape,
                rhs: vec![ids.len()],
            });
        }
        let (v, d) = (shape[0], shape[1]);
        for &id in ids {
            if id >= v {
                return Err(Error::InvalidInput(format!(
                    "token id {id} out of range for vocabulary of {v}"
                )));
            }
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        self.with_data(|table| {
            for &id in ids {
                out.extend_from_slice(&table[id * d..(id + 1) * d]);
            }
        });
        let ids_bw: Vec<usize> = ids.to_vec();
        Ok(Tensor::from_op(
            out,
            vec![ids.len(), d],
            vec![self.clone()],
            move |g| {
                let mut dt = vec![0.0; v * d];
                for (row, &id) in ids_bw.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[row * d + j];
                    }
                }
                vec![Some(dt)]
            },
        ))
    }

    /// Label-smoothed cross-entropy over logits `[N, V]`, mean over rows with
    /// `mask[i] == true`. The smoothing mass `eps` is spread uniformly over
    /// the full vocabulary.
    pub fn cross_entropy_label_smoothed(
        &self,
        targets: &[usize],
        mask: &[bool],
        eps: f64,
    ) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 || targets.len() != shape[0] || mask.len() != shape[0] {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Usage(format!(
                "label smoothing must be in [0,1), got {eps}"
            )));
        }
        let (n, v) = (shape[0], shape[1]);
        for (i, &t) in targets.iter().enumerate() {
            if mask[i] && t >= v {
                return Err(Error::InvalidInput(format!(
                    "target id {t} out of range for vocabulary of {v}"
                )));
            }
        }
        let n_active = mask.iter().filter(|m| **m).count();
        if n_active == 0 {
            return Err(Error::Usage("cross-entropy over an all-padding batch".into()));
        }
        let mut total = 0.0;
        self.with_data(|z| {
            for i in 0..n {
                if !mask[i] {
                    continue;
                }
                let row = &z[i * v..(i + 1) * v];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln() + mx;
                let zsum = row.iter().sum::<f64>();
                total += lse - (1.0 - eps) * row[targets[i]] - eps / v as f64 * zsum;
            }
        });
        let loss = total / n_active as f64;
        let p = self.clone();
        let targets_bw = targets.to_vec();
        let mask_bw = mask.to_vec();
        Ok(Tensor::from_op(
            vec![loss],
            vec![],
            vec![self.clone()],
            move |g| {
                let scale = g[0] / n_active as f64;
                let mut dz = vec![0.0; n * v];
                p.with_data(|z| {
                    for i in 0..n {
                        if !mask_bw[i] {
                            continue;
                        }
                        let row = &z[i * v..(i + 1) * v];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut exps: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for e in exps.iter_mut() {
                            *e /= sum;
                        }
                        for j in 0..v {
                            let q = eps / v as f64
                                + if j == targets_bw[i] { 1.0 - eps } else { 0.0 };
                            dz[i * v + j] = scale * (exps[j] - q);
                        }
                    }
                });
                vec![Some(dz)]
            },
        ))
    }
}
