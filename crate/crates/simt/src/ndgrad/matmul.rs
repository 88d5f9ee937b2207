//! Matrix products: plain 2-D, batched 3-D, and batched-by-shared variants.

use super::Tensor;
use crate::error::{Error, Result};

/// c[m,n] += a[m,k] * b[k,n], accumulating over p in ascending order.
/// The i-p-j loop keeps b row-contiguous in the inner loop.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// c[m,k] += g[m,n] * b[k,n]^T  (i.e. g times b-transpose).
fn matmul_nt_acc(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for (j, cj) in crow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = 0.0;
            for (gp, bp) in grow.iter().zip(brow) {
                s += gp * bp;
            }
            *cj += s;
        }
    }
}

/// c[k,n] += a[m,k]^T * g[m,n].
fn matmul_tn_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for p in 0..m {
        let arow = &a[p * k..(p + 1) * k];
        let grow = &g[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, gj) in crow.iter_mut().zip(grow) {
                *cj += api * gj;
            }
        }
    }
}

impl Tensor {
    /// Matrix product. Supported shapes:
    /// `[m,k] x [k,n]`, `[B,m,k] x [B,k,n]`, and `[B,m,k] x [k,n]`
    /// (shared right operand broadcast over the batch).
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: ls.clone(),
            rhs: rs.clone(),
        };
        match (ls.len(), rs.len()) {
            (2, 2) => {
                let (m, ka) = (ls[0], ls[1]);
                let (kb, n) = (rs[0], rs[1]);
                if ka != kb {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m * n];
                self.with_data(|a| rhs.with_data(|b| matmul_acc(a, b, m, ka, n, &mut out)));
                let (pa, pb) = (self.clone(), rhs.clone());
                Ok(Tensor::from_op(
                    out,
                    vec![m, n],
                    vec![self.clone(), rhs.clone()],
                    move |g| {
                        let mut da = vec![0.0; m * ka];
                        let mut db = vec![0.0; ka * n];
                        pb.with_data(|b| matmul_nt_acc(g, b, m, n, ka, &mut da));
                        pa.with_data(|a| matmul_tn_acc(a, g, m, ka, n, &mut db));
                        vec![Some(da), Some(db)]
                    },
                ))
            }
            (3, 3) => {
                let (bt, m, ka) = (ls[0], ls[1], ls[2]);
                let (bb, kb, n) = (rs[0], rs[1], rs[2]);
                if ka != kb || bt != bb {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; bt * m * n];
                self.with_data(|a| {
                    rhs.with_data(|b| {
                        for i in 0..bt {
                            matmul_acc(
                                &a[i * m * ka..(i + 1) * m * ka],
                                &b[i * ka * n..(i + 1) * ka * n],
                                m,
                                ka,
                                n,
                                &mut out[i * m * n..(i + 1) * m * n],
                            );
                        }
                    })
                });
                let (pa, pb) = (self.clone(), rhs.clone());
                Ok(Tensor::from_op(
                    out,
                    vec![bt, m, n],
                    vec![self.clone(), rhs.clone()],
                    move |g| {
                        let mut da = vec![0.0; bt * m * ka];
                        let mut db = vec![0.0; bt * ka * n];
                        pb.with_data(|b| {
                            for i in 0..bt {
                                matmul_nt_acc(
                                    &g[i * m * n..(i + 1) * m * n],
                                    &b[i * ka * n..(i + 1) * ka * n],
                                    m,
                                    n,
                                    ka,
                                    &mut da[i * m * ka..(i + 1) * m * ka],
                                );
                            }
                        });
                        pa.with_data(|a| {
                            for i in 0..bt {
                                matmul_tn_acc(
                                    &a[i * m * ka..(i + 1) * m * ka],
                                    &g[i * m * n..(i + 1) * m * n],
                                    m,
                                    ka,
                                    n,
                                    &mut db[i * ka * n..(i + 1) * ka * n],
                                );
                            }
                        });
                        vec![Some(da), Some(db)]
                    },
                ))
            }
            (3, 2) => {
                let (bt, m, ka) = (ls[0], ls[1], ls[2]);
                let (kb, n) = (rs[0], rs[1]);
                if ka != kb {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; bt * m * n];
                self.with_data(|a| {
                    rhs.with_data(|b| {
                        for i in 0..bt {
                            matmul_acc(
                                &a[i * m * ka..(i + 1) * m * ka],
                                b,
                                m,
                                ka,
                                n,
                                &mut out[i * m * n..(i + 1) * m * n],
                            );
                        }
                    })
                });
                let (pa, pb) = (self.clone(), rhs.clone());
                Ok(Tensor::from_op(
                    out,
                    vec![bt, m, n],
                    vec![self.clone(), rhs.clone()],
                    move |g| {
                        let mut da = vec![0.0; bt * m * ka];
                        let mut db = vec![0.0; ka * n];
                        pb.with_data(|b| {
                            for i in 0..bt {
                                matmul_nt_acc(
                                    &g[i * m * n..(i + 1) * m * n],
                                    b,
                                    m,
                                    n,
                                    ka,
                                    &mut da[i * m * ka..(i + 1) * m * ka],
                                );
                            }
                        });
                        pa.with_data(|a| {
                            for i in 0..bt {
                                matmul_tn_acc(
                                    &a[i * m * ka..(i + 1) * m * ka],
                                    &g[i * m * n..(i + 1) * m * n],
                                    m,
                                    ka,
                                    n,
                                    &mut db,
                                );
                            }
                        });
                        vec![Some(da), Some(db)]
                    },
                ))
            }
            _ => Err(mismatch()),
        }
    }
}
