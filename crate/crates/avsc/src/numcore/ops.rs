//! Tensor operations recorded on the tape, each with its vector-Jacobian rule.

use super::tape::{Tape, TensorId};
use crate::error::{Error, Result};

/// Numerically stable logistic sigmoid.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    /// Matrix product `[m×k]·[k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.mat_dims(a, "matmul lhs")?;
        let (k2, n) = self.mat_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape("matmul inner dims", self.shape(a), self.shape(b)));
        }
        let ad = self.data(a).to_vec();
        let bd = self.data(b).to_vec();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += av * bd[p * n + j];
                }
            }
        }
        Ok(self.push(
            vec![m, n],
            out,
            vec![a, b],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bd[p * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                for p in 0..k {
                    for i in 0..m {
                        let av = ad[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += av * g[i * n + j];
                        }
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.data(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let s = out.clone();
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            out,
            vec![x],
            Box::new(move |g| {
                vec![g.iter().zip(&s).map(|(&gi, &si)| gi * si * (1.0 - si)).collect()]
            }),
        )
    }

    /// Row-wise softmax of a matrix, computed with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = self.mat_dims(x, "softmax_rows")?;
        let xd = self.data(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let s = out.clone();
        Ok(self.push(
            vec![m, n],
            out,
            vec![x],
            Box::new(move |g| {
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    let dot: f64 = (0..n).map(|j| g[i * n + j] * s[i * n + j]).sum();
                    for j in 0..n {
                        gx[i * n + j] = s[i * n + j] * (g[i * n + j] - dot);
                    }
                }
                vec![gx]
            }),
        ))
    }

    fn binary_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        name: &str,
        fwd: impl Fn(f64, f64) -> f64,
        grad_a: f64,
        grad_b: f64,
    ) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| fwd(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    g.iter().map(|&gi| gi * grad_a).collect(),
                    g.iter().map(|&gi| gi * grad_b).collect(),
                ]
            }),
        ))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, 1.0, 1.0)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, 1.0, -1.0)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let ad = self.data(a).to_vec();
        let bd = self.data(b).to_vec();
        let out: Vec<f64> = ad.iter().zip(&bd).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    g.iter().zip(&bd).map(|(&gi, &y)| gi * y).collect(),
                    g.iter().zip(&ad).map(|(&gi, &x)| gi * x).collect(),
                ]
            }),
        ))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let xd = self.data(x).to_vec();
        let out: Vec<f64> = xd.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            out,
            vec![x],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&xd)
                    .map(|(&gi, &v)| if v > 0.0 { gi } else { 0.0 })
                    .collect()]
            }),
        )
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v.exp()).collect();
        let e = out.clone();
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            out,
            vec![x],
            Box::new(move |g| vec![g.iter().zip(&e).map(|(&gi, &ei)| gi * ei).collect()]),
        )
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let xd = self.data(x).to_vec();
        let out: Vec<f64> = xd
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            out,
            vec![x],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&xd)
                    .map(|(&gi, &v)| {
                        let u = C * (v + A * v * v * v);
                        let t = u.tanh();
                        let du = C * (1.0 + 3.0 * A * v * v);
                        gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect()]
            }),
        )
    }

    /// Natural log; every entry must be strictly positive.
    pub fn ln(&mut self, x: TensorId) -> Result<TensorId> {
        let xd = self.data(x).to_vec();
        if let Some(bad) = xd.iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("ln of non-positive value {bad}")));
        }
        let out: Vec<f64> = xd.iter().map(|&v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            vec![x],
            Box::new(move |g| vec![g.iter().zip(&xd).map(|(&gi, &v)| gi / v).collect()]),
        ))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            out,
            vec![x],
            Box::new(move |g| vec![g.iter().map(|&gi| gi * c).collect()]),
        )
    }

    /// Clamps entries to `[lo, hi]`; gradient passes through the interior only.
    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> TensorId {
        let xd = self.data(x).to_vec();
        let out: Vec<f64> = xd.iter().map(|&v| v.clamp(lo, hi)).collect();
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            out,
            vec![x],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&xd)
                    .map(|(&gi, &v)| if v > lo && v < hi { gi } else { 0.0 })
                    .collect()]
            }),
        )
    }

    /// Mean over all entries, as a `[1,1]` scalar.
    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.data(x).len();
        let mean = self.data(x).iter().sum::<f64>() / n as f64;
        self.push(
            vec![1, 1],
            vec![mean],
            vec![x],
            Box::new(move |g| vec![vec![g[0] / n as f64; n]]),
        )
    }

    /// Sum over all entries, as a `[1,1]` scalar.
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let n = self.data(x).len();
        let sum = self.data(x).iter().sum::<f64>();
        self.push(
            vec![1, 1],
            vec![sum],
            vec![x],
            Box::new(move |g| vec![vec![g[0]; n]]),
        )
    }

    /// Column-wise mean of a matrix: `[m×n] -> [1×n]`.
    pub fn mean_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = self.mat_dims(x, "mean_rows")?;
        let xd = self.data(x);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xd[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        Ok(self.push(
            vec![1, n],
            out,
            vec![x],
            Box::new(move |g| {
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g[j] / m as f64;
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Row-wise mean of a matrix: `[m×n] -> [m×1]`.
    pub fn mean_cols(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = self.mat_dims(x, "mean_cols")?;
        let xd = self.data(x);
        let out: Vec<f64> = (0..m)
            .map(|i| xd[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        Ok(self.push(
            vec![m, 1],
            out,
            vec![x],
            Box::new(move |g| {
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g[i] / n as f64;
                    }
                }
                vec![gx]
            }),
        ))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = self.mat_dims(x, "transpose")?;
        let xd = self.data(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xd[i * n + j];
            }
        }
        Ok(self.push(
            vec![n, m],
            out,
            vec![x],
            Box::new(move |g| {
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g[j * m + i];
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Concatenation of matrices along rows (`axis=0`) or columns (`axis=1`).
    pub fn concat(&mut self, axis: usize, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::Contract(format!(
                "concat needs at least one input and axis 0 or 1, got {} inputs axis {axis}",
                parts.len()
            )));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.mat_dims(p, "concat"))
            .collect::<Result<_>>()?;
        let (m0, n0) = dims[0];
        for (i, &(m, n)) in dims.iter().enumerate() {
            let ok = if axis == 0 { n == n0 } else { m == m0 };
            if !ok {
                return Err(Error::shape(
                    "concat trailing dims",
                    &[m0, n0],
                    self.shape(parts[i]),
                ));
            }
        }
        let (out_m, out_n) = if axis == 0 {
            (dims.iter().map(|d| d.0).sum(), n0)
        } else {
            (m0, dims.iter().map(|d| d.1).sum())
        };
        let mut out = vec![0.0; out_m * out_n];
        if axis == 0 {
            let mut row = 0;
            for (&p, &(m, n)) in parts.iter().zip(&dims) {
                out[row * out_n..(row + m) * out_n].copy_from_slice(self.data(p));
                let _ = n;
                row += m;
            }
        } else {
            let mut col = 0;
            for (&p, &(_, n)) in parts.iter().zip(&dims) {
                let pd = self.data(p);
                for i in 0..out_m {
                    out[i * out_n + col..i * out_n + col + n]
                        .copy_from_slice(&pd[i * n..(i + 1) * n]);
                }
                col += n;
            }
        }
        let dims_c = dims.clone();
        Ok(self.push(
            vec![out_m, out_n],
            out,
            parts.to_vec(),
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(dims_c.len());
                if axis == 0 {
                    let mut row = 0;
                    for &(m, n) in &dims_c {
                        grads.push(g[row * out_n..(row + m) * out_n].to_vec());
                        let _ = n;
                        row += m;
                    }
                } else {
                    let mut col = 0;
                    for &(_, n) in &dims_c {
                        let mut part = vec![0.0; out_m * n];
                        for i in 0..out_m {
                            part[i * n..(i + 1) * n]
                                .copy_from_slice(&g[i * out_n + col..i * out_n + col + n]);
                        }
                        grads.push(part);
                        col += n;
                    }
                }
                grads
            }),
        ))
    }

    /// Selects rows by index; gradients route only into the selected rows.
    pub fn row_select(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (m, n) = self.mat_dims(x, "row_select")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Contract(format!(
                "row_select index {bad} out of range for {m} rows"
            )));
        }
        let xd = self.data(x);
        let k = indices.len();
        let mut out = vec![0.0; k * n];
        for (r, &i) in indices.iter().enumerate() {
            out[r * n..(r + 1) * n].copy_from_slice(&xd[i * n..(i + 1) * n]);
        }
        let idx = indices.to_vec();
        Ok(self.push(
            vec![k, n],
            out,
            vec![x],
            Box::new(move |g| {
                let mut gx = vec![0.0; m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        gx[i * n + j] += g[r * n + j];
                    }
                }
                vec![gx]
            }),
        ))
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        if shape.iter().product::<usize>() != self.data(x).len() {
            return Err(Error::shape("reshape element count", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        Ok(self.push(
            shape.to_vec(),
            out,
            vec![x],
            Box::new(move |g| vec![g.to_vec()]),
        ))
    }

    /// Adds a `[1×n]` row vector to every row of `[m×n]`.
    pub fn add_row(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, n) = self.mat_dims(x, "add_row lhs")?;
        let (bm, bn) = self.mat_dims(b, "add_row bias")?;
        if bm != 1 || bn != n {
            return Err(Error::shape("add_row bias", self.shape(x), self.shape(b)));
        }
        let bd = self.data(b).to_vec();
        let xd = self.data(x);
        let out: Vec<f64> = (0..m * n).map(|i| xd[i] + bd[i % n]).collect();
        Ok(self.push(
            vec![m, n],
            out,
            vec![x, b],
            Box::new(move |g| {
                let mut gb = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        gb[j] += g[i * n + j];
                    }
                }
                vec![g.to_vec(), gb]
            }),
        ))
    }

    /// Adds a `[m×1]` column vector to every column of `[m×n]`.
    pub fn add_col(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, n) = self.mat_dims(x, "add_col lhs")?;
        let (bm, bn) = self.mat_dims(b, "add_col bias")?;
        if bm != m || bn != 1 {
            return Err(Error::shape("add_col bias", self.shape(x), self.shape(b)));
        }
        let bd = self.data(b).to_vec();
        let xd = self.data(x);
        let out: Vec<f64> = (0..m * n).map(|i| xd[i] + bd[i / n]).collect();
        Ok(self.push(
            vec![m, n],
            out,
            vec![x, b],
            Box::new(move |g| {
                let gb: Vec<f64> = (0..m)
                    .map(|i| g[i * n..(i + 1) * n].iter().sum())
                    .collect();
                vec![g.to_vec(), gb]
            }),
        ))
    }

    /// Depthwise 2-D correlation with zero 'same' padding.
    /// `x: [C,H,W]`, `kernel: [C,kh,kw]` with odd kh, kw.
    pub fn depthwise_conv2d(&mut self, x: TensorId, kernel: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 3 || xs[0] != ks[0] || ks[1] % 2 == 0 || ks[2] % 2 == 0 {
            return Err(Error::shape("depthwise_conv2d", &xs, &ks));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (kh, kw) = (ks[1], ks[2]);
        let (ph, pw) = (kh / 2, kw / 2);
        let xd = self.data(x).to_vec();
        let kd = self.data(kernel).to_vec();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for u in 0..kh {
                        let xi = i + u;
                        if xi < ph || xi - ph >= h {
                            continue;
                        }
                        for v in 0..kw {
                            let xj = j + v;
                            if xj < pw || xj - pw >= w {
                                continue;
                            }
                            acc += xd[ch * h * w + (xi - ph) * w + (xj - pw)]
                                * kd[ch * kh * kw + u * kw + v];
                        }
                    }
                    out[ch * h * w + i * w + j] = acc;
                }
            }
        }
        Ok(self.push(
            vec![c, h, w],
            out,
            vec![x, kernel],
            Box::new(move |g| {
                let mut gx = vec![0.0; c * h * w];
                let mut gk = vec![0.0; c * kh * kw];
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            let go = g[ch * h * w + i * w + j];
                            if go == 0.0 {
                                continue;
                            }
                            for u in 0..kh {
                                let xi = i + u;
                                if xi < ph || xi - ph >= h {
                                    continue;
                                }
                                for v in 0..kw {
                                    let xj = j + v;
                                    if xj < pw || xj - pw >= w {
                                        continue;
                                    }
                                    gx[ch * h * w + (xi - ph) * w + (xj - pw)] +=
                                        go * kd[ch * kh * kw + u * kw + v];
                                    gk[ch * kh * kw + u * kw + v] +=
                                        go * xd[ch * h * w + (xi - ph) * w + (xj - pw)];
                                }
                            }
                        }
                    }
                }
                vec![gx, gk]
            }),
        ))
    }

    /// 2×2 average pooling with stride 2 on `[C,H,W]`; H and W must be even.
    pub fn avg_pool2(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0 {
            return Err(Error::shape("avg_pool2 needs [C,2a,2b]", &xs, &[]));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.data(x);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let base = ch * h * w + 2 * i * w + 2 * j;
                    out[ch * oh * ow + i * ow + j] =
                        0.25 * (xd[base] + xd[base + 1] + xd[base + w] + xd[base + w + 1]);
                }
            }
        }
        Ok(self.push(
            vec![c, oh, ow],
            out,
            vec![x],
            Box::new(move |g| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let go = 0.25 * g[ch * oh * ow + i * ow + j];
                            let base = ch * h * w + 2 * i * w + 2 * j;
                            gx[base] += go;
                            gx[base + 1] += go;
                            gx[base + w] += go;
                            gx[base + w + 1] += go;
                        }
                    }
                }
                vec![gx]
            }),
        ))
    }
}
