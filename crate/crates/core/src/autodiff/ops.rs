use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{mm, mm_nt, Tensor};

/// Denominators with magnitude below this fall back to uniform weights.
pub const MASS_FLOOR: f64 = 1e-9;

impl Tape {
    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push_op(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// Batched product `a[B,m,k] · b[B,k,n]`, or `a · bᵀ` with `b[B,n,k]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(Error::shape("batch_matmul", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * m * n);
        for s in 0..batch {
            let a_blk = &ad[s * m * k..(s + 1) * m * k];
            let b_blk = &bd[s * k * n..(s + 1) * k * n];
            if transpose_b {
                out.extend(mm_nt(a_blk, b_blk, m, k, n));
            } else {
                out.extend(mm(a_blk, b_blk, m, k, n));
            }
        }
        Ok(self.push_op(
            Tensor::from_parts(vec![batch, m, n], out),
            Op::BatchMatMul { a, b, transpose_b },
        ))
    }

    /// `a[m,k] · x[s]` for every batch slice `x[s]` of `x[B,k,n]`.
    pub fn shared_left_matmul(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a), self.shape(x));
        if sa.len() != 2 || sx.len() != 3 || sa[1] != sx[1] {
            return Err(Error::shape("shared_left_matmul", sa, sx));
        }
        let (m, k, batch, n) = (sa[0], sa[1], sx[0], sx[2]);
        let (ad, xd) = (self.value(a).data(), self.value(x).data());
        let mut out = Vec::with_capacity(batch * m * n);
        for s in 0..batch {
            out.extend(mm(ad, &xd[s * k * n..(s + 1) * k * n], m, k, n));
        }
        Ok(self.push_op(
            Tensor::from_parts(vec![batch, m, n], out),
            Op::SharedLeftMatMul { a, x },
        ))
    }

    /// Multiplies the last axis of `x[..., k]` by `w[k,n]` and adds `bias[n]` if given.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let k = *sx.last().ok_or_else(|| Error::shape("linear", &sx, &sw))?;
        let rows = sx.iter().product::<usize>() / k.max(1);
        let flat = if sx.len() == 2 {
            x
        } else {
            self.reshape(x, &[rows, k])?
        };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = bias {
            y = self.add_bias(y, b)?;
        }
        if sx.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = sx;
        *out_shape.last_mut().unwrap() = sw[1];
        self.reshape(y, &out_shape)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push_op(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push_op(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push_op(v, Op::Mul(a, b)))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        let v = self.zip_with(a, b, f64::max);
        Ok(self.push_op(v, Op::Maximum(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.push_op(v, Op::Scale(a, factor))
    }

    /// Adds `bias[n]` to every length-`n` row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let n = sb[0];
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(o, bv)| *o += bv);
        }
        Ok(self.push_op(v, Op::AddBias(x, bias)))
    }

    /// Elementwise `max(0, x)`.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| if e > 0.0 { e } else { 0.0 });
        self.push_op(v, Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::abs);
        self.push_op(v, Op::Abs(x))
    }

    /// Softmax over the last axis, stabilized by subtracting each row's max.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| Error::shape("softmax", &shape, &[]))?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        Ok(self.push_op(Tensor::from_parts(shape, data), Op::SoftmaxLast(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push_op(v, Op::Reshape(x)))
    }

    /// Mean over axis 1 of `x[B, m, ...]`, giving `x[B, ...]`.
    pub fn mean_axis1(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[1] == 0 {
            return Err(Error::shape("mean_axis1", &shape, &[]));
        }
        let (outer, middle) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for m in 0..middle {
                let base = (o * middle + m) * inner;
                dst.iter_mut()
                    .zip(&src[base..base + inner])
                    .for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= middle as f64);
        }
        let mut out_shape = vec![outer];
        out_shape.extend_from_slice(&shape[2..]);
        Ok(self.push_op(
            Tensor::from_parts(out_shape, out),
            Op::MeanMiddle {
                x,
                outer,
                middle,
                inner,
            },
        ))
    }

    /// Concatenates `[B, d_i]` matrices along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.shape(*first)[0];
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape("concat_last", self.shape(*first), s));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p)[1]).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push_op(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatLast(parts.to_vec()),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_op(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Sums every trailing axis of `x[B, ...]`, giving `[B, 1]`.
    pub fn sum_per_row(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = *shape
            .first()
            .ok_or_else(|| Error::shape("sum_per_row", &shape, &[]))?;
        let inner = self.value(x).len() / rows.max(1);
        let out = self
            .value(x)
            .data()
            .chunks(inner.max(1))
            .map(|c| c.iter().sum())
            .collect();
        Ok(self.push_op(Tensor::from_parts(vec![rows, 1], out), Op::SumPerRow(x)))
    }

    /// Normalizes each row of `s[B, N]` to sum to one. Rows whose sum has
    /// magnitude below [`MASS_FLOOR`] become uniform and pass no gradient.
    pub fn normalize_mass(&mut self, s: Var) -> Result<Var> {
        let shape = self.shape(s).to_vec();
        if shape.len() != 2 || shape[1] == 0 {
            return Err(Error::shape("normalize_mass", &shape, &[]));
        }
        let n = shape[1];
        let mut data = self.value(s).data().to_vec();
        for row in data.chunks_mut(n) {
            normalize_row(row);
        }
        Ok(self.push_op(Tensor::from_parts(shape, data), Op::NormalizeMass(s)))
    }

    /// Mean cross-entropy of `logits[B, C]` against one-hot `labels[B, C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &Tensor) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || labels.shape() != sl.as_slice() {
            return Err(Error::shape("cross_entropy", &sl, labels.shape()));
        }
        let classes = one_hot_classes(labels)?;
        self.cross_entropy_indices(logits, &classes)
    }

    /// Cross-entropy with labels given as class indices.
    pub fn cross_entropy_indices(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != classes.len() || sl[0] == 0 {
            return Err(Error::shape("cross_entropy", &sl, &[classes.len()]));
        }
        let c = sl[1];
        if let Some(bad) = classes.iter().find(|&&k| k >= c) {
            return Err(Error::Validation(format!(
                "class {bad} out of range for {c} logits"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &k) in probs.chunks_mut(c).zip(classes) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[k];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        loss /= classes.len() as f64;
        Ok(self.push_op(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                classes: classes.to_vec(),
                probs,
            },
        ))
    }

    /// Same-padded, stride-1 convolution of `x[B,Cin,H,W]` with
    /// `w[Cout,Cin,K,K]` (odd `K`) plus `b[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let ok = sx.len() == 4
            && sw.len() == 4
            && sw[1] == sx[1]
            && sw[2] == sw[3]
            && sw[2] % 2 == 1
            && sb == [sw[0]];
        if !ok {
            return Err(Error::shape("conv2d", sx, sw));
        }
        let geo = ConvGeometry::new(sx, sw);
        let out = conv_forward(
            &geo,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        Ok(self.push_op(
            Tensor::from_parts(vec![geo.batch, geo.c_out, geo.h, geo.w], out),
            Op::Conv2d { x, w, b },
        ))
    }

    /// 2×2 max pooling with stride 2 over `x[B,C,H,W]`; `H` and `W` must be even.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::shape("max_pool2", &s, &[2, 2]));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push_op(
            Tensor::from_parts(vec![s[0], s[1], oh, ow], out),
            Op::MaxPool2 { x, argmax },
        ))
    }

    /// Rows of `table[V, d]` selected by `ids`, giving `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("gather_rows", &s, &[]));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= s[0]) {
            return Err(Error::Validation(format!(
                "row id {bad} outside table of {} rows",
                s[0]
            )));
        }
        let d = s[1];
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push_op(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn normalize_row(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    // equal masses give exactly uniform weights rather than m / (n·m)
    if total.abs() < MASS_FLOOR || row.iter().all(|&v| v == row[0]) {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
    } else {
        row.iter_mut().for_each(|v| *v /= total);
    }
}

/// Class index of every row of a one-hot matrix.
pub fn one_hot_classes(labels: &Tensor) -> Result<Vec<usize>> {
    if labels.rank() != 2 {
        return Err(Error::Validation(format!(
            "labels must be a matrix, got {:?}",
            labels.shape()
        )));
    }
    let c = labels.shape()[1];
    (0..labels.shape()[0])
        .map(|r| {
            let row = &labels.data()[r * c..(r + 1) * c];
            let ones: Vec<usize> = (0..c).filter(|&j| row[j] == 1.0).collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones.len() == 1 && zeros == c - 1 {
                Ok(ones[0])
            } else {
                Err(Error::Validation(format!(
                    "label row {r} is not one-hot: {row:?}"
                )))
            }
        })
        .collect()
}

pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeometry {
    pub fn new(sx: &[usize], sw: &[usize]) -> Self {
        Self {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            h: sx[2],
            w: sx[3],
            k: sw[2],
        }
    }

    /// For kernel offset `d` (0..k), the output range `lo..hi` whose input
    /// position `o + d - pad` stays in `0..len`.
    pub fn valid(&self, d: usize, len: usize) -> (usize, usize) {
        let pad = self.k / 2;
        let lo = pad.saturating_sub(d);
        let hi = (len + pad).saturating_sub(d).min(len);
        (lo, hi)
    }
}

fn conv_forward(g: &ConvGeometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (h, wd, k, pad) = (g.h, g.w, g.k, g.k / 2);
    let plane = h * wd;
    let mut out = vec![0.0; g.batch * g.c_out * plane];
    for s in 0..g.batch {
        for co in 0..g.c_out {
            let dst = &mut out[(s * g.c_out + co) * plane..(s * g.c_out + co + 1) * plane];
            dst.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..g.c_in {
                let src = &x[(s * g.c_in + ci) * plane..(s * g.c_in + ci + 1) * plane];
                for ky in 0..k {
                    let (y0, y1) = g.valid(ky, h);
                    for kx in 0..k {
                        let wv = w[((co * g.c_in + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = g.valid(kx, wd);
                        for y in y0..y1 {
                            let iy = y + ky - pad;
                            let d_row = &mut dst[y * wd + x0..y * wd + x1];
                            let s_row = &src[iy * wd + x0 + kx - pad..iy * wd + x1 + kx - pad];
                            d_row
                                .iter_mut()
                                .zip(s_row)
                                .for_each(|(d, sv)| *d += wv * sv);
                        }
                    }
                }
            }
        }
    }
    out
}
