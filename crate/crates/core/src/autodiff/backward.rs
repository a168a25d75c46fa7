use super::ops::ConvGeometry;
use super::{Node, Op, Tape, Var};
use crate::tensor::{mm, mm_nt, mm_tn};

/// Vector-Jacobian products of one node: `(input, d loss / d input)` pairs.
pub(super) fn propagate(tape: &Tape, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: Var| tape.value(v).data();
    let shape = |v: Var| tape.shape(v);
    let wants = |v: Var| tape.requires_grad(v);
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b) => {
            let (m, k) = (shape(*a)[0], shape(*a)[1]);
            let n = shape(*b)[1];
            let mut out = Vec::new();
            if wants(*a) {
                out.push((*a, mm_nt(g, val(*b), m, n, k)));
            }
            if wants(*b) {
                out.push((*b, mm_tn(val(*a), g, m, k, n)));
            }
            out
        }
        Op::BatchMatMul { a, b, transpose_b } => {
            let sa = shape(*a);
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = node.value.shape()[2];
            let (ad, bd) = (val(*a), val(*b));
            let mut ga = Vec::with_capacity(ad.len());
            let mut gb = Vec::with_capacity(bd.len());
            for s in 0..batch {
                let gs = &g[s * m * n..(s + 1) * m * n];
                let a_blk = &ad[s * m * k..(s + 1) * m * k];
                let b_blk = &bd[s * k * n..(s + 1) * k * n];
                if *transpose_b {
                    // y = a · bᵀ, b is [n,k]
                    ga.extend(mm(gs, b_blk, m, n, k));
                    gb.extend(mm_tn(gs, a_blk, m, n, k));
                } else {
                    ga.extend(mm_nt(gs, b_blk, m, n, k));
                    gb.extend(mm_tn(a_blk, gs, m, k, n));
                }
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::SharedLeftMatMul { a, x } => {
            let (m, k) = (shape(*a)[0], shape(*a)[1]);
            let (batch, n) = (shape(*x)[0], shape(*x)[2]);
            let (ad, xd) = (val(*a), val(*x));
            let mut ga = vec![0.0; m * k];
            let mut gx = Vec::with_capacity(xd.len());
            for s in 0..batch {
                let gs = &g[s * m * n..(s + 1) * m * n];
                let xs = &xd[s * k * n..(s + 1) * k * n];
                mm_nt(gs, xs, m, n, k)
                    .iter()
                    .zip(ga.iter_mut())
                    .for_each(|(c, acc)| *acc += c);
                gx.extend(mm_tn(ad, gs, m, k, n));
            }
            vec![(*a, ga), (*x, gx)]
        }
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a), val(*b));
            vec![
                (*a, g.iter().zip(bd).map(|(x, y)| x * y).collect()),
                (*b, g.iter().zip(ad).map(|(x, y)| x * y).collect()),
            ]
        }
        Op::Maximum(a, b) => {
            let (ad, bd) = (val(*a), val(*b));
            let to_a = g
                .iter()
                .zip(ad.iter().zip(bd))
                .map(|(gv, (x, y))| if x >= y { *gv } else { 0.0 });
            let to_b = g
                .iter()
                .zip(ad.iter().zip(bd))
                .map(|(gv, (x, y))| if x >= y { 0.0 } else { *gv });
            vec![(*a, to_a.collect()), (*b, to_b.collect())]
        }
        Op::Scale(a, factor) => vec![(*a, g.iter().map(|v| v * factor).collect())],
        Op::AddBias(x, b) => {
            let n = shape(*b)[0];
            let mut gb = vec![0.0; n];
            for row in g.chunks(n) {
                gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
            }
            vec![(*x, g.to_vec()), (*b, gb)]
        }
        Op::Relu(x) => {
            let xd = val(*x);
            vec![(
                *x,
                g.iter()
                    .zip(xd)
                    .map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )]
        }
        Op::Abs(x) => {
            let xd = val(*x);
            let d = g.iter().zip(xd).map(|(gv, &v)| {
                if v > 0.0 {
                    *gv
                } else if v < 0.0 {
                    -gv
                } else {
                    0.0
                }
            });
            vec![(*x, d.collect())]
        }
        Op::SoftmaxLast(x) => {
            let y = node.value.data();
            let n = *node.value.shape().last().unwrap();
            let mut gx = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks(n).zip(g.chunks(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
            }
            vec![(*x, gx)]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::MeanMiddle {
            x,
            outer,
            middle,
            inner,
        } => {
            let mut gx = Vec::with_capacity(outer * middle * inner);
            let scale = 1.0 / *middle as f64;
            for o in 0..*outer {
                let go = &g[o * inner..(o + 1) * inner];
                for _ in 0..*middle {
                    gx.extend(go.iter().map(|v| v * scale));
                }
            }
            vec![(*x, gx)]
        }
        Op::ConcatLast(parts) => {
            let rows = node.value.shape()[0];
            let total = node.value.shape()[1];
            let mut offset = 0;
            let mut out = Vec::with_capacity(parts.len());
            for &p in parts {
                let w = shape(p)[1];
                let mut gp = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                }
                offset += w;
                out.push((p, gp));
            }
            out
        }
        Op::SumAll(x) => vec![(*x, vec![g[0]; tape.value(*x).len()])],
        Op::SumPerRow(x) => {
            let inner = tape.value(*x).len() / g.len().max(1);
            vec![(
                *x,
                g.iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv, inner))
                    .collect(),
            )]
        }
        Op::NormalizeMass(s) => {
            let n = node.value.shape()[1];
            let (sd, wd) = (val(*s), node.value.data());
            let mut gs = Vec::with_capacity(sd.len());
            for ((sr, wr), gr) in sd.chunks(n).zip(wd.chunks(n)).zip(g.chunks(n)) {
                let total: f64 = sr.iter().sum();
                if total.abs() < super::MASS_FLOOR {
                    gs.extend(std::iter::repeat_n(0.0, n));
                    continue;
                }
                let dot: f64 = wr.iter().zip(gr).map(|(a, b)| a * b).sum();
                gs.extend(gr.iter().map(|gv| (gv - dot) / total));
            }
            vec![(*s, gs)]
        }
        Op::CrossEntropy {
            logits,
            classes,
            probs,
        } => {
            let c = shape(*logits)[1];
            let scale = g[0] / classes.len() as f64;
            let mut gl = probs.clone();
            for (row, &k) in gl.chunks_mut(c).zip(classes) {
                row[k] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![(*logits, gl)]
        }
        Op::Conv2d { x, w, b } => conv_backward(tape, node, *x, *w, *b, g),
        Op::MaxPool2 { x, argmax } => {
            let mut gx = vec![0.0; tape.value(*x).len()];
            for (&idx, gv) in argmax.iter().zip(g) {
                gx[idx] += gv;
            }
            vec![(*x, gx)]
        }
        Op::Gather { table, ids } => {
            let d = shape(*table)[1];
            let mut gt = vec![0.0; tape.value(*table).len()];
            for (r, &i) in ids.iter().enumerate() {
                gt[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&g[r * d..(r + 1) * d])
                    .for_each(|(acc, v)| *acc += v);
            }
            vec![(*table, gt)]
        }
    }
}

fn conv_backward(
    tape: &Tape,
    node: &Node,
    x: Var,
    w: Var,
    b: Var,
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let geo = ConvGeometry::new(tape.shape(x), tape.shape(w));
    let (h, wd, k, pad) = (geo.h, geo.w, geo.k, geo.k / 2);
    let plane = h * wd;
    let (xd, wdat) = (tape.value(x).data(), tape.value(w).data());
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wdat.len()];
    let mut gb = vec![0.0; geo.c_out];
    debug_assert_eq!(node.value.len(), g.len());
    for s in 0..geo.batch {
        for co in 0..geo.c_out {
            let go = &g[(s * geo.c_out + co) * plane..(s * geo.c_out + co + 1) * plane];
            gb[co] += go.iter().sum::<f64>();
            for ci in 0..geo.c_in {
                let base = (s * geo.c_in + ci) * plane;
                for ky in 0..k {
                    let (y0, y1) = geo.valid(ky, h);
                    for kx in 0..k {
                        let widx = ((co * geo.c_in + ci) * k + ky) * k + kx;
                        let wv = wdat[widx];
                        let (x0, x1) = geo.valid(kx, wd);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = y + ky - pad;
                            let g_row = &go[y * wd + x0..y * wd + x1];
                            let src = base + iy * wd + x0 + kx - pad;
                            let x_row = &xd[src..src + (x1 - x0)];
                            acc += g_row.iter().zip(x_row).map(|(a, c)| a * c).sum::<f64>();
                            gx[src..src + (x1 - x0)]
                                .iter_mut()
                                .zip(g_row)
                                .for_each(|(d, gv)| *d += wv * gv);
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    vec![(x, gx), (w, gw), (b, gb)]
}
