use super::params::{idx, Params};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class order of logits and probabilities.
pub const STABLE: usize = 0;
pub const UNSTABLE: usize = 1;

/// C = alpha * op(A) * op(B) + beta * C, all row-major. `op(A)` is m×k and
/// `op(B)` is k×n; a transposed operand is stored in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand too short"
    );
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length checks above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_bias(z: &mut [f64], bias: &[f64], cols: usize) {
    for (row, &b) in z.chunks_mut(cols).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn row_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for (row, o) in m.chunks(cols).zip(out.iter_mut()) {
        *o += row.iter().sum::<f64>();
    }
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// `src` is [channels, B*T] (column b*T + t); the result is
/// [channels*k, B*T] with zero padding at both ends of every sequence.
fn im2col(src: &[f64], channels: usize, batch: usize, steps: usize, k: usize) -> Vec<f64> {
    let bt = batch * steps;
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; channels * k * bt];
    for c in 0..channels {
        for j in 0..k {
            let row = &mut cols[(c * k + j) * bt..(c * k + j + 1) * bt];
            let shift = j as isize - pad;
            for b in 0..batch {
                let s = &src[c * bt + b * steps..c * bt + (b + 1) * steps];
                for t in 0..steps {
                    let u = t as isize + shift;
                    if u >= 0 && (u as usize) < steps {
                        row[b * steps + t] = s[u as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], channels: usize, batch: usize, steps: usize, k: usize) -> Vec<f64> {
    let bt = batch * steps;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; channels * bt];
    for c in 0..channels {
        for j in 0..k {
            let row = &cols[(c * k + j) * bt..(c * k + j + 1) * bt];
            let shift = j as isize - pad;
            for b in 0..batch {
                for t in 0..steps {
                    let u = t as isize + shift;
                    if u >= 0 && (u as usize) < steps {
                        out[c * bt + b * steps + u as usize] += row[b * steps + t];
                    }
                }
            }
        }
    }
    out
}

/// One network input: a channel-major C×T window and the shed load.
#[derive(Debug, Clone, Copy)]
pub struct Input<'a> {
    pub x: &'a [f64],
    pub load_index: usize,
}

#[derive(Default)]
struct GruTrace {
    /// Hidden state before each processing step, then the final one.
    h: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    /// Recurrent candidate pre-activation W_hn h + b_hn.
    ghn: Vec<Vec<f64>>,
}

struct Trace {
    batch: usize,
    cols1: Vec<f64>,
    z1: Vec<f64>,
    cols2: Vec<f64>,
    z2: Vec<f64>,
    /// [F2, T'*B], column t*B + b.
    pooled: Vec<f64>,
    /// Which of the two pooled samples won.
    argmax: Vec<u8>,
    gru: [GruTrace; 2],
    load: Vec<f64>,
    ze: Vec<f64>,
    feat: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    m3: Option<Vec<f64>>,
    z4: Vec<f64>,
    a4: Vec<f64>,
    m4: Option<Vec<f64>>,
    logits: Vec<f64>,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Dropout applied while training.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
}

fn check_inputs(p: &Params, inputs: &[Input]) -> Result<()> {
    let a = &p.arch;
    for inp in inputs {
        if inp.x.len() != a.channels * a.steps {
            return Err(Error::Dimension {
                expected: a.channels * a.steps,
                got: inp.x.len(),
            });
        }
        if inp.load_index >= a.n_loads {
            return Err(Error::UnknownLoad(inp.load_index));
        }
    }
    Ok(())
}

fn forward_trace(p: &Params, inputs: &[Input], dropout: Option<Dropout>) -> Trace {
    let a = &p.arch;
    let (bsz, t, c) = (inputs.len(), a.steps, a.channels);
    let bt = bsz * t;
    let (f1, f2, h) = (a.conv1_filters, a.conv2_filters, a.hidden);

    let mut x = vec![0.0; c * bt];
    for (b, inp) in inputs.iter().enumerate() {
        for ch in 0..c {
            x[ch * bt + b * t..ch * bt + (b + 1) * t].copy_from_slice(&inp.x[ch * t..(ch + 1) * t]);
        }
    }
    let cols1 = im2col(&x, c, bsz, t, a.conv1_kernel);
    let mut z1 = vec![0.0; f1 * bt];
    gemm(
        false,
        false,
        f1,
        bt,
        c * a.conv1_kernel,
        1.0,
        p.tensor(idx::CONV1_W),
        &cols1,
        0.0,
        &mut z1,
    );
    add_bias(&mut z1, p.tensor(idx::CONV1_B), bt);
    let a1 = relu(&z1);

    let cols2 = im2col(&a1, f1, bsz, t, a.conv2_kernel);
    let mut z2 = vec![0.0; f2 * bt];
    gemm(
        false,
        false,
        f2,
        bt,
        f1 * a.conv2_kernel,
        1.0,
        p.tensor(idx::CONV2_W),
        &cols2,
        0.0,
        &mut z2,
    );
    add_bias(&mut z2, p.tensor(idx::CONV2_B), bt);
    let a2 = relu(&z2);

    let tp = a.pooled_steps();
    let tb = tp * bsz;
    let mut pooled = vec![0.0; f2 * tb];
    let mut argmax = vec![0u8; f2 * tb];
    for f in 0..f2 {
        for b in 0..bsz {
            for s in 0..tp {
                let base = f * bt + b * t + 2 * s;
                let (u, v) = (a2[base], a2[base + 1]);
                let o = f * tb + s * bsz + b;
                if v > u {
                    pooled[o] = v;
                    argmax[o] = 1;
                } else {
                    pooled[o] = u;
                }
            }
        }
    }

    let mut gru: [GruTrace; 2] = Default::default();
    for (d, tr) in gru.iter_mut().enumerate() {
        let base = idx::gru(d);
        let (w_ih, w_hh, b_ih, b_hh) = (
            p.tensor(base),
            p.tensor(base + 1),
            p.tensor(base + 2),
            p.tensor(base + 3),
        );
        let mut gi = vec![0.0; 3 * h * tb];
        gemm(
            false,
            false,
            3 * h,
            tb,
            f2,
            1.0,
            w_ih,
            &pooled,
            0.0,
            &mut gi,
        );
        add_bias(&mut gi, b_ih, tb);
        let mut hcur = vec![0.0; h * bsz];
        let mut gh = vec![0.0; 3 * h * bsz];
        for step in 0..tp {
            let s = if d == 0 { step } else { tp - 1 - step };
            gemm(false, false, 3 * h, bsz, h, 1.0, w_hh, &hcur, 0.0, &mut gh);
            add_bias(&mut gh, b_hh, bsz);
            let mut r = vec![0.0; h * bsz];
            let mut z = vec![0.0; h * bsz];
            let mut n = vec![0.0; h * bsz];
            let mut hn = vec![0.0; h * bsz];
            for j in 0..h {
                for b in 0..bsz {
                    let gi_at = |g: usize| gi[(g * h + j) * tb + s * bsz + b];
                    let k = j * bsz + b;
                    let rv = sigmoid(gi_at(0) + gh[k]);
                    let zv = sigmoid(gi_at(1) + gh[h * bsz + k]);
                    let nv = (gi_at(2) + rv * gh[2 * h * bsz + k]).tanh();
                    r[k] = rv;
                    z[k] = zv;
                    n[k] = nv;
                    hn[k] = (1.0 - zv) * nv + zv * hcur[k];
                }
            }
            tr.ghn.push(gh[2 * h * bsz..].to_vec());
            tr.h.push(std::mem::replace(&mut hcur, hn));
            tr.r.push(r);
            tr.z.push(z);
            tr.n.push(n);
        }
        tr.h.push(hcur);
    }

    let e = a.embed;
    let scale = if a.n_loads > 1 {
        (a.n_loads - 1) as f64
    } else {
        1.0
    };
    let load: Vec<f64> = inputs.iter().map(|i| i.load_index as f64 / scale).collect();
    let mut ze = vec![0.0; e * bsz];
    gemm(
        false,
        false,
        e,
        bsz,
        1,
        1.0,
        p.tensor(idx::EMBED_W),
        &load,
        0.0,
        &mut ze,
    );
    add_bias(&mut ze, p.tensor(idx::EMBED_B), bsz);

    let fw = a.feature_width();
    let mut feat = Vec::with_capacity(fw * bsz);
    feat.extend_from_slice(gru[0].h.last().expect("final state"));
    feat.extend_from_slice(gru[1].h.last().expect("final state"));
    feat.extend(ze.iter().map(|v| v.max(0.0)));

    let mut rng = dropout.map(|d| ChaCha8Rng::seed_from_u64(d.seed));
    let mut dense = |w: usize, bias: usize, rows: usize, k: usize, input: &[f64]| {
        let mut z = vec![0.0; rows * bsz];
        gemm(
            false,
            false,
            rows,
            bsz,
            k,
            1.0,
            p.tensor(w),
            input,
            0.0,
            &mut z,
        );
        add_bias(&mut z, p.tensor(bias), bsz);
        let mut act = relu(&z);
        let mask = match (&mut rng, dropout) {
            (Some(rng), Some(d)) if d.p > 0.0 => {
                let m = dropout_mask(rows, bsz, d.p, rng);
                act.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                Some(m)
            }
            _ => None,
        };
        (z, act, mask)
    };
    let (z3, a3, m3) = dense(idx::HEAD1_W, idx::HEAD1_B, a.head1, fw, &feat);
    let (z4, a4, m4) = dense(idx::HEAD2_W, idx::HEAD2_B, a.head2, a.head1, &a3);

    let mut logits = vec![0.0; a.classes * bsz];
    gemm(
        false,
        false,
        a.classes,
        bsz,
        a.head2,
        1.0,
        p.tensor(idx::OUT_W),
        &a4,
        0.0,
        &mut logits,
    );
    add_bias(&mut logits, p.tensor(idx::OUT_B), bsz);

    Trace {
        batch: bsz,
        cols1,
        z1,
        cols2,
        z2,
        pooled,
        argmax,
        gru,
        load,
        ze,
        feat,
        z3,
        a3,
        m3,
        z4,
        a4,
        m4,
        logits,
    }
}

fn softmax2(l0: f64, l1: f64) -> [f64; 2] {
    let m = l0.max(l1);
    let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

/// Inference on a batch (dropout off).
pub fn forward_batch(p: &Params, inputs: &[Input]) -> Result<Vec<Output>> {
    check_inputs(p, inputs)?;
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let tr = forward_trace(p, inputs, None);
    let b = tr.batch;
    let out: Vec<Output> = (0..b)
        .map(|k| {
            let logits = [tr.logits[k], tr.logits[b + k]];
            Output {
                logits,
                probs: softmax2(logits[0], logits[1]),
            }
        })
        .collect();
    if out
        .iter()
        .any(|o| !o.logits.iter().chain(&o.probs).all(|v| v.is_finite()))
    {
        return Err(Error::NonFinite("classifier output".into()));
    }
    Ok(out)
}

pub fn forward(p: &Params, x: &[f64], load_index: usize) -> Result<Output> {
    Ok(forward_batch(p, &[Input { x, load_index }])?[0])
}

/// Mean cross-entropy over the batch and its exact gradient with respect
/// to every parameter, in the parameter vector's layout.
pub fn loss_and_grads(
    p: &Params,
    inputs: &[Input],
    labels: &[usize],
    dropout: Option<Dropout>,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(p, inputs)?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::config(
            "batch must be non-empty with one label per input",
        ));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::config("labels must be 0 (stable) or 1 (unstable)"));
    }
    let tr = forward_trace(p, inputs, dropout);
    let (loss, grads) = backward(p, &tr, labels);
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok((loss, grads))
}

fn backward(p: &Params, tr: &Trace, labels: &[usize]) -> (f64, Vec<f64>) {
    let a = &p.arch;
    let bsz = tr.batch;
    let inv_b = 1.0 / bsz as f64;
    let mut g = vec![0.0; p.len()];
    let off = |i: usize| p.tensors[i].offset..p.tensors[i].offset + p.tensors[i].len;

    let mut loss = 0.0;
    let mut dlog = vec![0.0; 2 * bsz];
    for (k, &y) in labels.iter().enumerate() {
        let pr = softmax2(tr.logits[k], tr.logits[bsz + k]);
        let l = [tr.logits[k], tr.logits[bsz + k]];
        let m = l[0].max(l[1]);
        let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
        loss += lse - l[y];
        for c in 0..2 {
            dlog[c * bsz + k] = (pr[c] - if c == y { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    loss *= inv_b;

    // Dense layer backward: given dZ, accumulates dW, db and returns dInput.
    let dense_back = |g: &mut Vec<f64>,
                      w: usize,
                      bias: usize,
                      rows: usize,
                      k: usize,
                      input: &[f64],
                      dz: &[f64]| {
        gemm(
            false,
            true,
            rows,
            k,
            bsz,
            1.0,
            dz,
            input,
            1.0,
            &mut g[off(w)],
        );
        row_sums(dz, bsz, &mut g[off(bias)]);
        let mut din = vec![0.0; k * bsz];
        gemm(
            true,
            false,
            k,
            bsz,
            rows,
            1.0,
            p.tensor(w),
            dz,
            0.0,
            &mut din,
        );
        din
    };
    let relu_mask = |d: &mut [f64], z: &[f64], mask: &Option<Vec<f64>>| {
        for (i, v) in d.iter_mut().enumerate() {
            let m = mask.as_ref().map_or(1.0, |m| m[i]);
            *v *= if z[i] > 0.0 { m } else { 0.0 };
        }
    };

    let mut da4 = dense_back(&mut g, idx::OUT_W, idx::OUT_B, 2, a.head2, &tr.a4, &dlog);
    relu_mask(&mut da4, &tr.z4, &tr.m4);
    let mut da3 = dense_back(
        &mut g,
        idx::HEAD2_W,
        idx::HEAD2_B,
        a.head2,
        a.head1,
        &tr.a3,
        &da4,
    );
    relu_mask(&mut da3, &tr.z3, &tr.m3);
    let dfeat = dense_back(
        &mut g,
        idx::HEAD1_W,
        idx::HEAD1_B,
        a.head1,
        a.feature_width(),
        &tr.feat,
        &da3,
    );

    let (h, f2) = (a.hidden, a.conv2_filters);
    let hb = h * bsz;
    let mut dze: Vec<f64> = dfeat[2 * hb..].to_vec();
    for (v, z) in dze.iter_mut().zip(&tr.ze) {
        if *z <= 0.0 {
            *v = 0.0;
        }
    }
    gemm(
        false,
        true,
        a.embed,
        1,
        bsz,
        1.0,
        &dze,
        &tr.load,
        1.0,
        &mut g[off(idx::EMBED_W)],
    );
    row_sums(&dze, bsz, &mut g[off(idx::EMBED_B)]);

    let tp = a.pooled_steps();
    let tb = tp * bsz;
    let mut dpooled = vec![0.0; f2 * tb];
    for d in 0..2 {
        let base = idx::gru(d);
        let gt = &tr.gru[d];
        let mut dh = dfeat[d * hb..(d + 1) * hb].to_vec();
        let mut dgi = vec![0.0; 3 * h * tb];
        let mut dgh = vec![0.0; 3 * hb];
        for step in (0..tp).rev() {
            let s = if d == 0 { step } else { tp - 1 - step };
            let (r, z, n, ghn, hprev) = (
                &gt.r[step],
                &gt.z[step],
                &gt.n[step],
                &gt.ghn[step],
                &gt.h[step],
            );
            let mut dh_prev = vec![0.0; hb];
            for j in 0..h {
                for b in 0..bsz {
                    let k = j * bsz + b;
                    let dn = dh[k] * (1.0 - z[k]);
                    let dz = dh[k] * (hprev[k] - n[k]);
                    dh_prev[k] = dh[k] * z[k];
                    let dan = dn * (1.0 - n[k] * n[k]);
                    let dr = dan * ghn[k];
                    let daz = dz * z[k] * (1.0 - z[k]);
                    let dar = dr * r[k] * (1.0 - r[k]);
                    dgh[k] = dar;
                    dgh[hb + k] = daz;
                    dgh[2 * hb + k] = dan * r[k];
                    let col = s * bsz + b;
                    dgi[j * tb + col] = dar;
                    dgi[(h + j) * tb + col] = daz;
                    dgi[(2 * h + j) * tb + col] = dan;
                }
            }
            gemm(
                false,
                true,
                3 * h,
                h,
                bsz,
                1.0,
                &dgh,
                hprev,
                1.0,
                &mut g[off(base + 1)],
            );
            row_sums(&dgh, bsz, &mut g[off(base + 3)]);
            gemm(
                true,
                false,
                h,
                bsz,
                3 * h,
                1.0,
                p.tensor(base + 1),
                &dgh,
                1.0,
                &mut dh_prev,
            );
            dh = dh_prev;
        }
        gemm(
            false,
            true,
            3 * h,
            f2,
            tb,
            1.0,
            &dgi,
            &tr.pooled,
            1.0,
            &mut g[off(base)],
        );
        row_sums(&dgi, tb, &mut g[off(base + 2)]);
        gemm(
            true,
            false,
            f2,
            tb,
            3 * h,
            1.0,
            p.tensor(base),
            &dgi,
            1.0,
            &mut dpooled,
        );
    }

    let t = a.steps;
    let bt = bsz * t;
    let mut dz2 = vec![0.0; f2 * bt];
    for f in 0..f2 {
        for b in 0..bsz {
            for s in 0..tp {
                let o = f * tb + s * bsz + b;
                let src = f * bt + b * t + 2 * s + tr.argmax[o] as usize;
                if tr.z2[src] > 0.0 {
                    dz2[src] = dpooled[o];
                }
            }
        }
    }
    let (f1, c) = (a.conv1_filters, a.channels);
    let k2 = a.conv2_kernel;
    gemm(
        false,
        true,
        f2,
        f1 * k2,
        bt,
        1.0,
        &dz2,
        &tr.cols2,
        1.0,
        &mut g[off(idx::CONV2_W)],
    );
    row_sums(&dz2, bt, &mut g[off(idx::CONV2_B)]);
    let mut dcols2 = vec![0.0; f1 * k2 * bt];
    gemm(
        true,
        false,
        f1 * k2,
        bt,
        f2,
        1.0,
        p.tensor(idx::CONV2_W),
        &dz2,
        0.0,
        &mut dcols2,
    );
    let mut dz1 = col2im(&dcols2, f1, bsz, t, k2);
    for (v, z) in dz1.iter_mut().zip(&tr.z1) {
        if *z <= 0.0 {
            *v = 0.0;
        }
    }
    gemm(
        false,
        true,
        f1,
        c * a.conv1_kernel,
        bt,
        1.0,
        &dz1,
        &tr.cols1,
        1.0,
        &mut g[off(idx::CONV1_W)],
    );
    row_sums(&dz1, bt, &mut g[off(idx::CONV1_B)]);

    (loss, g)
}
