//! Forward and backward kernels. Every kernel works on a whole batch laid
//! out `[sample][channel][time]` and parallelises over samples; reductions
//! across samples run in sample order so results do not depend on the
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::Batch;
use super::Real;

pub const BN_EPS: f64 = 1e-5;

fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// Output and input ranges touched by kernel tap `j` of a same-padded
/// convolution over length `l`: `y[t] += w * x[t + j - k/2]`.
fn tap_slices(j: usize, k: usize, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let p = k / 2;
    let s = j.abs_diff(p);
    if s >= l {
        return (0..0, 0..0);
    }
    if j >= p {
        (0..l - s, s..l)
    } else {
        (s..l, 0..l - s)
    }
}

pub fn conv_forward<T: Real>(x: &Batch<T>, w: &[T], b: &[T], cout: usize, k: usize) -> Batch<T> {
    let (cin, l) = (x.c, x.l);
    let mut y = Batch::zeros(x.n, cout, l);
    y.data
        .par_chunks_mut(cout * l)
        .zip(x.data.par_chunks(cin * l))
        .for_each(|(ys, xs)| {
            for o in 0..cout {
                let yo = &mut ys[o * l..(o + 1) * l];
                yo.fill(b[o]);
                for i in 0..cin {
                    let xi = &xs[i * l..(i + 1) * l];
                    for j in 0..k {
                        let (tr, xr) = tap_slices(j, k, l);
                        axpy(&mut yo[tr], w[(o * cin + i) * k + j], &xi[xr]);
                    }
                }
            }
        });
    y
}

/// Returns `(dx, dw, db)`; `dx` is skipped when not needed (first layer).
pub fn conv_backward<T: Real>(
    x: &Batch<T>,
    w: &[T],
    dy: &Batch<T>,
    k: usize,
    need_dx: bool,
) -> (Option<Batch<T>>, Vec<T>, Vec<T>) {
    let (cin, l, cout) = (x.c, x.l, dy.c);
    let per_sample = |s: usize, mut dxs: Option<&mut [T]>| -> (Vec<T>, Vec<T>) {
        let xs = x.sample(s);
        let dys = dy.sample(s);
        let mut dw = vec![T::zero(); cout * cin * k];
        let mut db = vec![T::zero(); cout];
        for o in 0..cout {
            let dyo = &dys[o * l..(o + 1) * l];
            db[o] = dyo.iter().copied().sum();
            for i in 0..cin {
                let xi = &xs[i * l..(i + 1) * l];
                for j in 0..k {
                    let (tr, xr) = tap_slices(j, k, l);
                    let widx = (o * cin + i) * k + j;
                    dw[widx] = dot(&dyo[tr.clone()], &xi[xr.clone()]);
                    if let Some(dx) = dxs.as_deref_mut() {
                        axpy(&mut dx[i * l..(i + 1) * l][xr], w[widx], &dyo[tr]);
                    }
                }
            }
        }
        (dw, db)
    };

    let (dx, partials): (Option<Batch<T>>, Vec<(Vec<T>, Vec<T>)>) = if need_dx {
        let mut dx = Batch::zeros(x.n, cin, l);
        let partials = dx
            .data
            .par_chunks_mut(cin * l)
            .enumerate()
            .map(|(s, dxs)| per_sample(s, Some(dxs)))
            .collect();
        (Some(dx), partials)
    } else {
        (None, (0..x.n).into_par_iter().map(|s| per_sample(s, None)).collect())
    };

    let mut dw = vec![T::zero(); cout * cin * k];
    let mut db = vec![T::zero(); cout];
    for (pw, pb) in partials {
        axpy(&mut dw, T::one(), &pw);
        axpy(&mut db, T::one(), &pb);
    }
    (dx, dw, db)
}

/// Cached batch-norm quantities needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Batch<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics (train mode only).
    pub batch_mean: Option<Vec<T>>,
    pub batch_var: Option<Vec<T>>,
}

fn bn_apply<T: Real>(x: &Batch<T>, gamma: &[T], beta: &[T], mean: &[f64], inv_std: &[f64]) -> (Batch<T>, Batch<T>) {
    let (c, l) = (x.c, x.l);
    let mut xhat = Batch::zeros(x.n, c, l);
    let mut y = Batch::zeros(x.n, c, l);
    xhat.data
        .par_chunks_mut(c * l)
        .zip(y.data.par_chunks_mut(c * l))
        .zip(x.data.par_chunks(c * l))
        .for_each(|((hs, ys), xs)| {
            for ch in 0..c {
                let (m, is) = (T::of(mean[ch]), T::of(inv_std[ch]));
                let (g, b) = (gamma[ch], beta[ch]);
                for t in ch * l..(ch + 1) * l {
                    let h = (xs[t] - m) * is;
                    hs[t] = h;
                    ys[t] = g * h + b;
                }
            }
        });
    (y, xhat)
}

/// `sum((x - center)^power)` for power 1 or 2, accumulated in `f64` over
/// four lanes.
fn sum_dev<T: Real>(xs: &[T], center: f64, power: u8) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = xs.chunks_exact(4);
    let term = |v: T| {
        let d = v.to_f64().unwrap() - center;
        if power == 2 {
            d * d
        } else {
            d
        }
    };
    let tail: f64 = chunks.remainder().iter().map(|&v| term(v)).sum();
    for c in chunks {
        for k in 0..4 {
            acc[k] += term(c[k]);
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

pub fn bn_forward_train<T: Real>(x: &Batch<T>, gamma: &[T], beta: &[T]) -> (Batch<T>, BnCache<T>) {
    let (c, l) = (x.c, x.l);
    let m = (x.n * l) as f64;
    // Per-sample partial sums, reduced in sample order.
    let sums: Vec<Vec<f64>> = x
        .data
        .par_chunks(c * l)
        .map(|xs| (0..c).map(|ch| sum_dev(&xs[ch * l..(ch + 1) * l], 0.0, 1)).collect())
        .collect();
    let mut mean = vec![0.0; c];
    for s in &sums {
        for ch in 0..c {
            mean[ch] += s[ch];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let sq: Vec<Vec<f64>> = x
        .data
        .par_chunks(c * l)
        .map(|xs| {
            (0..c)
                .map(|ch| sum_dev(&xs[ch * l..(ch + 1) * l], mean[ch], 2))
                .collect()
        })
        .collect();
    let mut var = vec![0.0; c];
    for s in &sq {
        for ch in 0..c {
            var[ch] += s[ch];
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let (y, xhat) = bn_apply(x, gamma, beta, &mean, &inv_std);
    (
        y,
        BnCache {
            xhat,
            inv_std: inv_std.iter().map(|&v| T::of(v)).collect(),
            batch_mean: Some(mean.iter().map(|&v| T::of(v)).collect()),
            batch_var: Some(var.iter().map(|&v| T::of(v)).collect()),
        },
    )
}

pub fn bn_forward_infer<T: Real>(
    x: &Batch<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> (Batch<T>, BnCache<T>) {
    let mean: Vec<f64> = running_mean.iter().map(|v| v.to_f64().unwrap()).collect();
    let inv_std: Vec<f64> = running_var
        .iter()
        .map(|v| 1.0 / (v.to_f64().unwrap() + BN_EPS).sqrt())
        .collect();
    let (y, xhat) = bn_apply(x, gamma, beta, &mean, &inv_std);
    (
        y,
        BnCache {
            xhat,
            inv_std: inv_std.iter().map(|&v| T::of(v)).collect(),
            batch_mean: None,
            batch_var: None,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<T: Real>(dy: &Batch<T>, cache: &BnCache<T>, gamma: &[T]) -> (Batch<T>, Vec<T>, Vec<T>) {
    let (c, l) = (dy.c, dy.l);
    let xhat = &cache.xhat;
    let partial: Vec<(Vec<f64>, Vec<f64>)> = dy
        .data
        .par_chunks(c * l)
        .zip(xhat.data.par_chunks(c * l))
        .map(|(ds, hs)| {
            let mut sd = vec![0.0; c];
            let mut sdh = vec![0.0; c];
            for ch in 0..c {
                for t in ch * l..(ch + 1) * l {
                    let d = ds[t].to_f64().unwrap();
                    sd[ch] += d;
                    sdh[ch] += d * hs[t].to_f64().unwrap();
                }
            }
            (sd, sdh)
        })
        .collect();
    let mut sum_dy = vec![0.0; c];
    let mut sum_dyh = vec![0.0; c];
    for (sd, sdh) in &partial {
        for ch in 0..c {
            sum_dy[ch] += sd[ch];
            sum_dyh[ch] += sdh[ch];
        }
    }
    let train = cache.batch_mean.is_some();
    let m = (dy.n * l) as f64;
    let mut dx = Batch::zeros(dy.n, c, l);
    dx.data
        .par_chunks_mut(c * l)
        .zip(dy.data.par_chunks(c * l))
        .zip(xhat.data.par_chunks(c * l))
        .for_each(|((dxs, ds), hs)| {
            for ch in 0..c {
                let g = gamma[ch] * cache.inv_std[ch];
                let range = ch * l..(ch + 1) * l;
                if train {
                    // dx = g * (dy - mean(dy) - xhat * mean(dy * xhat))
                    let mdy = T::of(sum_dy[ch] / m);
                    let mdyh = T::of(sum_dyh[ch] / m);
                    for t in range {
                        dxs[t] = g * (ds[t] - mdy - hs[t] * mdyh);
                    }
                } else {
                    for t in range {
                        dxs[t] = g * ds[t];
                    }
                }
            }
        });
    (
        dx,
        sum_dyh.iter().map(|&v| T::of(v)).collect(),
        sum_dy.iter().map(|&v| T::of(v)).collect(),
    )
}

pub fn relu_forward<T: Real>(x: &Batch<T>) -> Batch<T> {
    let mut y = x.clone();
    y.data.par_iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
    y
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Real>(y: &Batch<T>, dy: &Batch<T>) -> Batch<T> {
    let mut dx = dy.clone();
    dx.data
        .par_iter_mut()
        .zip(y.data.par_iter())
        .for_each(|(d, &o)| {
            if o <= T::zero() {
                *d = T::zero();
            }
        });
    dx
}

/// Returns the pooled batch and the in-row argmax of each output.
pub fn maxpool_forward<T: Real>(x: &Batch<T>, factor: usize) -> (Batch<T>, Vec<u32>) {
    let (c, l) = (x.c, x.l);
    let lo = l / factor;
    let mut y = Batch::zeros(x.n, c, lo);
    let mut arg = vec![0u32; x.n * c * lo];
    y.data
        .par_chunks_mut(c * lo)
        .zip(arg.par_chunks_mut(c * lo))
        .zip(x.data.par_chunks(c * l))
        .for_each(|((ys, args), xs)| {
            for ch in 0..c {
                for t in 0..lo {
                    let base = ch * l + t * factor;
                    let mut best = base;
                    for u in base + 1..base + factor {
                        if xs[u] > xs[best] {
                            best = u;
                        }
                    }
                    ys[ch * lo + t] = xs[best];
                    args[ch * lo + t] = (best - ch * l) as u32;
                }
            }
        });
    (y, arg)
}

pub fn maxpool_backward<T: Real>(dy: &Batch<T>, arg: &[u32], in_len: usize) -> Batch<T> {
    let (c, lo) = (dy.c, dy.l);
    let mut dx = Batch::zeros(dy.n, c, in_len);
    dx.data
        .par_chunks_mut(c * in_len)
        .zip(dy.data.par_chunks(c * lo))
        .zip(arg.par_chunks(c * lo))
        .for_each(|((dxs, ds), args)| {
            for ch in 0..c {
                for t in 0..lo {
                    dxs[ch * in_len + args[ch * lo + t] as usize] += ds[ch * lo + t];
                }
            }
        });
    dx
}

pub fn gap_forward<T: Real>(x: &Batch<T>) -> Batch<T> {
    let (c, l) = (x.c, x.l);
    let inv = T::of(1.0 / l as f64);
    let mut y = Batch::zeros(x.n, c, 1);
    y.data
        .par_chunks_mut(c)
        .zip(x.data.par_chunks(c * l))
        .for_each(|(ys, xs)| {
            for ch in 0..c {
                ys[ch] = xs[ch * l..(ch + 1) * l].iter().copied().sum::<T>() * inv;
            }
        });
    y
}

pub fn gap_backward<T: Real>(dy: &Batch<T>, in_len: usize) -> Batch<T> {
    let c = dy.c;
    let inv = T::of(1.0 / in_len as f64);
    let mut dx = Batch::zeros(dy.n, c, in_len);
    dx.data
        .par_chunks_mut(c * in_len)
        .zip(dy.data.par_chunks(c))
        .for_each(|(dxs, ds)| {
            for ch in 0..c {
                dxs[ch * in_len..(ch + 1) * in_len].fill(ds[ch] * inv);
            }
        });
    dx
}

/// Inverted-dropout mask: 0 for dropped units, `1 / (1 - rate)` otherwise.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn mul_mask<T: Real>(x: &Batch<T>, mask: &[T]) -> Batch<T> {
    let mut y = x.clone();
    y.data.iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
    y
}

pub fn dense_forward<T: Real>(x: &Batch<T>, w: &[T], b: &[T], outputs: usize) -> Batch<T> {
    let inputs = x.c * x.l;
    let mut y = Batch::zeros(x.n, outputs, 1);
    y.data
        .par_chunks_mut(outputs)
        .zip(x.data.par_chunks(inputs))
        .for_each(|(ys, xs)| {
            for o in 0..outputs {
                ys[o] = b[o] + dot(&w[o * inputs..(o + 1) * inputs], xs);
            }
        });
    y
}

pub fn dense_backward<T: Real>(x: &Batch<T>, w: &[T], dy: &Batch<T>) -> (Batch<T>, Vec<T>, Vec<T>) {
    let inputs = x.c * x.l;
    let outputs = dy.c;
    let mut dx = Batch::zeros(x.n, x.c, x.l);
    dx.data
        .par_chunks_mut(inputs)
        .zip(dy.data.par_chunks(outputs))
        .for_each(|(dxs, ds)| {
            for o in 0..outputs {
                axpy(dxs, ds[o], &w[o * inputs..(o + 1) * inputs]);
            }
        });
    let mut dw = vec![T::zero(); outputs * inputs];
    let mut db = vec![T::zero(); outputs];
    for s in 0..x.n {
        let (xs, ds) = (x.sample(s), dy.sample(s));
        for o in 0..outputs {
            axpy(&mut dw[o * inputs..(o + 1) * inputs], ds[o], xs);
            db[o] += ds[o];
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_ranges_cover_same_padding() {
        // k = 3, l = 5: tap 0 reads x[t-1] for t in 1..5, tap 2 reads x[t+1] for t in 0..4.
        assert_eq!(tap_slices(0, 3, 5), (1..5, 0..4));
        assert_eq!(tap_slices(1, 3, 5), (0..5, 0..5));
        assert_eq!(tap_slices(2, 3, 5), (0..4, 1..5));
        // Kernel wider than the signal.
        assert_eq!(tap_slices(0, 11, 3), (0..0, 0..0));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = Batch {
            n: 1,
            c: 2,
            l: 6,
            data: vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.0, 1.0, 1.0, -1.0, 2.0, 0.5],
        };
        let (cout, k) = (2usize, 3usize);
        let w: Vec<f64> = (0..cout * 2 * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = vec![0.1, -0.2];
        let y = conv_forward(&x, &w, &b, cout, k);
        for o in 0..cout {
            for t in 0..6 {
                let mut want = b[o];
                for i in 0..2 {
                    for j in 0..k {
                        let src = t as isize + j as isize - 1;
                        if (0..6).contains(&src) {
                            want += w[(o * 2 + i) * k + j] * x.data[i * 6 + src as usize];
                        }
                    }
                }
                assert!((y.data[o * 6 + t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let n = 6;
        let (c, l) = (3, 50);
        let data: Vec<f64> = (0..n * c * l)
            .map(|i| ((i * 7919) % 1000) as f64 * 0.013 * (1 + (i / l) % c) as f64 + (i % c) as f64 * 40.0)
            .collect();
        let x = Batch { n, c, l, data };
        let gamma = vec![1.0; c];
        let beta = vec![0.0; c];
        let (y, _) = bn_forward_train(&x, &gamma, &beta);
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).flat_map(|s| y.sample(s)[ch * l..(ch + 1) * l].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "{m}");
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn dropout_mask_rate() {
        let m: Vec<f64> = dropout_mask(100_000, 0.2, 5);
        let dropped = m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64;
        assert!((dropped - 0.2).abs() < 0.01);
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    }
}
