//! Layers with hand-written backward passes. Tensors are NHWC.

use ndarray::{Array1, Array2, Array4, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::Scalar;

/// Square convolution with zero padding and an optional trailing ReLU.
/// `weight` rows are ordered (ky, kx, c_in), matching the im2col layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub relu: bool,
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Values kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Array2<T>,
    in_shape: [usize; 4],
    output: Array4<T>,
}

impl<T> ConvCache<T> {
    pub fn output(&self) -> &Array4<T> {
        &self.output
    }

    pub fn into_output(self) -> Array4<T> {
        self.output
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(kernel: usize, stride: usize, pad: usize, in_channels: usize, out_channels: usize, relu: bool) -> Self {
        Self {
            kernel,
            stride,
            pad,
            in_channels,
            out_channels,
            relu,
            weight: Array2::zeros((kernel * kernel * in_channels, out_channels)),
            bias: Array1::zeros(out_channels),
        }
    }

    /// He-normal weights, zero bias.
    pub fn he_init<R: Rng>(mut self, rng: &mut R) -> Self {
        let fan_in = self.weight.nrows() as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        self.weight.mapv_inplace(|_| T::lit(normal.sample(rng)));
        self
    }

    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn im2col(&self, x: &Array4<T>) -> Array2<T> {
        let [n, h, w, c] = dims(x);
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let k = self.kernel;
        let kdim = k * k * c;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut cols = vec![T::zero(); n * ho * wo * kdim];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ((b * ho + oy) * wo + ox) * kdim;
                    for ky in 0..k {
                        let Some(iy) = (oy * self.stride + ky).checked_sub(self.pad).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = (ox * self.stride + kx).checked_sub(self.pad).filter(|&v| v < w) else {
                                continue;
                            };
                            let src = ((b * h + iy) * w + ix) * c;
                            let dst = base + (ky * k + kx) * c;
                            cols[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((n * ho * wo, kdim), cols).expect("im2col shape")
    }

    fn col2im(&self, dcols: &Array2<T>, in_shape: [usize; 4]) -> Array4<T> {
        let [n, h, w, c] = in_shape;
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let k = self.kernel;
        let kdim = k * k * c;
        let dcols = dcols.as_standard_layout();
        let ds = dcols.as_slice().expect("standard layout");
        let mut dx = vec![T::zero(); n * h * w * c];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ((b * ho + oy) * wo + ox) * kdim;
                    for ky in 0..k {
                        let Some(iy) = (oy * self.stride + ky).checked_sub(self.pad).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = (ox * self.stride + kx).checked_sub(self.pad).filter(|&v| v < w) else {
                                continue;
                            };
                            let dst = ((b * h + iy) * w + ix) * c;
                            let src = base + (ky * k + kx) * c;
                            for (d, s) in dx[dst..dst + c].iter_mut().zip(&ds[src..src + c]) {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
        Array4::from_shape_vec((n, h, w, c), dx).expect("col2im shape")
    }

    /// Forward pass without keeping a cache.
    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        self.forward_cached(x).into_output()
    }

    pub fn forward_cached(&self, x: &Array4<T>) -> ConvCache<T> {
        let in_shape = dims(x);
        let [n, h, w, _] = in_shape;
        let cols = self.im2col(x);
        let mut out = cols.dot(&self.weight);
        out += &self.bias;
        if self.relu {
            out.mapv_inplace(relu);
        }
        let output = out
            .into_shape_with_order((n, self.out_dim(h), self.out_dim(w), self.out_channels))
            .expect("conv output shape");
        ConvCache { cols, in_shape, output }
    }

    /// Returns `(d_input, d_weight, d_bias)`; `d_input` only when asked.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Array4<T>,
        want_input_grad: bool,
    ) -> (Option<Array4<T>>, Array2<T>, Array1<T>) {
        let mut g = grad_out.clone();
        if self.relu {
            Zip::from(&mut g).and(&cache.output).for_each(|g, &o| {
                if o <= T::zero() {
                    *g = T::zero();
                }
            });
        }
        let rows = g.len() / self.out_channels;
        let g2 = g.into_shape_with_order((rows, self.out_channels)).expect("grad shape");
        let dw = cache.cols.t().dot(&g2);
        let db = g2.sum_axis(Axis(0));
        let dx = want_input_grad.then(|| self.col2im(&g2.dot(&self.weight.t()), cache.in_shape));
        (dx, dw, db)
    }
}

/// Fully connected layer; `weight` is `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn he_init<R: Rng>(mut self, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / self.weight.nrows() as f64).sqrt()).expect("positive std");
        self.weight.mapv_inplace(|_| T::lit(normal.sample(rng)));
        self
    }

    pub fn glorot_init<R: Rng>(mut self, rng: &mut R) -> Self {
        let (fan_in, fan_out) = self.weight.dim();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let uniform = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        self.weight.mapv_inplace(|_| T::lit(uniform.sample(rng)));
        self
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Returns `(d_input, d_weight, d_bias)` for input `x`.
    pub fn backward(&self, x: &Array2<T>, g: &Array2<T>) -> (Array2<T>, Array2<T>, Array1<T>) {
        (g.dot(&self.weight.t()), x.t().dot(g), g.sum_axis(Axis(0)))
    }
}

/// Per-channel batch normalization over (N, H, W), optionally followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    /// Batches folded into the running statistics so far (one element).
    pub num_batches: Array1<T>,
    pub relu: bool,
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    /// Whether batch statistics were used (train mode).
    batch_stats: bool,
    output: Array4<T>,
    /// Batch mean and unbiased variance, for the running averages.
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

impl<T> BnCache<T> {
    pub fn output(&self) -> &Array4<T> {
        &self.output
    }
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize, relu: bool) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            num_batches: Array1::zeros(1),
            relu,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Array4<T>, train: bool) -> Array4<T> {
        self.forward_cached(x, train).output
    }

    pub fn forward_cached(&self, x: &Array4<T>, train: bool) -> BnCache<T> {
        let shape = x.raw_dim();
        let c = self.channels();
        let rows = x.len() / c;
        let flat = x.to_shape((rows, c)).expect("bn reshape").to_owned();
        let eps = T::lit(BN_EPSILON);
        let (mean, var) = if train && rows > 0 {
            let m = T::from_usize_lossy(rows);
            let mean = flat.sum_axis(Axis(0)) / m;
            let centered = &flat - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / m;
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = (&flat - &mean) * &inv_std;
        let mut y = &xhat * &self.gamma + &self.beta;
        if self.relu {
            y.mapv_inplace(relu);
        }
        let unbiased = if rows > 1 {
            var.mapv(|v| v * T::from_usize_lossy(rows) / T::from_usize_lossy(rows - 1))
        } else {
            var
        };
        BnCache {
            xhat,
            inv_std,
            batch_stats: train && rows > 0,
            output: y.into_shape_with_order(shape).expect("bn output shape"),
            mean,
            var: unbiased,
        }
    }

    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Array4<T>) -> (Array4<T>, Array1<T>, Array1<T>) {
        let shape = grad_out.raw_dim();
        let c = self.channels();
        let rows = grad_out.len() / c;
        let mut dy = grad_out.to_shape((rows, c)).expect("bn grad reshape").to_owned();
        if self.relu {
            let out = cache.output.to_shape((rows, c)).expect("bn output reshape");
            Zip::from(&mut dy).and(&out).for_each(|g, &o| {
                if o <= T::zero() {
                    *g = T::zero();
                }
            });
        }
        let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let dx = if cache.batch_stats {
            let m = T::from_usize_lossy(rows);
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            let scale = &cache.inv_std / m;
            ((&dxhat * m - &sum_dxhat) - &cache.xhat * &sum_dxhat_xhat) * &scale
        } else {
            &dxhat * &cache.inv_std
        };
        (dx.into_shape_with_order(shape).expect("bn dx shape"), dgamma, dbeta)
    }

    /// Folds batch statistics into the running averages. The `k`-th batch
    /// gets weight `max(1 - BN_MOMENTUM, 1 / k)`, so the first batch replaces
    /// the initial values and early batches are averaged evenly.
    pub fn update_running(&mut self, mean: &Array1<T>, var: &Array1<T>) {
        let k = self.num_batches[0].as_f64() + 1.0;
        self.num_batches[0] = T::lit(k);
        let w = T::lit((1.0 - BN_MOMENTUM).max(1.0 / k));
        let keep = T::one() - w;
        Zip::from(&mut self.running_mean).and(mean).for_each(|r, &b| *r = keep * *r + w * b);
        Zip::from(&mut self.running_var).and(var).for_each(|r, &b| *r = keep * *r + w * b);
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

#[inline]
pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-sum-exp.
pub fn log_sum_exp<T: Scalar>(logits: &Array2<T>) -> Array1<T> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
            max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
        })
        .collect()
}

/// Global average pool over H and W: `(N, H, W, D) -> (N, D)`.
pub fn global_average_pool<T: Scalar>(x: &Array4<T>) -> Array2<T> {
    let [n, h, w, d] = dims(x);
    let area = T::from_usize_lossy(h * w);
    let flat = x.to_shape((n, h * w, d)).expect("pool reshape");
    flat.sum_axis(Axis(1)).mapv(|v| v / area)
}

pub fn global_average_pool_backward<T: Scalar>(g: &Array2<T>, shape: [usize; 4]) -> Array4<T> {
    let [n, h, w, d] = shape;
    let area = T::from_usize_lossy(h * w);
    let mut out = Array4::zeros((n, h, w, d));
    for (b, row) in g.rows().into_iter().enumerate() {
        let scaled = row.mapv(|v| v / area);
        for y in 0..h {
            for x in 0..w {
                out.slice_mut(ndarray::s![b, y, x, ..]).assign(&scaled);
            }
        }
    }
    out
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar, R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

pub(crate) fn dims<T>(x: &Array4<T>) -> [usize; 4] {
    let (n, h, w, c) = x.dim();
    [n, h, w, c]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-loop convolution oracle.
    fn naive_conv(conv: &Conv2d<f64>, x: &Array4<f64>) -> Array4<f64> {
        let [n, h, w, c] = dims(x);
        let (ho, wo) = (conv.out_dim(h), conv.out_dim(w));
        let mut out = Array4::zeros((n, ho, wo, conv.out_channels));
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for o in 0..conv.out_channels {
                        let mut acc = conv.bias[o];
                        for ky in 0..conv.kernel {
                            for kx in 0..conv.kernel {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    let row = (ky * conv.kernel + kx) * c + ci;
                                    acc += x[[b, iy as usize, ix as usize, ci]] * conv.weight[[row, o]];
                                }
                            }
                        }
                        out[[b, oy, ox, o]] = if conv.relu { acc.max(0.0) } else { acc };
                    }
                }
            }
        }
        out
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, relu) in [(1, false), (2, true)] {
            let mut conv = Conv2d::<f64>::zeros(3, stride, 1, 2, 4, relu).he_init(&mut rng);
            conv.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            let x = random_input(&mut rng, (2, 7, 6, 2));
            let got = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f64>::zeros(3, 2, 1, 2, 3, false).he_init(&mut rng);
        let x = random_input(&mut rng, (1, 5, 5, 2));
        let gy = random_input(&mut rng, (1, 3, 3, 3));
        let loss = |c: &Conv2d<f64>, x: &Array4<f64>| (c.forward(x) * &gy).sum();
        let cache = conv.forward_cached(&x);
        let (dx, dw, db) = conv.backward(&cache, &gy, true);
        let dx = dx.unwrap();
        let eps = 1e-6;
        for i in [0, 7, 20, 49] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += eps;
            xm.as_slice_mut().unwrap()[i] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
            assert!((fd - dx.as_slice().unwrap()[i]).abs() < 1e-6);
        }
        for i in [0, 5, 17, 53] {
            let mut cp = conv.clone();
            let mut cm = conv.clone();
            cp.weight.as_slice_mut().unwrap()[i] += eps;
            cm.weight.as_slice_mut().unwrap()[i] -= eps;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps);
            assert!((fd - dw.as_slice().unwrap()[i]).abs() < 1e-6);
        }
        let mut cp = conv.clone();
        cp.bias[1] += eps;
        let mut cm = conv.clone();
        cm.bias[1] -= eps;
        let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps);
        assert!((fd - db[1]).abs() < 1e-6);
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm2d::<f64>::new(3, true);
        bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        bn.running_mean.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        let x = random_input(&mut rng, (2, 3, 3, 3));
        let gy = random_input(&mut rng, (2, 3, 3, 3));
        for train in [true, false] {
            let loss = |b: &BatchNorm2d<f64>, x: &Array4<f64>| (b.forward(x, train) * &gy).sum();
            let cache = bn.forward_cached(&x, train);
            let (dx, dg, db) = bn.backward(&cache, &gy);
            let eps = 1e-6;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.as_slice_mut().unwrap()[i] += eps;
                xm.as_slice_mut().unwrap()[i] -= eps;
                let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * eps);
                assert!((fd - dx.as_slice().unwrap()[i]).abs() < 1e-5, "train={train} x[{i}]");
            }
            for ch in 0..3 {
                let mut p = bn.clone();
                p.gamma[ch] += eps;
                let mut m = bn.clone();
                m.gamma[ch] -= eps;
                assert!(((loss(&p, &x) - loss(&m, &x)) / (2.0 * eps) - dg[ch]).abs() < 1e-5);
                let mut p = bn.clone();
                p.beta[ch] += eps;
                let mut m = bn.clone();
                m.beta[ch] -= eps;
                assert!(((loss(&p, &x) - loss(&m, &x)) / (2.0 * eps) - db[ch]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn running_statistics_start_from_the_first_batch() {
        let mut bn = BatchNorm2d::<f64>::new(1, false);
        let stat = |v: f64| Array1::from_elem(1, v);
        bn.update_running(&stat(4.0), &stat(2.0));
        assert_eq!((bn.running_mean[0], bn.running_var[0]), (4.0, 2.0));
        bn.update_running(&stat(6.0), &stat(4.0));
        assert_eq!((bn.running_mean[0], bn.running_var[0]), (5.0, 3.0));
        for _ in 2..10 {
            bn.update_running(&stat(5.0), &stat(3.0));
        }
        // past ten batches the weight settles at 1 - momentum
        bn.update_running(&stat(15.0), &stat(3.0));
        assert!((bn.running_mean[0] - 6.0).abs() < 1e-12);
        assert_eq!(bn.num_batches[0], 11.0);
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bn = BatchNorm2d::<f64>::new(2, false);
        let x = random_input(&mut rng, (4, 5, 5, 2)).mapv(|v| 3.0 * v + 7.0);
        let cache = bn.forward_cached(&x, true);
        let y = cache.output();
        for ch in 0..2 {
            let col: Vec<f64> = y.slice(ndarray::s![.., .., .., ch]).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn stride_two_halves_even_sizes() {
        let conv = Conv2d::<f32>::zeros(3, 2, 1, 3, 16, true);
        assert_eq!(conv.out_dim(64), 32);
        assert_eq!(conv.out_dim(7), 4);
    }

    #[test]
    fn softmax_rows_normalized_under_large_logits() {
        let logits = ndarray::array![[1000.0f64, 999.0, -1000.0], [0.0, 0.0, 0.0]];
        let p = softmax(&logits);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((p[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
        let lse = log_sum_exp(&logits);
        assert!((lse[1] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pool_backward_spreads_evenly() {
        let g = ndarray::array![[4.0f64, 8.0]];
        let dx = global_average_pool_backward(&g, [1, 2, 2, 2]);
        assert!(dx.slice(ndarray::s![0, .., .., 0]).iter().all(|&v| v == 1.0));
        assert!(dx.slice(ndarray::s![0, .., .., 1]).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Array2<f64> = dropout_mask(50, 40, 0.5, &mut rng);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = m.iter().filter(|&&v| v > 0.0).count();
        assert!((800..1200).contains(&kept));
    }
}
