use super::init::{derive_seed, he_uniform_init};
use super::layers::{self, BnCache};
use super::{LayerPlan, LayerSpec, ModelSpec, NnError, Real};
use crate::dsp::EpochTensor;

/// A batch of inputs or activations, laid out `[sample][channel][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Self {
            n,
            c,
            l,
            data: vec![T::zero(); n * c * l],
        }
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.c * self.l;
        &self.data[i * s..(i + 1) * s]
    }

    /// Stack single-channel epochs. Rejected epochs are refused.
    pub fn from_epochs(epochs: &[&EpochTensor]) -> Result<Self, NnError> {
        let l = epochs.first().map_or(0, |e| e.samples.len());
        let mut data = Vec::with_capacity(epochs.len() * l);
        for e in epochs {
            check_epoch(e, l)?;
            data.extend(e.samples.iter().map(|&v| T::of(v as f64)));
        }
        Ok(Self {
            n: epochs.len(),
            c: 1,
            l,
            data,
        })
    }
}

fn check_epoch(e: &EpochTensor, len: usize) -> Result<(), NnError> {
    if !e.valid {
        return Err(NnError::InvalidEpoch(format!(
            "{} epoch {} was rejected as an artifact",
            e.channel_label, e.epoch_index
        )));
    }
    if e.samples.len() != len {
        return Err(NnError::InvalidEpoch(format!(
            "{} epoch {} has {} samples, expected {len}",
            e.channel_label,
            e.epoch_index,
            e.samples.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm, dropout masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, dropout disabled.
    Infer,
}

/// Network weights. Trainable values are stored flat in layer order (conv
/// weight `[out][in][k]` then bias; batch-norm gamma then beta; dense weight
/// `[out][in]` then bias). Batch-norm running mean/variance live in
/// `running`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub spec: ModelSpec,
    pub values: Vec<T>,
    pub running: Vec<T>,
    plan: Vec<LayerPlan>,
}

impl<T: Real> ModelParams<T> {
    pub fn from_parts(spec: ModelSpec, values: Vec<T>, running: Vec<T>) -> Result<Self, NnError> {
        let plan = spec.plan()?;
        let n_params = spec.total_params();
        let n_running: usize = spec.layers.iter().map(LayerSpec::running_count).sum();
        if values.len() != n_params {
            return Err(NnError::ParamCountMismatch {
                declared: values.len(),
                expected: n_params,
            });
        }
        if running.len() != n_running {
            return Err(NnError::ShapeMismatch(format!(
                "{} running statistics, expected {n_running}",
                running.len()
            )));
        }
        Ok(Self {
            spec,
            values,
            running,
            plan,
        })
    }

    pub fn total_params(&self) -> usize {
        self.values.len()
    }

    pub fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.running).all(|v| v.is_finite())
    }

    /// Trainable values of layer `i`.
    pub fn layer_values(&self, i: usize) -> &[T] {
        let p = &self.plan[i];
        &self.values[p.param_offset..p.param_offset + p.spec.param_count()]
    }

    pub fn layer_values_mut(&mut self, i: usize) -> &mut [T] {
        let p = &self.plan[i];
        let (a, b) = (p.param_offset, p.param_offset + p.spec.param_count());
        &mut self.values[a..b]
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.to_f64().unwrap())).collect();
        ModelParams {
            spec: self.spec.clone(),
            values: conv(&self.values),
            running: conv(&self.running),
            plan: self.plan.clone(),
        }
    }

    /// Fold the batch statistics of a train-mode pass into the running
    /// statistics: `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&mut self, trace: &ForwardTrace<T>, momentum: f64) {
        let m = T::of(momentum);
        let one_m = T::of(1.0 - momentum);
        for (p, cache) in self.plan.iter().zip(&trace.caches) {
            if let (LayerSpec::BatchNorm { channels }, Cache::Bn(bn)) = (&p.spec, cache) {
                if let (Some(mean), Some(var)) = (&bn.batch_mean, &bn.batch_var) {
                    let r = &mut self.running[p.running_offset..p.running_offset + 2 * channels];
                    for ch in 0..*channels {
                        r[ch] = m * r[ch] + one_m * mean[ch];
                        r[channels + ch] = m * r[channels + ch] + one_m * var[ch];
                    }
                }
            }
        }
    }
}

/// He-uniform weights (fan-in `in * k` for conv, `inputs` for dense), zero
/// biases, gamma 1, beta 0, running mean 0 and running variance 1.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>, NnError> {
    let plan = spec.plan()?;
    let mut values = Vec::with_capacity(spec.total_params());
    let mut running = Vec::new();
    for (i, p) in plan.iter().enumerate() {
        let layer_seed = derive_seed(seed, i as u64);
        match p.spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => {
                let w = he_uniform_init(in_channels * kernel_size, out_channels * in_channels * kernel_size, layer_seed);
                values.extend(w.into_iter().map(T::of));
                values.extend(std::iter::repeat_n(T::zero(), out_channels));
            }
            LayerSpec::Dense { inputs, outputs } => {
                values.extend(he_uniform_init(inputs, outputs * inputs, layer_seed).into_iter().map(T::of));
                values.extend(std::iter::repeat_n(T::zero(), outputs));
            }
            LayerSpec::BatchNorm { channels } => {
                values.extend(std::iter::repeat_n(T::one(), channels));
                values.extend(std::iter::repeat_n(T::zero(), channels));
                running.extend(std::iter::repeat_n(T::zero(), channels));
                running.extend(std::iter::repeat_n(T::one(), channels));
            }
            _ => {}
        }
    }
    ModelParams::from_parts(spec.clone(), values, running)
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Conv { input: Batch<T> },
    Bn(BnCache<T>),
    Relu { output: Batch<T> },
    MaxPool { arg: Vec<u32>, in_len: usize },
    Gap { in_len: usize },
    Dropout { mask: Option<Vec<T>> },
    Dense { input: Batch<T> },
    Softmax,
}

/// Activations cached by a forward pass, plus the logits and class
/// probabilities of every sample.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    caches: Vec<Cache<T>>,
    pub mode: Mode,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

impl<T: Real> ForwardTrace<T> {
    /// Mean softmax cross-entropy against class indices.
    pub fn loss(&self, targets: &[usize]) -> f64 {
        let total: f64 = self
            .logits
            .iter()
            .zip(targets)
            .map(|(z, &t)| log_sum_exp(z) - z[t])
            .sum();
        total / targets.len().max(1) as f64
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn forward_batch<T: Real>(params: &ModelParams<T>, x: &Batch<T>, mode: Mode) -> Result<ForwardTrace<T>, NnError> {
    let spec = &params.spec;
    if x.n == 0 || x.c != spec.input_channels || x.l != spec.input_len || x.data.len() != x.n * x.c * x.l {
        return Err(NnError::ShapeMismatch(format!(
            "input batch {}x{}x{} does not fit a {}x{} model",
            x.n, x.c, x.l, spec.input_channels, spec.input_len
        )));
    }
    let train = matches!(mode, Mode::Train { .. });
    let mut cur = x.clone();
    let mut caches = Vec::with_capacity(params.plan.len());
    for (i, p) in params.plan.iter().enumerate() {
        let vals = params.layer_values(i);
        let cache = match p.spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => {
                let (w, b) = vals.split_at(out_channels * in_channels * kernel_size);
                let y = layers::conv_forward(&cur, w, b, out_channels, kernel_size);
                Cache::Conv {
                    input: std::mem::replace(&mut cur, y),
                }
            }
            LayerSpec::BatchNorm { channels } => {
                let (g, b) = vals.split_at(channels);
                let (y, c) = if train {
                    layers::bn_forward_train(&cur, g, b)
                } else {
                    let r = &params.running[p.running_offset..p.running_offset + 2 * channels];
                    layers::bn_forward_infer(&cur, g, b, &r[..channels], &r[channels..])
                };
                cur = y;
                Cache::Bn(c)
            }
            LayerSpec::Relu => {
                cur = layers::relu_forward(&cur);
                Cache::Relu { output: cur.clone() }
            }
            LayerSpec::MaxPool { factor } => {
                let in_len = cur.l;
                let (y, arg) = layers::maxpool_forward(&cur, factor);
                cur = y;
                Cache::MaxPool { arg, in_len }
            }
            LayerSpec::GlobalAvgPool => {
                let in_len = cur.l;
                cur = layers::gap_forward(&cur);
                Cache::Gap { in_len }
            }
            LayerSpec::Dropout { rate } => match mode {
                Mode::Train { dropout_seed } if rate > 0.0 => {
                    let mask = layers::dropout_mask(cur.data.len(), rate, derive_seed(dropout_seed, i as u64));
                    cur = layers::mul_mask(&cur, &mask);
                    Cache::Dropout { mask: Some(mask) }
                }
                _ => Cache::Dropout { mask: None },
            },
            LayerSpec::Dense { outputs, inputs } => {
                let (w, b) = vals.split_at(outputs * inputs);
                let y = layers::dense_forward(&cur, w, b, outputs);
                Cache::Dense {
                    input: std::mem::replace(&mut cur, y),
                }
            }
            LayerSpec::Softmax => Cache::Softmax,
        };
        caches.push(cache);
    }
    let logits: Vec<Vec<f64>> = (0..cur.n)
        .map(|s| cur.sample(s).iter().map(|v| v.to_f64().unwrap()).collect())
        .collect();
    let probs = logits.iter().map(|z| softmax(z)).collect();
    Ok(ForwardTrace {
        caches,
        mode,
        logits,
        probs,
    })
}

/// Single-epoch forward pass; `trace.probs[0]` holds `[p_AS, p_QS]`.
pub fn forward<T: Real>(params: &ModelParams<T>, epoch: &EpochTensor, mode: Mode) -> Result<ForwardTrace<T>, NnError> {
    check_epoch(epoch, params.spec.input_len)?;
    forward_batch(params, &Batch::from_epochs(&[epoch])?, mode)
}

/// Gradient of the mean cross-entropy over the batch with respect to every
/// trainable value, in the same layout as [`ModelParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
    pub loss: f64,
}

pub fn backward<T: Real>(params: &ModelParams<T>, trace: &ForwardTrace<T>, targets: &[usize]) -> Result<Gradients<T>, NnError> {
    let n = trace.probs.len();
    let classes = trace.probs.first().map_or(0, Vec::len);
    if targets.len() != n {
        return Err(NnError::ShapeMismatch(format!("{} targets for a batch of {n}", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(NnError::ShapeMismatch(format!("target class {t} with {classes} outputs")));
    }
    let mut grad = Batch::zeros(n, classes, 1);
    for (s, (p, &t)) in trace.probs.iter().zip(targets).enumerate() {
        for k in 0..classes {
            let onehot = if k == t { 1.0 } else { 0.0 };
            grad.data[s * classes + k] = T::of((p[k] - onehot) / n as f64);
        }
    }
    let mut gvals = vec![T::zero(); params.values.len()];
    for (i, (p, cache)) in params.plan.iter().zip(&trace.caches).enumerate().rev() {
        let off = p.param_offset;
        let vals = params.layer_values(i);
        grad = match (&p.spec, cache) {
            (LayerSpec::Softmax, _) => grad,
            (
                &LayerSpec::Dense { inputs, outputs },
                Cache::Dense { input },
            ) => {
                let (dx, dw, db) = layers::dense_backward(input, &vals[..outputs * inputs], &grad);
                gvals[off..off + dw.len()].copy_from_slice(&dw);
                gvals[off + dw.len()..off + dw.len() + db.len()].copy_from_slice(&db);
                dx
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => match mask {
                Some(m) => layers::mul_mask(&grad, m),
                None => grad,
            },
            (LayerSpec::GlobalAvgPool, Cache::Gap { in_len }) => layers::gap_backward(&grad, *in_len),
            (LayerSpec::MaxPool { .. }, Cache::MaxPool { arg, in_len }) => layers::maxpool_backward(&grad, arg, *in_len),
            (LayerSpec::Relu, Cache::Relu { output }) => layers::relu_backward(output, &grad),
            (&LayerSpec::BatchNorm { channels }, Cache::Bn(bn)) => {
                let (dx, dg, db) = layers::bn_backward(&grad, bn, &vals[..channels]);
                gvals[off..off + channels].copy_from_slice(&dg);
                gvals[off + channels..off + 2 * channels].copy_from_slice(&db);
                dx
            }
            (
                &LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                },
                Cache::Conv { input },
            ) => {
                let nw = out_channels * in_channels * kernel_size;
                let (dx, dw, db) = layers::conv_backward(input, &vals[..nw], &grad, kernel_size, i > 0);
                gvals[off..off + nw].copy_from_slice(&dw);
                gvals[off + nw..off + nw + out_channels].copy_from_slice(&db);
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            _ => unreachable!("trace does not belong to this model"),
        };
    }
    Ok(Gradients {
        values: gvals,
        loss: trace.loss(targets),
    })
}

/// QS probability for each epoch (inference mode), evaluated in chunks.
pub fn predict_proba<T: Real>(params: &ModelParams<T>, epochs: &[&EpochTensor]) -> Result<Vec<f64>, NnError> {
    const CHUNK: usize = 128;
    let mut out = Vec::with_capacity(epochs.len());
    for chunk in epochs.chunks(CHUNK) {
        for e in chunk {
            check_epoch(e, params.spec.input_len)?;
        }
        let trace = forward_batch(params, &Batch::from_epochs(chunk)?, Mode::Infer)?;
        out.extend(trace.probs.iter().map(|p| p[1]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_epoch(seed: u64) -> EpochTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EpochTensor {
            channel_label: "F3-P3".into(),
            epoch_index: 0,
            samples: (0..crate::dsp::EPOCH_LEN).map(|_| rng.random_range(-50.0..50.0)).collect(),
            valid: true,
        }
    }

    fn random_batch(n: usize, c: usize, l: usize, seed: u64) -> Batch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Batch {
            n,
            c,
            l,
            data: (0..n * c * l).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn reference_forward_probabilities() {
        let m: ModelParams<f32> = build_model(&ModelSpec::reference(), 1).unwrap();
        assert_eq!(m.total_params(), 5082);
        assert!(m.is_finite());
        // Fresh running statistics do not match microvolt-scale input, so
        // use batch statistics here.
        let t = forward(&m, &random_epoch(2), Mode::Train { dropout_seed: 0 }).unwrap();
        let p = &t.probs[0];
        assert_eq!(p.len(), 2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_final_dense_gives_half() {
        let mut m: ModelParams<f32> = build_model(&ModelSpec::reference(), 3).unwrap();
        let last_dense = m.plan().len() - 2;
        m.layer_values_mut(last_dense).fill(0.0);
        let t = forward(&m, &random_epoch(4), Mode::Infer).unwrap();
        assert_eq!(t.probs[0], vec![0.5, 0.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let m: ModelParams<f32> = build_model(&ModelSpec::reference(), 5).unwrap();
        let e = random_epoch(6);
        let a = forward(&m, &e, Mode::Train { dropout_seed: 9 }).unwrap();
        let b = forward(&m, &e, Mode::Train { dropout_seed: 9 }).unwrap();
        assert_eq!(a.probs, b.probs);
        let m2: ModelParams<f32> = build_model(&ModelSpec::reference(), 5).unwrap();
        assert_eq!(m, m2);
        assert_eq!(
            forward(&m, &e, Mode::Infer).unwrap().probs,
            forward(&m2, &e, Mode::Infer).unwrap().probs
        );
    }

    #[test]
    fn scaling_final_weights_moves_away_from_half() {
        for seed in 0..8 {
            let base: ModelParams<f64> = build_model(&ModelSpec::reference(), seed).unwrap();
            let e = random_epoch(100 + seed);
            let last = base.plan().len() - 2;
            let mut prev_dev = 0.0;
            let mut argmax = None;
            for c in [0.0, 0.5, 1.0, 2.0, 4.0] {
                let mut m = base.clone();
                m.layer_values_mut(last).iter_mut().for_each(|v| *v *= c);
                let p = forward(&m, &e, Mode::Infer).unwrap().probs[0][1];
                let dev = (p - 0.5).abs();
                assert!(dev >= prev_dev - 1e-15, "seed {seed} c {c}");
                if c > 0.0 {
                    let am = p > 0.5;
                    assert_eq!(*argmax.get_or_insert(am), am);
                }
                prev_dev = dev;
            }
        }
    }

    #[test]
    fn rejected_epoch_is_refused() {
        let m: ModelParams<f32> = build_model(&ModelSpec::reference(), 1).unwrap();
        let mut e = random_epoch(1);
        e.valid = false;
        assert!(matches!(forward(&m, &e, Mode::Infer), Err(NnError::InvalidEpoch(_))));
        let mut e = random_epoch(1);
        e.samples.pop();
        assert!(matches!(forward(&m, &e, Mode::Infer), Err(NnError::InvalidEpoch(_))));
    }

    #[test]
    fn dense_bias_gradient_is_probs_minus_onehot() {
        let m: ModelParams<f64> = build_model(&ModelSpec::reference(), 11).unwrap();
        let e = random_epoch(12);
        for target in [0, 1] {
            let t = forward(&m, &e, Mode::Train { dropout_seed: 1 }).unwrap();
            let g = backward(&m, &t, &[target]).unwrap();
            let p = &m.plan()[m.plan().len() - 2];
            let bias = &g.values[p.param_offset + 48..p.param_offset + 50];
            for k in 0..2 {
                let onehot = if k == target { 1.0 } else { 0.0 };
                assert!((bias[k] - (t.probs[0][k] - onehot)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confident_correct_prediction_has_no_loss() {
        let spec = toy_spec(vec![]);
        let mut m: ModelParams<f64> = build_model(&spec, 1).unwrap();
        // Dense weights 0, bias pushes QS logit far up.
        let last = m.plan().len() - 2;
        let v = m.layer_values_mut(last);
        v.fill(0.0);
        v[v.len() - 1] = 50.0;
        let x = random_batch(1, 1, 8, 2);
        let t = forward_batch(&m, &x, Mode::Train { dropout_seed: 0 }).unwrap();
        let g = backward(&m, &t, &[1]).unwrap();
        assert!(g.loss < 1e-20);
        assert!(g.values.iter().all(|v| v.abs() < 1e-20));
    }

    /// `middle` followed by global average pooling and a 2-way dense head.
    fn toy_spec(middle: Vec<LayerSpec>) -> ModelSpec {
        let mut layers = middle;
        let mut c = 1;
        for l in &layers {
            if let LayerSpec::Conv1d { out_channels, .. } = l {
                c = *out_channels;
            }
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense { inputs: c, outputs: 2 });
        layers.push(LayerSpec::Softmax);
        ModelSpec {
            input_channels: 1,
            input_len: 8,
            layers,
        }
    }

    fn conv(i: usize, o: usize, k: usize) -> LayerSpec {
        LayerSpec::Conv1d {
            in_channels: i,
            out_channels: o,
            kernel_size: k,
        }
    }

    /// Central-difference oracle for every trainable value.
    fn grad_check(spec: ModelSpec, seed: u64) -> f64 {
        let mut m: ModelParams<f64> = build_model(&spec, seed).unwrap();
        // Non-trivial batch-norm affine parameters and dense biases.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for v in m.values.iter_mut() {
            if *v == 1.0 || *v == 0.0 {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let x = random_batch(4, 1, 8, seed + 2);
        let targets = [0, 1, 1, 0];
        let mode = Mode::Train { dropout_seed: seed };
        let t = forward_batch(&m, &x, mode).unwrap();
        let g = backward(&m, &t, &targets).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..m.values.len() {
            let mut plus = m.clone();
            plus.values[i] += h;
            let mut minus = m.clone();
            minus.values[i] -= h;
            let lp = forward_batch(&plus, &x, mode).unwrap().loss(&targets);
            let lm = forward_batch(&minus, &x, mode).unwrap().loss(&targets);
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = g.values[i];
            let scale = analytic.abs().max(numeric.abs());
            let err = if scale < 1e-7 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradient_check_dense_only() {
        assert!(grad_check(toy_spec(vec![]), 1) < 1e-4);
    }

    #[test]
    fn gradient_check_conv() {
        assert!(grad_check(toy_spec(vec![conv(1, 3, 3)]), 2) < 1e-4);
    }

    #[test]
    fn gradient_check_two_convs() {
        assert!(grad_check(toy_spec(vec![conv(1, 2, 3), conv(2, 3, 5)]), 3) < 1e-4);
    }

    #[test]
    fn gradient_check_batchnorm() {
        assert!(grad_check(toy_spec(vec![conv(1, 3, 3), LayerSpec::BatchNorm { channels: 3 }]), 4) < 1e-4);
    }

    #[test]
    fn gradient_check_relu() {
        assert!(grad_check(toy_spec(vec![conv(1, 3, 3), LayerSpec::Relu]), 5) < 1e-4);
    }

    #[test]
    fn gradient_check_maxpool() {
        assert!(grad_check(toy_spec(vec![conv(1, 3, 3), LayerSpec::MaxPool { factor: 2 }]), 6) < 1e-4);
    }

    #[test]
    fn gradient_check_dropout() {
        assert!(grad_check(toy_spec(vec![conv(1, 3, 3), LayerSpec::Dropout { rate: 0.3 }]), 7) < 1e-4);
    }

    #[test]
    fn gradient_check_full_block() {
        let spec = toy_spec(vec![
            conv(1, 2, 3),
            LayerSpec::BatchNorm { channels: 2 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { factor: 2 },
            conv(2, 3, 3),
            LayerSpec::BatchNorm { channels: 3 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.2 },
        ]);
        assert!(grad_check(spec, 8) < 1e-4);
    }

    #[test]
    fn dropout_is_identity_in_inference() {
        let spec = toy_spec(vec![conv(1, 3, 3), LayerSpec::Dropout { rate: 0.5 }]);
        let mut no_drop = spec.clone();
        no_drop.layers.remove(1);
        let a: ModelParams<f64> = build_model(&spec, 4).unwrap();
        // Same values, layer removed.
        let b = ModelParams::from_parts(no_drop, a.values.clone(), a.running.clone()).unwrap();
        let x = random_batch(3, 1, 8, 9);
        assert_eq!(
            forward_batch(&a, &x, Mode::Infer).unwrap().probs,
            forward_batch(&b, &x, Mode::Infer).unwrap().probs
        );
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let spec = toy_spec(vec![conv(1, 2, 3), LayerSpec::BatchNorm { channels: 2 }]);
        let mut m: ModelParams<f64> = build_model(&spec, 4).unwrap();
        let x = random_batch(5, 1, 8, 10);
        let t = forward_batch(&m, &x, Mode::Train { dropout_seed: 0 }).unwrap();
        let Cache::Bn(bn) = &t.caches[1] else { panic!() };
        let (mean, var) = (bn.batch_mean.clone().unwrap(), bn.batch_var.clone().unwrap());
        m.update_running(&t, 0.9);
        for ch in 0..2 {
            assert!((m.running[ch] - 0.1 * mean[ch]).abs() < 1e-12);
            assert!((m.running[2 + ch] - (0.9 + 0.1 * var[ch])).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_proba_matches_forward() {
        let m: ModelParams<f32> = build_model(&ModelSpec::reference(), 21).unwrap();
        let es: Vec<EpochTensor> = (0..3).map(random_epoch).collect();
        let refs: Vec<&EpochTensor> = es.iter().collect();
        let p = predict_proba(&m, &refs).unwrap();
        for (e, pq) in es.iter().zip(p) {
            let single = forward(&m, e, Mode::Infer).unwrap().probs[0][1];
            assert!((single - pq).abs() < 1e-6);
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_normalizes(z in proptest::collection::vec(-700.0f64..700.0, 2..6)) {
            let p = softmax(&z);
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            proptest::prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn softmax_open_interval_for_moderate_logits(z in proptest::collection::vec(-15.0f64..15.0, 2..6)) {
            let p = softmax(&z);
            proptest::prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
