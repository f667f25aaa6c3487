//! Training data, the regularized loss, Adam and the projected training loop.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::network::{finalize_bn, forward, forward_on_graph, project_convex, ConstraintPlan, Mode, NetworkSpec, ParamSet, Tracking};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tomo::{add_noise, ProjectionOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    /// `z = F^+(F x + noise)`.
    Artifact,
    /// `z = x`.
    Clean,
}

impl SampleKind {
    pub fn name(self) -> &'static str {
        match self {
            SampleKind::Artifact => "artifact",
            SampleKind::Clean => "clean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "artifact" => Some(SampleKind::Artifact),
            "clean" => Some(SampleKind::Clean),
            _ => None,
        }
    }
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// Network input.
    pub z: Tensor<T>,
    /// Label `|x - z|`.
    pub r: Tensor<T>,
    /// Ground truth `x`.
    pub truth: Tensor<T>,
    /// Measured sinogram (noisy for artifact samples, exact for clean ones).
    pub sinogram: Tensor<T>,
    pub kind: SampleKind,
    pub noise_level: f64,
    /// `norm_y` of the injected noise.
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitKind::Train),
            "validation" => Some(SplitKind::Validation),
            "test" => Some(SplitKind::Test),
            _ => None,
        }
    }
}

/// Disjoint index sets covering a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Random split in the proportions 10 : 2 : 1 (train : validation : test).
    pub fn proportional<R: Rng>(total: usize, rng: &mut R) -> Self {
        let test = total / 13;
        let validation = 2 * total / 13;
        Self::random(total, total - validation - test, validation, rng)
    }

    /// Random split with explicit train and validation sizes; the rest is test.
    pub fn random<R: Rng>(total: usize, train: usize, validation: usize, rng: &mut R) -> Self {
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(rng);
        let test = idx.split_off((train + validation).min(total));
        let validation = idx.split_off(train.min(idx.len()));
        let mut s = Self { train: idx, validation, test };
        s.train.sort_unstable();
        s.validation.sort_unstable();
        s.test.sort_unstable();
        s
    }

    pub fn kind_of(&self, i: usize) -> Option<SplitKind> {
        if self.train.binary_search(&i).is_ok() {
            Some(SplitKind::Train)
        } else if self.validation.binary_search(&i).is_ok() {
            Some(SplitKind::Validation)
        } else if self.test.binary_search(&i).is_ok() {
            Some(SplitKind::Test)
        } else {
            None
        }
    }

    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    fn check(&self, total: usize) -> Result<()> {
        let mut seen = vec![false; total];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= total || seen[i] {
                return Err(Error::invalid("Split", format!("index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("Split", "splits do not cover the dataset"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Vec<Sample<T>>, split: Split) -> Result<Self> {
        split.check(samples.len())?;
        Ok(Self { samples, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Inputs and labels of `indices` stacked as `[B, h, w, 1]` batches.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let zs: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.samples[i].z).collect();
        let rs: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.samples[i].r).collect();
        Ok((stack_images(&zs)?, stack_images(&rs)?))
    }
}

/// Stacks `[h, w]` images into a `[B, h, w, 1]` batch.
pub fn stack_images<T: Scalar>(images: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("stack_images", "empty batch"))?;
    let (h, w) = match *first.shape() {
        [h, w] | [h, w, 1] => (h, w),
        _ => return Err(Error::shape("stack_images", "[h, w] images", format!("{:?}", first.shape()))),
    };
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if im.len() != h * w {
            return Err(Error::shape("stack_images", format!("{h}x{w} images"), format!("{:?}", im.shape())));
        }
        data.extend_from_slice(im.data());
    }
    Tensor::new(&[images.len(), h, w, 1], data)
}

/// Dataset options besides the phantoms and the operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n1: usize,
    pub n2: usize,
    pub noise_range: (f64, f64),
    pub art_rounds: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n1: 130,
            n2: 130,
            noise_range: (0.0, 0.10),
            art_rounds: 5,
            seed: 0,
        }
    }
}

/// The first `n1` phantoms become artifact samples with a noise level drawn
/// uniformly from `noise_range`; the last `n2` become clean samples. Splits
/// are drawn in the proportions of [`Split::proportional`].
pub fn build_dataset<T: Scalar>(phantoms: &[Tensor<T>], op: &ProjectionOperator<T>, cfg: &DatasetConfig) -> Result<Dataset<T>> {
    const OP: &str = "build_dataset";
    if phantoms.len() != cfg.n1 + cfg.n2 {
        return Err(Error::invalid(OP, format!("{} phantoms given, n1 + n2 = {}", phantoms.len(), cfg.n1 + cfg.n2)));
    }
    let (lo, hi) = cfg.noise_range;
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::invalid(OP, format!("bad noise range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(phantoms.len());
    for (s, x) in phantoms.iter().enumerate() {
        let x = x.reshaped(&[op.image_size(), op.image_size()])?;
        let clean = op.apply(&x)?;
        let sample = if s < cfg.n1 {
            let level = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let (noisy, delta) = add_noise(&clean, level, &mut rng)?;
            let z = op.pseudo_inverse(&noisy, cfg.art_rounds)?;
            let r = x.zip_map(&z, |a, b| (a - b).abs())?;
            Sample {
                z,
                r,
                truth: x,
                sinogram: noisy,
                kind: SampleKind::Artifact,
                noise_level: level,
                delta: delta.as_f64(),
            }
        } else {
            Sample {
                r: Tensor::zeros(x.shape()),
                z: x.clone(),
                truth: x,
                sinogram: clean,
                kind: SampleKind::Clean,
                noise_level: 0.0,
                delta: 0.0,
            }
        };
        samples.push(sample);
    }
    let split = Split::proportional(samples.len(), &mut rng);
    Dataset::new(samples, split)
}

/// `(1/B) sum_s |Phi(z_s) - r_s|^2 + lambda |Theta_free|^2` with batch
/// normalization in training mode, and its gradient with respect to every
/// free parameter.
pub fn loss_batch<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    z: &Tensor<T>,
    r: &Tensor<T>,
    lambda: f64,
) -> Result<(T, BTreeMap<String, Tensor<T>>)> {
    let b = z.shape().first().copied().unwrap_or(0);
    if b == 0 {
        return Err(Error::invalid("loss_batch", "empty batch"));
    }
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let (out, bound) = forward_on_graph(spec, params, &mut g, zv, Mode::Train, Tracking::Free)?;
    let rv = g.constant(r.reshaped(g.value(out).shape())?);
    let diff = g.sub(out, rv)?;
    let sq = g.sum_squares(diff);
    let data = g.scale(sq, T::one() / T::from_usize_lossy(b));
    let mut grads = g.backward(data)?;
    let lam = T::lit(lambda);
    let mut loss = g.value(data).item()?;
    let mut out_grads = BTreeMap::new();
    for (id, p) in params.iter() {
        if p.frozen {
            continue;
        }
        let mut grad = match bound.get(id) {
            Some(&v) => grads.take(v)?,
            None => Tensor::zeros(p.tensor.shape()),
        };
        if lambda != 0.0 {
            loss += lam * p.tensor.norm_sq();
            grad.axpy(T::lit(2.0) * lam, &p.tensor)?;
        }
        out_grads.insert(id.to_string(), grad);
    }
    Ok((loss, out_grads))
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        Some((self.m.get(id)?, self.v.get(id)?))
    }

    /// One update of every parameter in `grads`; frozen parameters are
    /// rejected.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (id, g) in grads {
            let p = params.get_mut(id)?;
            if p.frozen {
                return Err(Error::invalid("Adam::step", format!("parameter `{id}` is frozen")));
            }
            p.tensor.expect_same_shape("Adam::step", g)?;
            let m = self.m.entry(id.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(id.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 10,
            lr: 5e-4,
            lambda: 5e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    /// `None` when the validation split is empty.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Order in which training samples were visited, per epoch.
    pub permutations: Vec<Vec<usize>>,
}

impl History {
    /// CSV with columns `epoch,batch,train_loss,val_loss`. Batch rows leave
    /// `val_loss` empty; one row per epoch with `batch` empty carries it.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,batch,train_loss,val_loss")?;
        let mut bi = 0;
        for e in &self.epochs {
            while bi < self.batches.len() && self.batches[bi].epoch == e.epoch {
                let b = &self.batches[bi];
                writeln!(w, "{},{},{:e},", b.epoch, b.batch, b.train_loss)?;
                bi += 1;
            }
            let val = e.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(w, "{},,{:e},{}", e.epoch, e.mean_train_loss, val)?;
        }
        Ok(())
    }
}

/// Validation loss: training-mode batch normalization over all of
/// `indices` as one batch, same formula as the training loss.
pub fn validation_loss<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>, ds: &Dataset<T>, indices: &[usize], lambda: f64) -> Result<Option<f64>> {
    if indices.is_empty() {
        return Ok(None);
    }
    let (z, r) = ds.batch(indices)?;
    let out = forward(spec, params, &z, Mode::Train)?;
    let data = out.sub(&r)?.norm_sq().as_f64() / indices.len() as f64;
    Ok(Some(data + lambda * params.free_norm_sq().as_f64()))
}

/// Trains on the train split: each epoch reshuffles, runs Adam on every
/// mini-batch (the last one may be short) and projects onto the constraint
/// set after every step. `on_epoch` runs after each epoch.
pub fn train<T: Scalar>(
    spec: &NetworkSpec,
    params: &mut ParamSet<T>,
    plan: &ConstraintPlan,
    ds: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamSet<T>) -> Result<()>,
) -> Result<History> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("train", "batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut history = History::default();
    let mut order = ds.split.train.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (z, r) = ds.batch(chunk)?;
            let (loss, grads) = loss_batch(spec, params, &z, &r, cfg.lambda)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::invalid("train", format!("non-finite loss in epoch {epoch}, batch {}", bi + 1)));
            }
            adam.step(params, &grads)?;
            project_convex(params, plan)?;
            history.batches.push(BatchRecord { epoch, batch: bi + 1, train_loss: loss });
            total += loss;
            count += 1;
        }
        let rec = EpochRecord {
            epoch,
            mean_train_loss: if count > 0 { total / count as f64 } else { 0.0 },
            val_loss: validation_loss(spec, params, ds, &ds.split.validation, cfg.lambda)?,
        };
        on_epoch(&rec, params)?;
        history.epochs.push(rec);
        history.permutations.push(order.clone());
    }
    Ok(history)
}

/// Freezes batch-normalization statistics over the whole train split.
pub fn finalize<T: Scalar>(spec: &NetworkSpec, params: &mut ParamSet<T>, ds: &Dataset<T>) -> Result<()> {
    let (z, _) = ds.batch(&ds.split.train)?;
    finalize_bn(spec, params, &z)
}

/// `(1/N) |Phi(z_s) - r_s|^2` per sample in inference mode.
pub fn per_sample_mse<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>, ds: &Dataset<T>, indices: &[usize]) -> Result<Vec<(usize, SampleKind, f64)>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(16) {
        let (z, r) = ds.batch(chunk)?;
        let pred = forward(spec, params, &z, Mode::Infer)?;
        let per = pred.len() / chunk.len();
        for (k, &i) in chunk.iter().enumerate() {
            let sl = k * per..(k + 1) * per;
            let se: f64 = pred.data()[sl.clone()].iter().zip(&r.data()[sl]).map(|(a, b)| (*a - *b).as_f64().powi(2)).sum();
            out.push((i, ds.samples[i].kind, se / per as f64));
        }
    }
    Ok(out)
}
