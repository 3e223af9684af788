//! The attention classifier, its hand-written backward pass and training.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GestureError, GestureLabel, GestureWindow, Recording, JOINTS, WINDOW};

/// Hidden width.
pub const DIM: usize = 128;
const CLASSES: usize = 4;

/// Parameters. Per time step: `relu(x·w1 + b1)`, then `relu(·w2 + b2)`;
/// single-head self-attention over the twelve steps with `wq`, `wk`, `wv`;
/// mean over time; `sigmoid(·wc + bc)`. Biases are stored as 1×n rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureNet {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wc: Array2<f64>,
    pub bc: Array2<f64>,
}

const NAMES: [&str; 9] = ["w1", "b1", "w2", "b2", "wq", "wk", "wv", "wc", "bc"];

const SHAPES: [(usize, usize); 9] = [
    (JOINTS, DIM),
    (1, DIM),
    (DIM, DIM),
    (1, DIM),
    (DIM, DIM),
    (DIM, DIM),
    (DIM, DIM),
    (DIM, CLASSES),
    (1, CLASSES),
];

#[derive(Serialize, Deserialize)]
struct ParamFile {
    shape: [usize; 2],
    data: Vec<f64>,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` without forming σ(z).
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// A batch of windows stacked as `(batch·12) × 19` with one target row of
/// four 0/1 values per window.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn from_windows(windows: &[(&GestureWindow, GestureLabel)]) -> Self {
        let mut x = Array2::zeros((windows.len() * WINDOW, JOINTS));
        let mut targets = Array2::zeros((windows.len(), CLASSES));
        for (b, (w, label)) in windows.iter().enumerate() {
            for (t, f) in w.frames().iter().enumerate() {
                x.row_mut(b * WINDOW + t).assign(&Array1::from(f.flexion.to_vec()));
            }
            targets[[b, label.index()]] = 1.0;
        }
        Self { x, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(samples: &[Array2<f64>], labels: &[usize], order: &[usize]) -> Self {
        let mut x = Array2::zeros((order.len() * WINDOW, JOINTS));
        let mut targets = Array2::zeros((order.len(), CLASSES));
        for (b, &i) in order.iter().enumerate() {
            x.slice_mut(s![b * WINDOW..(b + 1) * WINDOW, ..]).assign(&samples[i]);
            targets[[b, labels[i]]] = 1.0;
        }
        Self { x, targets }
    }
}

struct Forward {
    pre1: Array2<f64>,
    h1: Array2<f64>,
    pre2: Array2<f64>,
    h2: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    attention: Vec<Array2<f64>>,
    /// Attention-weighted mean of `h2` per window, before `wv`.
    mixed: Array2<f64>,
    pooled: Array2<f64>,
    logits: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inference {
    pub confidences: [f64; CLASSES],
    pub label: GestureLabel,
}

impl GestureNet {
    pub fn zeros() -> Self {
        let z = |i: usize| Array2::zeros(SHAPES[i]);
        Self {
            w1: z(0),
            b1: z(1),
            w2: z(2),
            b2: z(3),
            wq: z(4),
            wk: z(5),
            wv: z(6),
            wc: z(7),
            bc: z(8),
        }
    }

    /// Uniform in ±1/√fan_in for every weight and bias.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut net = Self::zeros();
        for (i, (_, p)) in net.params_mut().into_iter().enumerate() {
            let fan_in = if SHAPES[i].0 == 1 { SHAPES[i - 1].0 } else { SHAPES[i].0 };
            let bound = 1.0 / (fan_in as f64).sqrt();
            p.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        net
    }

    pub fn params(&self) -> [(&'static str, &Array2<f64>); 9] {
        let p = [&self.w1, &self.b1, &self.w2, &self.b2, &self.wq, &self.wk, &self.wv, &self.wc, &self.bc];
        std::array::from_fn(|i| (NAMES[i], p[i]))
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 9] {
        let Self {
            w1,
            b1,
            w2,
            b2,
            wq,
            wk,
            wv,
            wc,
            bc,
        } = self;
        let mut p = [w1, b1, w2, b2, wq, wk, wv, wc, bc].into_iter();
        std::array::from_fn(|i| (NAMES[i], p.next().expect("nine parameters")))
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.iter().all(|v| v.is_finite()))
    }

    fn forward(&self, x: &Array2<f64>) -> Forward {
        let batch = x.nrows() / WINDOW;
        let pre1 = x.dot(&self.w1) + &self.b1;
        let h1 = pre1.mapv(relu);
        let pre2 = h1.dot(&self.w2) + &self.b2;
        let h2 = pre2.mapv(relu);
        let q = h2.dot(&self.wq);
        let k = h2.dot(&self.wk);
        let scale = 1.0 / (DIM as f64).sqrt();
        let mut mixed = Array2::zeros((batch, DIM));
        let mut attention = Vec::with_capacity(batch);
        for b in 0..batch {
            let rows = s![b * WINDOW..(b + 1) * WINDOW, ..];
            let mut a = q.slice(rows).dot(&k.slice(rows).t()) * scale;
            softmax_rows(&mut a);
            // mean_t(A·H·Wv) = (mean_t(A)·H)·Wv, so V is never formed.
            let mean_a = a.mean_axis(Axis(0)).expect("non-empty window");
            mixed.row_mut(b).assign(&mean_a.dot(&h2.slice(rows)));
            attention.push(a);
        }
        let pooled = mixed.dot(&self.wv);
        let logits = pooled.dot(&self.wc) + &self.bc;
        Forward {
            pre1,
            h1,
            pre2,
            h2,
            q,
            k,
            attention,
            mixed,
            pooled,
            logits,
        }
    }

    /// Sigmoid confidences, one row per window in the batch.
    pub fn confidences(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).logits.mapv(sigmoid)
    }

    /// Attention matrix (query step × key step) for one window.
    pub fn attention(&self, w: &GestureWindow) -> Array2<f64> {
        let batch = Batch::from_windows(&[(w, GestureLabel::Background)]);
        self.forward(&batch.x).attention.remove(0)
    }

    /// Mean over windows of the per-class binary cross-entropy summed over
    /// classes.
    pub fn loss(&self, batch: &Batch) -> f64 {
        let logits = self.forward(&batch.x).logits;
        let total: f64 = logits
            .iter()
            .zip(batch.targets.iter())
            .map(|(&z, &y)| bce_with_logit(z, y))
            .sum();
        total / batch.len() as f64
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, ParamFile> = self
            .params()
            .into_iter()
            .map(|(n, p)| {
                (
                    n,
                    ParamFile {
                        shape: [p.nrows(), p.ncols()],
                        data: p.iter().copied().collect(),
                    },
                )
            })
            .collect();
        serde_json::to_string(&map).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GestureError> {
        let bad = |m: String| GestureError::InvalidParameters(m);
        let mut map: BTreeMap<String, ParamFile> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut net = Self::zeros();
        for (i, (name, p)) in net.params_mut().into_iter().enumerate() {
            let f = map.remove(name).ok_or_else(|| bad(format!("missing {name}")))?;
            if f.shape != [SHAPES[i].0, SHAPES[i].1] {
                return Err(bad(format!("{name} has shape {:?}", f.shape)));
            }
            *p = Array2::from_shape_vec(SHAPES[i], f.data).map_err(|e| bad(format!("{name}: {e}")))?;
        }
        if let Some(extra) = map.keys().next() {
            return Err(bad(format!("unexpected parameter {extra}")));
        }
        if !net.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(net)
    }
}

/// Classifies one window. The label is the most confident class; ties go to
/// Background, then to the lowest class index.
pub fn infer(net: &GestureNet, w: &GestureWindow) -> Inference {
    let c = net.confidences(&Batch::from_windows(&[(w, GestureLabel::Background)]).x);
    let confidences: [f64; CLASSES] = std::array::from_fn(|i| c[[0, i]]);
    Inference {
        confidences,
        label: argmax_label(&confidences),
    }
}

fn argmax_label(c: &[f64; CLASSES]) -> GestureLabel {
    let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if c[GestureLabel::Background.index()] == max {
        return GestureLabel::Background;
    }
    let i = c.iter().position(|&v| v == max).unwrap_or(GestureLabel::Background.index());
    GestureLabel::ALL[i]
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_gradients(net: &GestureNet, batch: &Batch) -> (f64, GestureNet) {
    let n = batch.len();
    let f = net.forward(&batch.x);
    let loss = f
        .logits
        .iter()
        .zip(batch.targets.iter())
        .map(|(&z, &y)| bce_with_logit(z, y))
        .sum::<f64>()
        / n as f64;

    let dlogits = (f.logits.mapv(sigmoid) - &batch.targets) / n as f64;
    let mut g = GestureNet::zeros();
    g.wc = f.pooled.t().dot(&dlogits);
    g.bc = dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dpooled = dlogits.dot(&net.wc.t());

    g.wv = f.mixed.t().dot(&dpooled);
    let dmixed = dpooled.dot(&net.wv.t());

    let scale = 1.0 / (DIM as f64).sqrt();
    let rows_total = n * WINDOW;
    let mut dq = Array2::zeros((rows_total, DIM));
    let mut dk = Array2::zeros((rows_total, DIM));
    let mut dh2_mix = Array2::zeros((rows_total, DIM));
    for b in 0..n {
        let rows = s![b * WINDOW..(b + 1) * WINDOW, ..];
        let a = &f.attention[b];
        let dm = dmixed.row(b);
        let mean_a = a.mean_axis(Axis(0)).expect("non-empty window");
        for (s_idx, mut row) in dh2_mix.slice_mut(rows).rows_mut().into_iter().enumerate() {
            row.assign(&(&dm * mean_a[s_idx]));
        }
        // dA[t, s] is the same for every query step t.
        let g_s = f.h2.slice(rows).dot(&dm) / WINDOW as f64;
        let mut ds = Array2::zeros((WINDOW, WINDOW));
        for t in 0..WINDOW {
            let dot: f64 = (0..WINDOW).map(|s| a[[t, s]] * g_s[s]).sum();
            for s in 0..WINDOW {
                ds[[t, s]] = a[[t, s]] * (g_s[s] - dot) * scale;
            }
        }
        dq.slice_mut(rows).assign(&ds.dot(&f.k.slice(rows)));
        dk.slice_mut(rows).assign(&ds.t().dot(&f.q.slice(rows)));
    }
    g.wq = f.h2.t().dot(&dq);
    g.wk = f.h2.t().dot(&dk);
    let dh2 = dq.dot(&net.wq.t()) + dk.dot(&net.wk.t()) + dh2_mix;
    let dpre2 = dh2 * f.pre2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.w2 = f.h1.t().dot(&dpre2);
    g.b2 = dpre2.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dh1 = dpre2.dot(&net.w2.t());
    let dpre1 = dh1 * f.pre1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.w1 = batch.x.t().dot(&dpre1);
    g.b1 = dpre1.sum_axis(Axis(0)).insert_axis(Axis(0));
    (loss, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub net: GestureNet,
    /// Training-set loss before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss over each epoch.
    pub epoch_losses: Vec<f64>,
    /// Training-set loss after the last update.
    pub final_loss: f64,
    pub holdout_accuracy: f64,
    /// Held-out counts indexed by (true class, predicted class).
    pub holdout_confusion: [[usize; CLASSES]; CLASSES],
    pub train_windows: usize,
    pub holdout_windows: usize,
}

struct Split {
    samples: Vec<Array2<f64>>,
    labels: Vec<usize>,
}

impl Split {
    fn push(&mut self, w: &GestureWindow, label: GestureLabel) {
        let mut m = Array2::zeros((WINDOW, JOINTS));
        for (t, f) in w.frames().iter().enumerate() {
            for (j, &a) in f.flexion.iter().enumerate() {
                m[[t, j]] = a;
            }
        }
        self.samples.push(m);
        self.labels.push(label.index());
    }

    fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let order: Vec<usize> = (0..self.samples.len()).collect();
        order
            .chunks(size)
            .map(|c| Batch::gather(&self.samples, &self.labels, c))
            .collect::<Vec<_>>()
            .into_iter()
    }

    fn mean_loss(&self, net: &GestureNet) -> f64 {
        let total: f64 = self.chunks(512).map(|b| net.loss(&b) * b.len() as f64).sum();
        total / self.samples.len() as f64
    }

    /// Counts indexed by (true class, predicted class).
    fn confusion(&self, net: &GestureNet) -> [[usize; CLASSES]; CLASSES] {
        let mut m = [[0; CLASSES]; CLASSES];
        let mut offset = 0usize;
        for b in self.chunks(512) {
            for row in net.confidences(&b.x).rows() {
                let conf: [f64; CLASSES] = std::array::from_fn(|i| row[i]);
                m[self.labels[offset]][argmax_label(&conf).index()] += 1;
                offset += 1;
            }
        }
        m
    }
}

/// Trains on every subject except `holdout` with mini-batch SGD and reports
/// held-out window accuracy. Deterministic for a fixed seed.
pub fn train(recordings: &[Recording], holdout: &str, cfg: &TrainConfig) -> Result<TrainReport, GestureError> {
    let mut subjects: Vec<&str> = recordings.iter().map(|r| r.subject.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(GestureError::TooFewSubjects(subjects.len()));
    }
    if !subjects.contains(&holdout) {
        return Err(GestureError::UnknownSubject(holdout.to_string()));
    }
    let mut training = Split {
        samples: Vec::new(),
        labels: Vec::new(),
    };
    let mut held = Split {
        samples: Vec::new(),
        labels: Vec::new(),
    };
    for r in recordings {
        let split = if r.subject == holdout { &mut held } else { &mut training };
        for w in r.windows()? {
            split.push(&w, r.label);
        }
    }
    for label in GestureLabel::ALL {
        if !training.labels.contains(&label.index()) {
            return Err(GestureError::ClassMissing(label));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = GestureNet::init(&mut rng);
    let initial_loss = training.mean_loss(&net);
    let mut order: Vec<usize> = (0..training.samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch = Batch::gather(&training.samples, &training.labels, chunk);
            let (loss, grads) = loss_and_gradients(&net, &batch);
            if !loss.is_finite() {
                return Err(GestureError::NonFiniteLoss(epoch));
            }
            total += loss * chunk.len() as f64;
            for ((_, p), (_, g)) in net.params_mut().into_iter().zip(grads.params()) {
                p.scaled_add(-cfg.learning_rate, g);
            }
        }
        epoch_losses.push(total / order.len() as f64);
    }
    let final_loss = training.mean_loss(&net);
    if !final_loss.is_finite() {
        return Err(GestureError::NonFiniteLoss(cfg.epochs));
    }
    let holdout_confusion = held.confusion(&net);
    let correct: usize = (0..CLASSES).map(|i| holdout_confusion[i][i]).sum();
    Ok(TrainReport {
        holdout_accuracy: correct as f64 / held.samples.len().max(1) as f64,
        holdout_confusion,
        train_windows: training.samples.len(),
        holdout_windows: held.samples.len(),
        net,
        initial_loss,
        epoch_losses,
        final_loss,
    })
}
