//! The full network: shared bottom (global MLP, object autoencoder, word
//! BLSTM) feeding one attention stack and prediction head per task.
//!
//! Records are processed one at a time. A record's losses and gradients go
//! through [`Model::accumulate_record`], which folds the batch normalization
//! into the gradient scale so the trainer only has to sum.

use serde::{Deserialize, Serialize};

use crate::attention::{InterAttention, InterCache, IntraAttention, IntraCache};
use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::layers::{dropout, Autoencoder, AutoencoderConfig, Blstm, BlstmCache, EncodeCache, Linear, Mlp, MlpCache, MlpConfig};
use crate::numerics::{axpy, relu, sigmoid, Matrix, Rng};
use crate::params::{join, Parameterized};
use crate::training::loss::{loss_ml, loss_ml_logit_grad, reconstruction_error, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SingleTask {
    #[default]
    Off,
    Topic,
    Sentiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_autoencoder: bool,
    pub no_hier_attention: bool,
    pub single_task: SingleTask,
}

impl Ablation {
    /// All three components removed at once.
    pub fn all(task: SingleTask) -> Self {
        Self {
            no_autoencoder: true,
            no_hier_attention: true,
            single_task: task,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Topic,
    Sentiment,
}

impl Task {
    pub const BOTH: [Task; 2] = [Task::Topic, Task::Sentiment];

    pub fn name(self) -> &'static str {
        match self {
            Task::Topic => "topic",
            Task::Sentiment => "sentiment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_img: usize,
    pub d_obj: usize,
    pub d_word: usize,
    pub d_shared: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub n_topics: usize,
    pub n_sentiments: usize,
    pub dropout_rate: f64,
    pub ablation: Ablation,
    /// Hidden widths inside the object autoencoder (each side).
    pub ae_hidden: Vec<usize>,
    pub ae_latent_relu: bool,
    /// Start both output layers at zero, so every probability is 0.5.
    pub zero_init_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_img: 2048,
            d_obj: 2048,
            d_word: 300,
            d_shared: 1024,
            lstm_hidden: 512,
            head_hidden: 512,
            n_topics: 38,
            n_sentiments: 30,
            dropout_rate: 0.0,
            ablation: Ablation::default(),
            ae_hidden: Vec::new(),
            ae_latent_relu: true,
            zero_init_heads: false,
        }
    }
}

impl ModelConfig {
    /// Small widths that keep finite-difference checks cheap.
    pub fn tiny() -> Self {
        Self {
            d_img: 5,
            d_obj: 4,
            d_word: 3,
            d_shared: 6,
            lstm_hidden: 3,
            head_hidden: 5,
            n_topics: 4,
            n_sentiments: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_img", self.d_img),
            ("d_obj", self.d_obj),
            ("d_word", self.d_word),
            ("d_shared", self.d_shared),
            ("lstm_hidden", self.lstm_hidden),
            ("head_hidden", self.head_hidden),
            ("n_topics", self.n_topics),
            ("n_sentiments", self.n_sentiments),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
        if self.ae_hidden.contains(&0) {
            return Err(Error::config("autoencoder hidden widths must be at least 1"));
        }
        if 2 * self.lstm_hidden != self.d_shared {
            return Err(Error::config(format!(
                "BLSTM output 2 x {} does not match d_shared {}",
                self.lstm_hidden, self.d_shared
            )));
        }
        crate::layers::check_rate(self.dropout_rate)
    }

    pub fn labels(&self, task: Task) -> usize {
        match task {
            Task::Topic => self.n_topics,
            Task::Sentiment => self.n_sentiments,
        }
    }

    pub fn task_active(&self, task: Task) -> bool {
        !matches!(
            (self.ablation.single_task, task),
            (SingleTask::Topic, Task::Sentiment) | (SingleTask::Sentiment, Task::Topic)
        )
    }

    /// Loss weights after the single-task ablation zeroes the other term.
    pub fn effective_weights(&self, w: &LossWeights) -> LossWeights {
        LossWeights {
            alpha: if self.task_active(Task::Topic) { w.alpha } else { 0.0 },
            beta: if self.task_active(Task::Sentiment) { w.beta } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectBranch {
    Autoencoder(Autoencoder),
    /// Plain linear projection used when the autoencoder is ablated.
    Projection(Linear),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub object_attention: IntraAttention,
    pub word_attention: IntraAttention,
    pub inter: InterAttention,
    pub hidden: Linear,
    pub output: Linear,
}

impl TaskHead {
    fn new(d: usize, hidden: usize, labels: usize, zero_output: bool, rng: &mut Rng) -> Self {
        let object_attention = IntraAttention::new(d, rng);
        let word_attention = IntraAttention::new(d, rng);
        let hidden = Linear::glorot(3 * d, hidden, rng);
        let output = if zero_output {
            Linear::zeros(hidden.out_dim(), labels)
        } else {
            Linear::glorot(hidden.out_dim(), labels, rng)
        };
        Self {
            object_attention,
            word_attention,
            inter: InterAttention::default(),
            hidden,
            output,
        }
    }
}

impl Parameterized for TaskHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.object_attention.visit(&join(prefix, "object_attention"), f);
        self.word_attention.visit(&join(prefix, "word_attention"), f);
        self.inter.visit(&join(prefix, "inter"), f);
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.object_attention.visit_mut(&join(prefix, "object_attention"), f);
        self.word_attention.visit_mut(&join(prefix, "word_attention"), f);
        self.inter.visit_mut(&join(prefix, "inter"), f);
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Parameters plus the config that shaped them. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub global_mlp: Mlp,
    pub objects: ObjectBranch,
    pub blstm: Blstm,
    pub topic: TaskHead,
    pub sentiment: TaskHead,
}

impl Parameterized for Model {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        let shared = join(prefix, "shared");
        self.global_mlp.visit(&join(&shared, "global_mlp"), f);
        match &self.objects {
            ObjectBranch::Autoencoder(ae) => ae.visit(&join(&shared, "object_autoencoder"), f),
            ObjectBranch::Projection(l) => l.visit(&join(&shared, "object_projection"), f),
        }
        self.blstm.visit(&join(&shared, "blstm"), f);
        self.topic.visit(&join(prefix, "topic"), f);
        self.sentiment.visit(&join(prefix, "sentiment"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        let shared = join(prefix, "shared");
        self.global_mlp.visit_mut(&join(&shared, "global_mlp"), f);
        match &mut self.objects {
            ObjectBranch::Autoencoder(ae) => ae.visit_mut(&join(&shared, "object_autoencoder"), f),
            ObjectBranch::Projection(l) => l.visit_mut(&join(&shared, "object_projection"), f),
        }
        self.blstm.visit_mut(&join(&shared, "blstm"), f);
        self.topic.visit_mut(&join(prefix, "topic"), f);
        self.sentiment.visit_mut(&join(prefix, "sentiment"), f);
    }
}

/// Shared-bottom outputs for one record.
#[derive(Debug, Clone)]
pub struct ModalBundle {
    pub z_visual: Vec<f64>,
    pub z_objects: Vec<Vec<f64>>,
    pub z_words: Vec<Vec<f64>>,
    /// `(x_hat, x)` per object; empty when the autoencoder is ablated.
    pub reconstructions: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
enum ObjectCache {
    Encoded { enc: EncodeCache, dec: MlpCache },
    Projected { x: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct SharedCache {
    mlp: MlpCache,
    objects: Vec<ObjectCache>,
    words: Option<BlstmCache>,
}

#[derive(Debug, Clone)]
enum PoolCache {
    Empty,
    Attended(IntraCache),
    Mean(usize),
}

#[derive(Debug, Clone)]
pub struct TaskCache {
    objects: PoolCache,
    words: PoolCache,
    /// `None` under the no-hierarchical-attention ablation.
    inter: Option<InterCache>,
    r: Vec<f64>,
    hidden_pre: Vec<f64>,
    mask: Vec<f64>,
    r0: Vec<f64>,
    probs: Vec<f64>,
}

impl TaskCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Intra-modality weights over objects, if attention ran.
    pub fn object_weights(&self) -> Option<&[f64]> {
        match &self.objects {
            PoolCache::Attended(c) => Some(c.weights()),
            _ => None,
        }
    }
}

/// Per-record loss terms; `None` where the term does not apply.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecordLoss {
    pub share: Option<f64>,
    pub topic: Option<f64>,
    pub sentiment: Option<f64>,
}

/// Batch-level normalizers for [`Model::accumulate_record`].
#[derive(Debug, Clone, Copy)]
pub struct BatchNorms {
    pub records: usize,
    /// Records in the batch with at least one object.
    pub records_with_objects: usize,
}

impl BatchNorms {
    pub fn of(records: &[&FeatureRecord]) -> Self {
        Self {
            records: records.len(),
            records_with_objects: records.iter().filter(|r| r.n_objects() > 0).count(),
        }
    }
}

fn pool_mean(zs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for z in zs {
        axpy(&mut m, 1.0 / zs.len() as f64, z);
    }
    m
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let d = config.d_shared;
        let global_mlp = Mlp::new(
            &MlpConfig {
                layer_dims: vec![config.d_img, d, d],
                dropout_rate: config.dropout_rate,
            },
            &mut rng,
        )?;
        let objects = if config.ablation.no_autoencoder {
            ObjectBranch::Projection(Linear::glorot(config.d_obj, d, &mut rng))
        } else {
            ObjectBranch::Autoencoder(Autoencoder::new(
                &AutoencoderConfig {
                    input_dim: config.d_obj,
                    latent_dim: d,
                    hidden_dims: config.ae_hidden.clone(),
                    latent_relu: config.ae_latent_relu,
                },
                &mut rng,
            )?)
        };
        let blstm = Blstm::new(config.d_word, config.lstm_hidden, &mut rng);
        let topic = TaskHead::new(d, config.head_hidden, config.n_topics, config.zero_init_heads, &mut rng);
        let sentiment = TaskHead::new(d, config.head_hidden, config.n_sentiments, config.zero_init_heads, &mut rng);
        let model = Self {
            config,
            global_mlp,
            objects,
            blstm,
            topic,
            sentiment,
        };
        log::debug!("built model with {} parameters", model.parameter_count());
        Ok(model)
    }

    pub fn head(&self, task: Task) -> &TaskHead {
        match task {
            Task::Topic => &self.topic,
            Task::Sentiment => &self.sentiment,
        }
    }

    fn head_mut(&mut self, task: Task) -> &mut TaskHead {
        match task {
            Task::Topic => &mut self.topic,
            Task::Sentiment => &mut self.sentiment,
        }
    }

    fn check_record(&self, rec: &FeatureRecord) -> Result<()> {
        let c = &self.config;
        let bad = |what: &str, got: usize, want: usize| {
            Err(Error::data(&rec.id, format!("{what} has dim {got}, model expects {want}")))
        };
        if rec.global_feature.len() != c.d_img {
            return bad("global feature", rec.global_feature.len(), c.d_img);
        }
        if let Some(x) = rec.object_features.iter().find(|x| x.len() != c.d_obj) {
            return bad("object feature", x.len(), c.d_obj);
        }
        if let Some(x) = rec.word_embeddings.iter().find(|x| x.len() != c.d_word) {
            return bad("word embedding", x.len(), c.d_word);
        }
        Ok(())
    }

    pub fn shared_forward(&self, rec: &FeatureRecord, rng: Option<&mut Rng>) -> Result<(ModalBundle, SharedCache)> {
        self.check_record(rec)?;
        let (z_visual, mlp) = self.global_mlp.forward(&rec.global_feature, rng)?;

        let mut z_objects = Vec::with_capacity(rec.n_objects());
        let mut reconstructions = Vec::new();
        let mut objects = Vec::with_capacity(rec.n_objects());
        for x in &rec.object_features {
            match &self.objects {
                ObjectBranch::Autoencoder(ae) => {
                    let (z, enc) = ae.encode(x)?;
                    let (x_hat, dec) = ae.decode(&z)?;
                    reconstructions.push((x_hat, x.clone()));
                    z_objects.push(z);
                    objects.push(ObjectCache::Encoded { enc, dec });
                }
                ObjectBranch::Projection(l) => {
                    z_objects.push(l.forward(x));
                    objects.push(ObjectCache::Projected { x: x.clone() });
                }
            }
        }

        let (z_words, words) = if rec.word_embeddings.is_empty() {
            (Vec::new(), None)
        } else {
            let (zs, cache) = self.blstm.forward(&rec.word_embeddings)?;
            (zs, Some(cache))
        };

        Ok((
            ModalBundle {
                z_visual,
                z_objects,
                z_words,
                reconstructions,
            },
            SharedCache { mlp, objects, words },
        ))
    }

    fn pool(&self, attn: &IntraAttention, zs: &[Vec<f64>]) -> Result<(Vec<f64>, PoolCache)> {
        let d = self.config.d_shared;
        if zs.is_empty() {
            return Ok((vec![0.0; d], PoolCache::Empty));
        }
        if self.config.ablation.no_hier_attention {
            return Ok((pool_mean(zs, d), PoolCache::Mean(zs.len())));
        }
        let (m, _, cache) = attn.attend(zs)?;
        Ok((m, PoolCache::Attended(cache)))
    }

    pub fn task_forward(&self, task: Task, bundle: &ModalBundle, rng: Option<&mut Rng>) -> Result<(Vec<f64>, TaskCache)> {
        let head = self.head(task);
        let (m_obj, objects) = self.pool(&head.object_attention, &bundle.z_objects)?;
        let (m_word, words) = self.pool(&head.word_attention, &bundle.z_words)?;
        let (r, inter) = if self.config.ablation.no_hier_attention {
            let mut r = bundle.z_visual.clone();
            r.extend_from_slice(&m_obj);
            r.extend_from_slice(&m_word);
            (r, None)
        } else {
            let (r, c) = head.inter.combine(&bundle.z_visual, &m_obj, &m_word)?;
            (r, Some(c))
        };
        let hidden_pre = head.hidden.forward(&r);
        let act: Vec<f64> = hidden_pre.iter().map(|&v| relu(v)).collect();
        let (r0, mask) = dropout(&act, self.config.dropout_rate, rng)?;
        let probs: Vec<f64> = head.output.forward(&r0).into_iter().map(sigmoid).collect();
        let cache = TaskCache {
            objects,
            words,
            inter,
            r,
            hidden_pre,
            mask,
            r0,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Eval-mode probabilities for both tasks.
    pub fn predict_probs(&self, rec: &FeatureRecord) -> Result<(Vec<f64>, Vec<f64>)> {
        let (bundle, _) = self.shared_forward(rec, None)?;
        let (t, _) = self.task_forward(Task::Topic, &bundle, None)?;
        let (s, _) = self.task_forward(Task::Sentiment, &bundle, None)?;
        Ok((t, s))
    }

    /// Backward through one task head. Adds into the bundle-shaped gradient
    /// accumulators and the head's parameter gradients.
    fn task_backward(
        &self,
        task: Task,
        cache: &TaskCache,
        grad_logits: &[f64],
        acc: &mut BundleGrads,
        grads: &mut Model,
    ) -> Result<()> {
        let head = self.head(task);
        let g = grads.head_mut(task);
        let grad_r0 = head.output.backward(&cache.r0, grad_logits, &mut g.output);
        let grad_pre: Vec<f64> = grad_r0
            .iter()
            .zip(&cache.hidden_pre)
            .zip(&cache.mask)
            .map(|((g, &p), &m)| if p > 0.0 { g * m } else { 0.0 })
            .collect();
        let grad_r = head.hidden.backward(&cache.r, &grad_pre, &mut g.hidden);

        let [g_vis, g_obj, g_word] = match &cache.inter {
            Some(ic) => head.inter.backward(ic, &grad_r, &mut g.inter)?,
            None => {
                let d = self.config.d_shared;
                [
                    grad_r[..d].to_vec(),
                    grad_r[d..2 * d].to_vec(),
                    grad_r[2 * d..].to_vec(),
                ]
            }
        };
        axpy(&mut acc.visual, 1.0, &g_vis);
        unpool(&head.object_attention, &cache.objects, &g_obj, &mut g.object_attention, &mut acc.objects)?;
        unpool(&head.word_attention, &cache.words, &g_word, &mut g.word_attention, &mut acc.words)?;
        Ok(())
    }

    fn shared_backward(&self, cache: &SharedCache, acc: &BundleGrads, grads: &mut Model) -> Result<()> {
        self.global_mlp.backward(&cache.mlp, &acc.visual, &mut grads.global_mlp)?;
        if cache.objects.len() != acc.objects.len() {
            return Err(Error::usage("object cache does not match the gradient list"));
        }
        for ((oc, g), g_xhat) in cache.objects.iter().zip(&acc.objects).zip(&acc.reconstructions) {
            match (oc, &self.objects, &mut grads.objects) {
                (ObjectCache::Encoded { enc, dec }, ObjectBranch::Autoencoder(ae), ObjectBranch::Autoencoder(gae)) => {
                    let mut g_z = g.clone();
                    let from_dec = ae.decode_backward(dec, g_xhat, gae)?;
                    axpy(&mut g_z, 1.0, &from_dec);
                    ae.encode_backward(enc, &g_z, gae)?;
                }
                (ObjectCache::Projected { x }, ObjectBranch::Projection(l), ObjectBranch::Projection(gl)) => {
                    l.backward(x, g, gl);
                }
                _ => return Err(Error::usage("object cache does not match the object branch")),
            }
        }
        match &cache.words {
            Some(wc) => {
                self.blstm.backward(wc, &acc.words, &mut grads.blstm)?;
            }
            None if !acc.words.is_empty() => return Err(Error::usage("missing BLSTM cache")),
            None => {}
        }
        Ok(())
    }

    /// Runs forward and backward on one record, adding its share of the
    /// batch objective `L_share + alpha L_topic + beta L_sentiment` into
    /// `grads`. Task terms are normalized by `norms.records`, the
    /// reconstruction term by `norms.records_with_objects`.
    pub fn accumulate_record(
        &self,
        rec: &FeatureRecord,
        weights: &LossWeights,
        norms: BatchNorms,
        mut rng: Option<&mut Rng>,
        grads: &mut Model,
    ) -> Result<RecordLoss> {
        let w = self.config.effective_weights(weights);
        let (bundle, shared) = self.shared_forward(rec, rng.as_deref_mut())?;
        let d = self.config.d_shared;
        let mut acc = BundleGrads {
            visual: vec![0.0; d],
            objects: vec![vec![0.0; d]; bundle.z_objects.len()],
            words: vec![vec![0.0; d]; bundle.z_words.len()],
            reconstructions: Vec::new(),
        };
        let mut loss = RecordLoss::default();

        for task in Task::BOTH {
            if !self.config.task_active(task) {
                continue;
            }
            let labels = match task {
                Task::Topic => &rec.topic_labels,
                Task::Sentiment => &rec.sentiment_labels,
            };
            let (probs, cache) = self.task_forward(task, &bundle, rng.as_deref_mut())?;
            let value = loss_ml(&probs, labels)?;
            let scale = match task {
                Task::Topic => w.alpha,
                Task::Sentiment => w.beta,
            } / norms.records as f64;
            let grad: Vec<f64> = loss_ml_logit_grad(&probs, labels)?.iter().map(|g| g * scale).collect();
            self.task_backward(task, &cache, &grad, &mut acc, grads)?;
            match task {
                Task::Topic => loss.topic = Some(value),
                Task::Sentiment => loss.sentiment = Some(value),
            }
        }

        let n_obj = bundle.reconstructions.len();
        if n_obj > 0 {
            let total: f64 = bundle.reconstructions.iter().map(|(xh, x)| reconstruction_error(xh, x)).sum();
            loss.share = Some(total / n_obj as f64);
            let scale = 2.0 / (n_obj as f64 * norms.records_with_objects.max(1) as f64);
            acc.reconstructions = bundle
                .reconstructions
                .iter()
                .map(|(xh, x)| xh.iter().zip(x).map(|(a, b)| scale * (a - b)).collect())
                .collect();
        } else {
            acc.reconstructions = vec![Vec::new(); bundle.z_objects.len()];
        }
        self.shared_backward(&shared, &acc, grads)?;
        Ok(loss)
    }

    /// Batch objective in eval mode (or with per-record dropout streams when
    /// `stream_seed` is given), matching [`Model::accumulate_record`].
    pub fn batch_objective(&self, records: &[&FeatureRecord], weights: &LossWeights, stream_seed: Option<u64>) -> Result<f64> {
        let w = self.config.effective_weights(weights);
        let norms = BatchNorms::of(records);
        let mut total = 0.0;
        for (i, rec) in records.iter().enumerate() {
            let mut rng = stream_seed.map(|s| Rng::with_stream(s, i as u64));
            let (bundle, _) = self.shared_forward(rec, rng.as_mut())?;
            for task in Task::BOTH {
                if !self.config.task_active(task) {
                    continue;
                }
                let (probs, _) = self.task_forward(task, &bundle, rng.as_mut())?;
                let (weight, labels) = match task {
                    Task::Topic => (w.alpha, &rec.topic_labels),
                    Task::Sentiment => (w.beta, &rec.sentiment_labels),
                };
                total += weight * loss_ml(&probs, labels)? / norms.records as f64;
            }
            if let Some(s) = crate::training::loss::record_share(&bundle.reconstructions) {
                total += s / norms.records_with_objects as f64;
            }
        }
        Ok(total)
    }
}

/// Gradients w.r.t. the shared-bottom outputs of one record.
struct BundleGrads {
    visual: Vec<f64>,
    objects: Vec<Vec<f64>>,
    words: Vec<Vec<f64>>,
    /// `dL/dx_hat` per object; empty vectors when nothing was reconstructed.
    reconstructions: Vec<Vec<f64>>,
}

fn unpool(
    attn: &IntraAttention,
    cache: &PoolCache,
    grad_m: &[f64],
    grads: &mut IntraAttention,
    acc: &mut [Vec<f64>],
) -> Result<()> {
    match cache {
        PoolCache::Empty => Ok(()),
        PoolCache::Mean(n) => {
            for a in acc.iter_mut() {
                axpy(a, 1.0 / *n as f64, grad_m);
            }
            Ok(())
        }
        PoolCache::Attended(c) => {
            let gz = attn.backward(c, grad_m, grads);
            if gz.len() != acc.len() {
                return Err(Error::usage("attention cache does not match the modality"));
            }
            for (a, g) in acc.iter_mut().zip(&gz) {
                axpy(a, 1.0, g);
            }
            Ok(())
        }
    }
}

/// Multi-hot prediction: label `k` is on iff `probs[k] > threshold`.
pub fn predict(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p > threshold)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::training::checks::random_records;
    use crate::training::gradcheck::{check_gradients, GradCheckOptions};
    use proptest::prelude::*;

    fn record(config: &ModelConfig, objects: usize, words: usize, seed: u64) -> FeatureRecord {
        random_records(config, 1, objects, words, &mut Rng::new(seed)).remove(0)
    }

    fn all_zero(m: &impl Parameterized) -> bool {
        m.tensors().iter().all(|(_, t)| t.as_slice().iter().all(|&v| v == 0.0))
    }

    #[test]
    fn full_scale_widths() {
        let model = Model::build(ModelConfig::default(), 0).unwrap();
        let c = &model.config;
        let rec = FeatureRecord {
            id: "p".into(),
            global_feature: vec![0.1; c.d_img],
            object_features: vec![vec![0.2; c.d_obj]],
            word_embeddings: vec![vec![0.3; c.d_word]; 2],
            words: None,
            topic_labels: vec![0; 38],
            sentiment_labels: vec![0; 30],
        };
        let (bundle, _) = model.shared_forward(&rec, None).unwrap();
        assert_eq!(bundle.z_visual.len(), 1024);
        assert!(bundle.z_words.iter().all(|z| z.len() == 1024));
        let (probs, cache) = model.task_forward(Task::Topic, &bundle, None).unwrap();
        assert_eq!(cache.r.len(), 3072);
        assert_eq!(probs.len(), 38);
        let (probs, _) = model.task_forward(Task::Sentiment, &bundle, None).unwrap();
        assert_eq!(probs.len(), 30);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::build(ModelConfig::tiny(), 9).unwrap().to_parameter_set();
        let b = Model::build(ModelConfig::tiny(), 9).unwrap().to_parameter_set();
        let c = Model::build(ModelConfig::tiny(), 10).unwrap().to_parameter_set();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn blstm_width_must_match_shared_width() {
        let config = ModelConfig {
            lstm_hidden: 4,
            ..ModelConfig::tiny()
        };
        assert!(matches!(Model::build(config, 0), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_paths_are_unique() {
        for ablation in [Ablation::default(), Ablation::all(SingleTask::Topic)] {
            let config = ModelConfig {
                ablation,
                ..ModelConfig::tiny()
            };
            let set = Model::build(config, 0).unwrap().to_parameter_set();
            let mut paths: Vec<&str> = set.paths().collect();
            let n = paths.len();
            paths.sort();
            paths.dedup();
            assert_eq!(paths.len(), n);
        }
    }

    #[test]
    fn missing_modalities() {
        let model = Model::build(ModelConfig::tiny(), 1).unwrap();
        let rec = record(&model.config, 0, 0, 2);
        let (bundle, _) = model.shared_forward(&rec, None).unwrap();
        assert!(bundle.z_objects.is_empty() && bundle.z_words.is_empty());
        assert!(bundle.reconstructions.is_empty());
        assert_eq!(bundle.z_visual.len(), 6);
        // object and word segments of r are zero
        let (_, cache) = model.task_forward(Task::Topic, &bundle, None).unwrap();
        assert!(cache.r[6..].iter().all(|&v| v == 0.0));
        assert!(cache.r[..6].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn three_objects_three_reconstructions() {
        let model = Model::build(ModelConfig::tiny(), 1).unwrap();
        let rec = record(&model.config, 3, 2, 3);
        let (bundle, _) = model.shared_forward(&rec, None).unwrap();
        assert_eq!(bundle.z_objects.len(), 3);
        assert_eq!(bundle.reconstructions.len(), 3);
        assert_eq!(bundle.z_words.len(), 2);
    }

    #[test]
    fn identity_autoencoder_reconstructs_exactly() {
        let config = ModelConfig {
            d_obj: 6,
            ..ModelConfig::tiny()
        };
        let mut model = Model::build(config, 1).unwrap();
        if let ObjectBranch::Autoencoder(ae) = &mut model.objects {
            ae.encoder.layers[0] = Linear::identity(6);
            ae.decoder.layers[0] = Linear::identity(6);
        }
        let mut rec = record(&model.config, 2, 1, 4);
        for x in rec.object_features.iter_mut() {
            x.iter_mut().for_each(|v| *v = v.abs() + 0.1);
        }
        let (bundle, _) = model.shared_forward(&rec, None).unwrap();
        assert_eq!(crate::training::loss::record_share(&bundle.reconstructions), Some(0.0));
    }

    #[test]
    fn wrong_feature_width_names_record() {
        let model = Model::build(ModelConfig::tiny(), 1).unwrap();
        let mut rec = record(&model.config, 1, 1, 5);
        rec.id = "ad-17".into();
        rec.object_features[0].push(0.0);
        match model.shared_forward(&rec, None) {
            Err(Error::Data { record, .. }) => assert_eq!(record, "ad-17"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn zero_heads_give_half_probabilities() {
        let config = ModelConfig {
            zero_init_heads: true,
            ..ModelConfig::tiny()
        };
        let model = Model::build(config, 1).unwrap();
        let rec = record(&model.config, 2, 3, 6);
        let (t, s) = model.predict_probs(&rec).unwrap();
        assert!(t.iter().chain(&s).all(|&p| p == 0.5));
        assert!(predict(&t, 0.5).iter().all(|&y| y == 0));
    }

    #[test]
    fn predict_threshold() {
        assert_eq!(predict(&[0.9, 0.1, 0.51], 0.5), vec![1, 0, 1]);
        assert_eq!(predict(&[0.5, 0.5], 0.5), vec![0, 0]);
        assert_eq!(predict(&[0.2, 1e-9], 0.0), vec![1, 1]);
    }

    fn grads_for(model: &Model, recs: &[FeatureRecord], w: &LossWeights) -> Model {
        let refs: Vec<&FeatureRecord> = recs.iter().collect();
        let norms = BatchNorms::of(&refs);
        let mut g = model.zeros_like();
        for r in &refs {
            model.accumulate_record(r, w, norms, None, &mut g).unwrap();
        }
        g
    }

    #[test]
    fn single_task_detaches_other_head() {
        let config = ModelConfig {
            ablation: Ablation {
                single_task: SingleTask::Topic,
                ..Ablation::default()
            },
            ..ModelConfig::tiny()
        };
        let model = Model::build(config, 2).unwrap();
        let recs = random_records(&model.config, 3, 2, 3, &mut Rng::new(7));
        let g = grads_for(&model, &recs, &LossWeights::default());
        assert!(all_zero(&g.sentiment));
        assert!(!all_zero(&g.topic));
    }

    #[test]
    fn zero_task_weights_leave_only_autoencoder_gradients() {
        let model = Model::build(ModelConfig::tiny(), 2).unwrap();
        let recs = random_records(&model.config, 3, 2, 3, &mut Rng::new(8));
        let g = grads_for(&model, &recs, &LossWeights { alpha: 0.0, beta: 0.0 });
        for (path, t) in g.tensors() {
            let zero = t.as_slice().iter().all(|&v| v == 0.0);
            assert_eq!(zero, !path.starts_with("shared.object_autoencoder"), "{path}");
        }
    }

    #[test]
    fn uniform_scores_make_attention_equal_mean_pooling() {
        let mut full = Model::build(ModelConfig::tiny(), 3).unwrap();
        for head in [&mut full.topic, &mut full.sentiment] {
            head.object_attention.kernel.fill(0.0);
            head.word_attention.kernel.fill(0.0);
        }
        let mut pooled = full.clone();
        pooled.config.ablation.no_hier_attention = true;
        let rec = record(&full.config, 3, 4, 9);
        assert_eq!(full.predict_probs(&rec).unwrap(), pooled.predict_probs(&rec).unwrap());
    }

    #[test]
    fn ablated_attention_receives_no_gradient() {
        let config = ModelConfig {
            ablation: Ablation {
                no_hier_attention: true,
                ..Ablation::default()
            },
            ..ModelConfig::tiny()
        };
        let model = Model::build(config, 3).unwrap();
        let recs = random_records(&model.config, 2, 2, 3, &mut Rng::new(10));
        let g = grads_for(&model, &recs, &LossWeights::default());
        for head in [&g.topic, &g.sentiment] {
            assert!(all_zero(&head.object_attention));
            assert!(all_zero(&head.word_attention));
            assert!(all_zero(&head.inter));
        }
    }

    #[test]
    fn word_order_matters() {
        let model = Model::build(ModelConfig::tiny(), 4).unwrap();
        let found = (0..20).any(|s| {
            let rec = record(&model.config, 2, 3, 100 + s);
            let mut swapped = rec.clone();
            swapped.word_embeddings.swap(0, 2);
            let (a, _) = model.predict_probs(&rec).unwrap();
            let (b, _) = model.predict_probs(&swapped).unwrap();
            a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9)
        });
        assert!(found);
    }

    fn check_ablation(ablation: Ablation, dropout_rate: f64, seed: u64) {
        let config = ModelConfig {
            ablation,
            dropout_rate,
            ..ModelConfig::tiny()
        };
        let mut model = Model::build(config, seed).unwrap();
        let mut rng = Rng::new(seed);
        let mut recs = random_records(&model.config, 2, 2, 3, &mut rng);
        recs.extend(random_records(&model.config, 1, 0, 1, &mut rng));
        let refs: Vec<&FeatureRecord> = recs.iter().collect();
        let norms = BatchNorms::of(&refs);
        let w = LossWeights { alpha: 2.0, beta: 0.5 };
        let stream = dropout_rate.gt(&0.0).then_some(seed + 1);
        let mut g = model.zeros_like();
        for (i, r) in refs.iter().enumerate() {
            let mut rng = stream.map(|s| Rng::with_stream(s, i as u64));
            model.accumulate_record(r, &w, norms, rng.as_mut(), &mut g).unwrap();
        }
        let report = check_gradients(
            &mut model,
            &g,
            |m| m.batch_objective(&refs, &w, stream),
            &GradCheckOptions::strict(1e-5),
        )
        .unwrap();
        assert!(report.passed, "{ablation:?} dropout {dropout_rate}: {report:?}");
    }

    #[test]
    fn gradients_under_every_ablation() {
        for (i, task) in [SingleTask::Off, SingleTask::Topic, SingleTask::Sentiment].into_iter().enumerate() {
            for no_ae in [false, true] {
                for no_attn in [false, true] {
                    let ablation = Ablation {
                        no_autoencoder: no_ae,
                        no_hier_attention: no_attn,
                        single_task: task,
                    };
                    check_ablation(ablation, 0.0, 20 + i as u64);
                }
            }
        }
    }

    #[test]
    fn gradients_with_dropout_masks() {
        check_ablation(Ablation::default(), 0.3, 31);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn probabilities_strictly_inside_unit_interval(seed in any::<u64>(), l in 0usize..4, m in 0usize..4) {
            let model = Model::build(ModelConfig::tiny(), seed).unwrap();
            let rec = record(&model.config, l, m, seed ^ 0xabc);
            let (t, s) = model.predict_probs(&rec).unwrap();
            prop_assert!(t.iter().chain(&s).all(|&p| p > 0.0 && p < 1.0));
        }

        #[test]
        fn object_order_does_not_matter(seed in any::<u64>(), perm_seed in any::<u64>()) {
            let model = Model::build(ModelConfig::tiny(), seed).unwrap();
            let rec = record(&model.config, 5, 2, seed.wrapping_add(1));
            let mut shuffled = rec.clone();
            Rng::new(perm_seed).shuffle(&mut shuffled.object_features);
            let (a, b) = model.predict_probs(&rec).unwrap();
            let (c, d) = model.predict_probs(&shuffled).unwrap();
            for (x, y) in a.iter().chain(&b).zip(c.iter().chain(&d)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
