//! Planted-structure generator.
//!
//! Each topic label owns a global prototype, an object prototype and two word
//! prototypes; each sentiment label owns a global prototype. A record is
//! built as:
//!
//! 1. topics: each active with probability `2/q`, at least one forced;
//! 2. sentiments: every active topic `k` switches on sentiment `k mod p` with
//!    probability `label_correlation`, and every sentiment is additionally
//!    switched on with probability `sentiment_noise`;
//! 3. global feature: mean of active topic prototypes plus
//!    `sentiment_weight` times the mean of active sentiment prototypes, plus
//!    `N(0, noise_std^2)` per entry;
//! 4. objects: one noisy object prototype per active topic, plus
//!    `Poisson(distractor_rate)` standard-normal distractors, shuffled;
//! 5. words: the two noisy word prototypes of each active topic, in label
//!    order.
//!
//! Prototype entries are standard normal.

use serde::{Deserialize, Serialize};

use super::{DatasetHeader, FeatureRecord};
use crate::error::{Error, Result};
use crate::numerics::{axpy, Rng};

pub const WORDS_PER_TOPIC: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_records: usize,
    pub n_topics: usize,
    pub n_sentiments: usize,
    pub d_img: usize,
    pub d_obj: usize,
    pub d_word: usize,
    pub noise_std: f64,
    pub label_correlation: f64,
    pub sentiment_noise: f64,
    pub sentiment_weight: f64,
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 1000,
            n_topics: 8,
            n_sentiments: 6,
            d_img: 16,
            d_obj: 16,
            d_word: 16,
            noise_std: 0.3,
            label_correlation: 0.8,
            sentiment_noise: 0.05,
            sentiment_weight: 1.0,
            distractor_rate: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Tiny dimensions for unit tests.
    pub fn small() -> Self {
        Self {
            n_records: 200,
            n_topics: 4,
            n_sentiments: 3,
            d_img: 6,
            d_obj: 5,
            d_word: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_topics, self.n_sentiments, self.d_img, self.d_obj, self.d_word];
        if dims.contains(&0) {
            return Err(Error::config("synthetic label counts and dims must be positive"));
        }
        for (name, p) in [
            ("label_correlation", self.label_correlation),
            ("sentiment_noise", self.sentiment_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config(format!("noise_std = {} must be >= 0", self.noise_std)));
        }
        if !(self.distractor_rate >= 0.0 && self.distractor_rate.is_finite()) {
            return Err(Error::config(format!(
                "distractor_rate = {} must be >= 0",
                self.distractor_rate
            )));
        }
        if !self.sentiment_weight.is_finite() {
            return Err(Error::config("sentiment_weight must be finite"));
        }
        Ok(())
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader::new(
            self.d_img,
            self.d_obj,
            self.d_word,
            self.n_topics,
            self.n_sentiments,
            self.n_records,
        )
    }

    /// Per-topic activation probability.
    pub fn topic_rate(&self) -> f64 {
        (2.0 / self.n_topics as f64).min(1.0)
    }

    /// Sentiment index implied by topic `k`.
    pub fn paired_sentiment(&self, topic: usize) -> usize {
        topic % self.n_sentiments
    }
}

/// The fixed prototype vectors a dataset is planted from.
#[derive(Debug, Clone)]
pub struct Prototypes {
    pub topic_global: Vec<Vec<f64>>,
    pub sentiment_global: Vec<Vec<f64>>,
    pub topic_object: Vec<Vec<f64>>,
    pub topic_words: Vec<[Vec<f64>; WORDS_PER_TOPIC]>,
}

impl Prototypes {
    fn draw(cfg: &SynthConfig, rng: &mut Rng) -> Self {
        let topic_global = (0..cfg.n_topics).map(|_| rng.normal_vec(cfg.d_img, 0.0, 1.0)).collect();
        let sentiment_global = (0..cfg.n_sentiments)
            .map(|_| rng.normal_vec(cfg.d_img, 0.0, 1.0))
            .collect();
        let topic_object = (0..cfg.n_topics).map(|_| rng.normal_vec(cfg.d_obj, 0.0, 1.0)).collect();
        let topic_words = (0..cfg.n_topics)
            .map(|_| [rng.normal_vec(cfg.d_word, 0.0, 1.0), rng.normal_vec(cfg.d_word, 0.0, 1.0)])
            .collect();
        Self {
            topic_global,
            sentiment_global,
            topic_object,
            topic_words,
        }
    }
}

fn noisy(proto: &[f64], std: f64, rng: &mut Rng) -> Vec<f64> {
    let mut v = rng.normal_vec(proto.len(), 0.0, std);
    axpy(&mut v, 1.0, proto);
    v
}

fn mean_of(protos: &[Vec<f64>], active: &[u8], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let n = active.iter().filter(|&&y| y != 0).count();
    if n == 0 {
        return acc;
    }
    for (p, _) in protos.iter().zip(active).filter(|(_, &y)| y != 0) {
        axpy(&mut acc, 1.0 / n as f64, p);
    }
    acc
}

/// Generates the dataset together with its prototypes.
pub fn synth_generate_with_prototypes(cfg: &SynthConfig) -> Result<(DatasetHeader, Vec<FeatureRecord>, Prototypes)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let protos = Prototypes::draw(cfg, &mut rng);
    let mut records = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let mut topics: Vec<u8> = (0..cfg.n_topics)
            .map(|_| u8::from(rng.bernoulli(cfg.topic_rate())))
            .collect();
        if topics.iter().all(|&y| y == 0) {
            topics[rng.below(cfg.n_topics)] = 1;
        }
        let mut sentiments = vec![0u8; cfg.n_sentiments];
        for (k, _) in topics.iter().enumerate().filter(|(_, &y)| y != 0) {
            if rng.bernoulli(cfg.label_correlation) {
                sentiments[cfg.paired_sentiment(k)] = 1;
            }
        }
        for s in sentiments.iter_mut() {
            if rng.bernoulli(cfg.sentiment_noise) {
                *s = 1;
            }
        }

        let mut global = mean_of(&protos.topic_global, &topics, cfg.d_img);
        let senti = mean_of(&protos.sentiment_global, &sentiments, cfg.d_img);
        axpy(&mut global, cfg.sentiment_weight, &senti);
        let global = noisy(&global, cfg.noise_std, &mut rng);

        let mut objects = Vec::new();
        let mut words = Vec::new();
        let mut word_names = Vec::new();
        for (k, _) in topics.iter().enumerate().filter(|(_, &y)| y != 0) {
            objects.push(noisy(&protos.topic_object[k], cfg.noise_std, &mut rng));
            for (w, proto) in protos.topic_words[k].iter().enumerate() {
                words.push(noisy(proto, cfg.noise_std, &mut rng));
                word_names.push(format!("t{k}w{w}"));
            }
        }
        for _ in 0..rng.poisson(cfg.distractor_rate) {
            objects.push(rng.normal_vec(cfg.d_obj, 0.0, 1.0));
        }
        rng.shuffle(&mut objects);

        let mut rec = FeatureRecord {
            id: format!("synth-{i:06}"),
            global_feature: global,
            object_features: objects,
            word_embeddings: words,
            words: Some(word_names),
            topic_labels: topics,
            sentiment_labels: sentiments,
        };
        rec.truncate_to_caps();
        records.push(rec);
    }
    Ok((cfg.header(), records, protos))
}

/// Pure function of `cfg` (including its seed).
pub fn synth_generate(cfg: &SynthConfig) -> Result<(DatasetHeader, Vec<FeatureRecord>)> {
    let (h, r, _) = synth_generate_with_prototypes(cfg)?;
    Ok((h, r))
}
