use serde::{Deserialize, Serialize};

use super::io::{FORMAT_NAME, FORMAT_VERSION};
use crate::error::{Error, Result};

/// Objects kept per record at ingestion; later entries are dropped.
pub const MAX_OBJECTS: usize = 36;
/// Words kept per record at ingestion; later entries are dropped.
pub const MAX_WORDS: usize = 64;

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub d_img: usize,
    pub d_obj: usize,
    pub d_word: usize,
    pub n_topics: usize,
    pub n_sentiments: usize,
    pub records: usize,
}

impl DatasetHeader {
    pub fn new(
        d_img: usize,
        d_obj: usize,
        d_word: usize,
        n_topics: usize,
        n_sentiments: usize,
        records: usize,
    ) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            d_img,
            d_obj,
            d_word,
            n_topics,
            n_sentiments,
            records,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_NAME {
            return Err(Error::data("<header>", format!("unknown format `{}`", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::data(
                "<header>",
                format!("unsupported format version {}", self.version),
            ));
        }
        let dims = [self.d_img, self.d_obj, self.d_word, self.n_topics, self.n_sentiments];
        if dims.contains(&0) {
            return Err(Error::data("<header>", "feature and label dims must be positive"));
        }
        Ok(())
    }
}

/// One ad's precomputed features and ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub global_feature: Vec<f64>,
    #[serde(default)]
    pub object_features: Vec<Vec<f64>>,
    #[serde(default)]
    pub word_embeddings: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<String>>,
    pub topic_labels: Vec<u8>,
    pub sentiment_labels: Vec<u8>,
}

impl FeatureRecord {
    pub fn n_objects(&self) -> usize {
        self.object_features.len()
    }

    pub fn n_words(&self) -> usize {
        self.word_embeddings.len()
    }

    /// Checks every dimension and label against `header`.
    pub fn validate(&self, header: &DatasetHeader) -> Result<()> {
        let err = |msg: String| Err(Error::data(self.id.clone(), msg));
        if self.global_feature.len() != header.d_img {
            return err(format!(
                "global feature has dim {}, expected {}",
                self.global_feature.len(),
                header.d_img
            ));
        }
        if let Some(j) = self.object_features.iter().position(|o| o.len() != header.d_obj) {
            return err(format!(
                "object {j} has dim {}, expected {}",
                self.object_features[j].len(),
                header.d_obj
            ));
        }
        if let Some(j) = self.word_embeddings.iter().position(|w| w.len() != header.d_word) {
            return err(format!(
                "word {j} has dim {}, expected {}",
                self.word_embeddings[j].len(),
                header.d_word
            ));
        }
        if let Some(words) = &self.words {
            if words.len() != self.word_embeddings.len() {
                return err(format!(
                    "{} words for {} embeddings",
                    words.len(),
                    self.word_embeddings.len()
                ));
            }
        }
        if self.topic_labels.len() != header.n_topics {
            return err(format!(
                "topic labels have length {}, expected {}",
                self.topic_labels.len(),
                header.n_topics
            ));
        }
        if self.sentiment_labels.len() != header.n_sentiments {
            return err(format!(
                "sentiment labels have length {}, expected {}",
                self.sentiment_labels.len(),
                header.n_sentiments
            ));
        }
        if self.topic_labels.iter().chain(&self.sentiment_labels).any(|&y| y > 1) {
            return err("labels must be 0 or 1".into());
        }
        let finite = self
            .global_feature
            .iter()
            .chain(self.object_features.iter().flatten())
            .chain(self.word_embeddings.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return err("non-finite feature value".into());
        }
        Ok(())
    }

    /// Drops objects and words beyond the ingestion caps; returns whether
    /// anything was dropped.
    pub fn truncate_to_caps(&mut self) -> bool {
        let mut cut = false;
        if self.object_features.len() > MAX_OBJECTS {
            self.object_features.truncate(MAX_OBJECTS);
            cut = true;
        }
        if self.word_embeddings.len() > MAX_WORDS {
            self.word_embeddings.truncate(MAX_WORDS);
            if let Some(w) = &mut self.words {
                w.truncate(MAX_WORDS);
            }
            cut = true;
        }
        cut
    }
}
