//! Canned gradient checks at tiny widths, grouped by scope.
//!
//! Layer and attention units are checked under the loss
//! `sum_k c_k y_k + 0.5 * sum_k y_k^2` with fixed random `c`, so every output
//! coordinate receives a distinct, input-dependent gradient.

use serde::Serialize;

use super::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use super::LossWeights;
use crate::attention::{InterAttention, IntraAttention};
use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::layers::{Autoencoder, AutoencoderConfig, Blstm, Linear, Mlp, MlpConfig};
use crate::model::{BatchNorms, Model, ModelConfig};
use crate::numerics::{dot, Rng};
use crate::params::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Layers,
    Attention,
    Full,
}

impl Scope {
    pub fn tolerance(self) -> f64 {
        match self {
            Scope::Layers | Scope::Attention => 1e-6,
            Scope::Full => 1e-5,
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" => Ok(Scope::Layers),
            "attention" => Ok(Scope::Attention),
            "full" => Ok(Scope::Full),
            other => Err(Error::usage(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitReport {
    pub unit: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScopeReport {
    pub scope: Scope,
    pub tolerance: f64,
    pub corrupted: bool,
    pub units: Vec<UnitReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// `(loss, dloss/dy)` of the probe loss.
fn probe(y: &[f64], c: &[f64]) -> (f64, Vec<f64>) {
    let l = dot(c, y) + 0.5 * dot(y, y);
    (l, c.iter().zip(y).map(|(c, y)| c + y).collect())
}

fn check_unit<P, F>(unit: &str, mut params: P, eval: F, tolerance: f64, corrupt: bool) -> Result<UnitReport>
where
    P: Parameterized + Clone,
    F: Fn(&P, Option<&mut P>) -> Result<f64>,
{
    let mut grads = params.zeros_like();
    eval(&params, Some(&mut grads))?;
    if corrupt {
        grads.visit_mut("", &mut |_, m| m.as_mut_slice().iter_mut().for_each(|v| *v = -*v));
    }
    let report = check_gradients(&mut params, &grads, |p| eval(p, None), &GradCheckOptions::strict(tolerance))?;
    log::debug!("{unit}: max rel error {:.3e} at {}", report.max_rel_error, report.worst_path);
    Ok(UnitReport {
        unit: unit.to_string(),
        report,
    })
}

fn layer_units(rng: &mut Rng, tol: f64, corrupt: bool) -> Result<Vec<UnitReport>> {
    let mut out = Vec::new();

    let x = rng.normal_vec(5, 0.0, 1.0);
    let c = rng.normal_vec(4, 0.0, 1.0);
    let lin = Linear::glorot(5, 4, rng);
    out.push(check_unit(
        "linear",
        lin,
        |p, g| {
            let (l, gy) = probe(&p.forward(&x), &c);
            if let Some(g) = g {
                p.backward(&x, &gy, g);
            }
            Ok(l)
        },
        tol,
        corrupt,
    )?);

    let c = rng.normal_vec(3, 0.0, 1.0);
    let mlp = Mlp::new(
        &MlpConfig {
            layer_dims: vec![5, 6, 4, 3],
            dropout_rate: 0.0,
        },
        rng,
    )?;
    out.push(check_unit(
        "mlp",
        mlp,
        |p, g| {
            let (y, cache) = p.forward(&x, None)?;
            let (l, gy) = probe(&y, &c);
            if let Some(g) = g {
                p.backward(&cache, &gy, g)?;
            }
            Ok(l)
        },
        tol,
        corrupt,
    )?);

    let c = rng.normal_vec(4, 0.0, 1.0);
    let ae = Autoencoder::new(
        &AutoencoderConfig {
            input_dim: 5,
            latent_dim: 4,
            hidden_dims: vec![6],
            latent_relu: true,
        },
        rng,
    )?;
    out.push(check_unit(
        "autoencoder",
        ae,
        |p, g| {
            let (z, enc) = p.encode(&x)?;
            let (xh, dec) = p.decode(&z)?;
            let recon: f64 = xh.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let (lz, mut gz) = probe(&z, &c);
            if let Some(g) = g {
                let gxh: Vec<f64> = xh.iter().zip(&x).map(|(a, b)| 2.0 * (a - b)).collect();
                let from_dec = p.decode_backward(&dec, &gxh, g)?;
                gz.iter_mut().zip(&from_dec).for_each(|(a, b)| *a += b);
                p.encode_backward(&enc, &gz, g)?;
            }
            Ok(recon + lz)
        },
        tol,
        corrupt,
    )?);

    let xs: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(3, 0.0, 1.0)).collect();
    let cs: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(8, 0.0, 1.0)).collect();
    let blstm = Blstm::new(3, 4, rng);
    out.push(check_unit(
        "blstm",
        blstm,
        |p, g| {
            let (zs, cache) = p.forward(&xs)?;
            let mut total = 0.0;
            let mut gzs = Vec::with_capacity(zs.len());
            for (z, c) in zs.iter().zip(&cs) {
                let (l, gz) = probe(z, c);
                total += l;
                gzs.push(gz);
            }
            if let Some(g) = g {
                p.backward(&cache, &gzs, g)?;
            }
            Ok(total)
        },
        tol,
        corrupt,
    )?);
    Ok(out)
}

fn attention_units(rng: &mut Rng, tol: f64, corrupt: bool) -> Result<Vec<UnitReport>> {
    let d = 6;
    let zs: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(d, 0.0, 1.0)).collect();
    let c = rng.normal_vec(d, 0.0, 1.0);
    let intra = IntraAttention::new(d, rng);
    let mut out = vec![check_unit(
        "intra_attention",
        intra,
        |p, g| {
            let (m, _, cache) = p.attend(&zs)?;
            let (l, gm) = probe(&m, &c);
            if let Some(g) = g {
                p.backward(&cache, &gm, g);
            }
            Ok(l)
        },
        tol,
        corrupt,
    )?];

    let parts: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(d, 0.0, 1.0)).collect();
    let c = rng.normal_vec(3 * d, 0.0, 1.0);
    let inter = InterAttention::new([0.7, -1.2, 1.5]);
    out.push(check_unit(
        "inter_attention",
        inter,
        |p, g| {
            let (r, cache) = p.combine(&parts[0], &parts[1], &parts[2])?;
            let (l, gr) = probe(&r, &c);
            if let Some(g) = g {
                p.backward(&cache, &gr, g)?;
            }
            Ok(l)
        },
        tol,
        corrupt,
    )?);
    Ok(out)
}

/// Loss weights for the end-to-end check. Unit-order weights keep the
/// objective near 1, so central-difference round-off (about
/// `eps * |L| / h`) stays well under the relative-error floor; distinct
/// values still catch a swapped task weighting.
pub const GRADCHECK_WEIGHTS: LossWeights = LossWeights { alpha: 2.0, beta: 0.5 };

/// The tiny end-to-end configuration: widths 4 to 8, three topics, two
/// sentiments.
pub fn tiny_full_config() -> ModelConfig {
    ModelConfig {
        d_img: 5,
        d_obj: 4,
        d_word: 4,
        d_shared: 8,
        lstm_hidden: 4,
        head_hidden: 5,
        n_topics: 3,
        n_sentiments: 2,
        ..ModelConfig::default()
    }
}

/// Random records with `objects` objects and `words` words each.
pub fn random_records(config: &ModelConfig, n: usize, objects: usize, words: usize, rng: &mut Rng) -> Vec<FeatureRecord> {
    (0..n)
        .map(|i| FeatureRecord {
            id: format!("r{i}"),
            global_feature: rng.normal_vec(config.d_img, 0.0, 1.0),
            object_features: (0..objects).map(|_| rng.normal_vec(config.d_obj, 0.0, 1.0)).collect(),
            word_embeddings: (0..words).map(|_| rng.normal_vec(config.d_word, 0.0, 1.0)).collect(),
            words: None,
            topic_labels: (0..config.n_topics).map(|_| u8::from(rng.bernoulli(0.5))).collect(),
            sentiment_labels: (0..config.n_sentiments).map(|_| u8::from(rng.bernoulli(0.5))).collect(),
        })
        .collect()
}

/// End-to-end check of the batch objective over `records`.
pub fn check_model(
    model: Model,
    records: &[FeatureRecord],
    weights: &LossWeights,
    tolerance: f64,
    corrupt: bool,
) -> Result<UnitReport> {
    let refs: Vec<&FeatureRecord> = records.iter().collect();
    let norms = BatchNorms::of(&refs);
    check_unit(
        "model",
        model,
        |m, g| match g {
            Some(g) => {
                for rec in &refs {
                    m.accumulate_record(rec, weights, norms, None, g)?;
                }
                m.batch_objective(&refs, weights, None)
            }
            None => m.batch_objective(&refs, weights, None),
        },
        tolerance,
        corrupt,
    )
}

/// Runs every unit of `scope`. With `corrupt`, analytic gradients are
/// sign-flipped before comparison, which must make the check fail.
pub fn run_scope(scope: Scope, seed: u64, corrupt: bool) -> Result<ScopeReport> {
    let tol = scope.tolerance();
    let mut rng = Rng::new(seed);
    let units = match scope {
        Scope::Layers => layer_units(&mut rng, tol, corrupt)?,
        Scope::Attention => attention_units(&mut rng, tol, corrupt)?,
        Scope::Full => {
            let config = tiny_full_config();
            let model = Model::build(config.clone(), seed)?;
            let records = random_records(&config, 2, 2, 3, &mut rng);
            vec![check_model(model, &records, &GRADCHECK_WEIGHTS, tol, corrupt)?]
        }
    };
    let max_rel_error = units.iter().map(|u| u.report.max_rel_error).fold(0.0, f64::max);
    Ok(ScopeReport {
        scope,
        tolerance: tol,
        corrupted: corrupt,
        passed: units.iter().all(|u| u.report.passed),
        units,
        max_rel_error,
    })
}
