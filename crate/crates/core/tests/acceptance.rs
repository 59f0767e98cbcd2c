//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p deepmm-core --test acceptance`.

use std::time::Instant;

use deepmm::attention::{InterAttention, IntraAttention};
use deepmm::cli::{cmd_synth, cmd_train, SynthArgs, TrainArgs, TrainOverrides};
use deepmm::data::{split, synth_generate, FeatureRecord, SplitFractions, SynthConfig};
use deepmm::metrics::{average_precision, f1_scores, mean_average_precision, per_class_ap};
use deepmm::model::{Ablation, SingleTask};
use deepmm::numerics::{Matrix, Rng};
use deepmm::training::checks::GRADCHECK_WEIGHTS;
use deepmm::training::loss::{loss_ml, loss_multitask};
use deepmm::training::{
    evaluate, run_scope, train, AdamaxConfig, AdamaxState, LossWeights, Schedule, Scope, TrainConfig,
};
use deepmm::{Model, ModelConfig};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

/// 5000 / 500 / 1000 of every 6500 records.
fn planted_split() -> SplitFractions {
    SplitFractions {
        train: 5000.0 / 6500.0,
        val: 500.0 / 6500.0,
        test: 1000.0 / 6500.0,
    }
}

fn planted_model(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        d_img: 16,
        d_obj: 16,
        d_word: 16,
        d_shared: 16,
        lstm_hidden: 8,
        head_hidden: 16,
        n_topics: 8,
        n_sentiments: 6,
        ablation,
        ..ModelConfig::default()
    }
}

struct Run {
    topic: f64,
    sentiment: f64,
    prior_topic: f64,
    prior_sentiment: f64,
}

fn planted_run(synth: &SynthConfig, ablation: Ablation, epochs: usize, lr: f64, seed: u64) -> Result<Run, String> {
    let (_, records) = synth_generate(synth).map_err(|e| e.to_string())?;
    let (tr, va, te) = split(&records, planted_split(), seed).map_err(|e| e.to_string())?;
    let mut config = TrainConfig {
        model: planted_model(ablation),
        schedule: Schedule {
            total_epochs: epochs,
            ..Schedule::default()
        },
        seed,
        ..TrainConfig::default()
    };
    config.optimizer.lr = lr;
    let out = train(&config, &tr, &va, |_| {}).map_err(|e| e.to_string())?;
    let report = evaluate(&out.best, &te, 0.5).map_err(|e| e.to_string())?;
    let map = |m: Option<deepmm::metrics::MetricsReport>| m.map_or(f64::NAN, |m| m.map);
    Ok(Run {
        topic: map(report.topic),
        sentiment: map(report.sentiment),
        prior_topic: prior_map(&tr, &te, |r| &r.topic_labels)?,
        prior_sentiment: prior_map(&tr, &te, |r| &r.sentiment_labels)?,
    })
}

/// mAP of the baseline that scores every test record with the training
/// class frequencies.
fn prior_map(tr: &[FeatureRecord], te: &[FeatureRecord], labels: fn(&FeatureRecord) -> &Vec<u8>) -> Result<f64, String> {
    let k = labels(&tr[0]).len();
    let freq: Vec<f64> = (0..k)
        .map(|c| tr.iter().filter(|r| labels(r)[c] != 0).count() as f64 / tr.len() as f64)
        .collect();
    let scores = vec![freq; te.len()];
    let y: Vec<Vec<u8>> = te.iter().map(|r| labels(r).clone()).collect();
    mean_average_precision(&scores, &y).map_err(|e| e.to_string())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let full = run_scope(Scope::Full, 0, false).map_err(|e| e.to_string())?;
    let layers = run_scope(Scope::Layers, 0, false).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let ok = full.passed && full.max_rel_error < 1e-5 && layers.passed && layers.max_rel_error < 1e-6 && secs < 60.0;
    Ok((
        ok,
        format!(
            "full max rel {:.2e} (alpha={}, beta={}), layers max rel {:.2e}, {secs:.1}s",
            full.max_rel_error, GRADCHECK_WEIGHTS.alpha, GRADCHECK_WEIGHTS.beta, layers.max_rel_error
        ),
    ))
}

fn planted_learning() -> Outcome {
    let t0 = Instant::now();
    let synth = SynthConfig {
        n_records: 6500,
        ..SynthConfig::default()
    };
    let r = planted_run(&synth, Ablation::default(), 30, 1e-3, 0)?;
    let secs = t0.elapsed().as_secs_f64();
    let ok = r.topic >= 0.95
        && r.sentiment >= 0.85
        && r.topic >= r.prior_topic + 0.3
        && r.sentiment >= r.prior_sentiment + 0.3
        && secs < 900.0;
    Ok((
        ok,
        format!(
            "topic mAP {:.4} (prior {:.4}), sentiment mAP {:.4} (prior {:.4}), {secs:.1}s",
            r.topic, r.prior_topic, r.sentiment, r.prior_sentiment
        ),
    ))
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn multitask_direction() -> Outcome {
    let mut multi = Vec::new();
    let mut single = Vec::new();
    for seed in SEEDS {
        // Sentiment is carried only through the paired topics here, so the
        // topic labels are extra supervision for the same features.
        let synth = SynthConfig {
            n_records: 1300,
            noise_std: 0.6,
            distractor_rate: 4.0,
            sentiment_weight: 0.0,
            seed,
            ..SynthConfig::default()
        };
        let st = Ablation {
            single_task: SingleTask::Sentiment,
            ..Ablation::default()
        };
        multi.push(planted_run(&synth, Ablation::default(), 30, 3e-3, seed)?.sentiment);
        single.push(planted_run(&synth, st, 30, 3e-3, seed)?.sentiment);
    }
    let (m, s) = (median(multi.clone()), median(single.clone()));
    Ok((
        m >= s,
        format!(
            "median sentiment mAP multitask {m:.4} vs single-task {s:.4}; multitask {} single {}",
            fmt(&multi),
            fmt(&single)
        ),
    ))
}

fn ablations() -> Outcome {
    let variants: [(&str, Ablation); 5] = [
        ("full", Ablation::default()),
        (
            "no_autoencoder",
            Ablation {
                no_autoencoder: true,
                ..Ablation::default()
            },
        ),
        (
            "no_hier_attention",
            Ablation {
                no_hier_attention: true,
                ..Ablation::default()
            },
        ),
        (
            "single_task",
            Ablation {
                single_task: SingleTask::Topic,
                ..Ablation::default()
            },
        ),
        ("all", Ablation::all(SingleTask::Topic)),
    ];
    let mut medians = Vec::new();
    for (_, ablation) in &variants {
        let mut maps = Vec::new();
        for seed in SEEDS {
            // Heavy distractor load: object attention has something to ignore.
            let synth = SynthConfig {
                n_records: 3250,
                noise_std: 1.0,
                distractor_rate: 12.0,
                seed,
                ..SynthConfig::default()
            };
            maps.push(planted_run(&synth, *ablation, 30, 3e-3, seed)?.topic);
        }
        medians.push(median(maps));
    }
    let full = medians[0];
    let deltas: Vec<String> = variants
        .iter()
        .zip(&medians)
        .skip(1)
        .map(|((name, _), m)| format!("{name} {:+.4}", m - full))
        .collect();
    let drop = full - medians[4];
    Ok((
        drop >= 0.02,
        format!("full topic mAP {full:.4}; deltas: {}", deltas.join(", ")),
    ))
}

fn brute_ap(scores: &[f64], labels: &[u8]) -> Option<f64> {
    // precision at each positive, counting everything ranked before it
    let n = scores.len();
    let ranks_before = |i: usize| {
        (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let positives: Vec<usize> = (0..n).filter(|&i| labels[i] != 0).collect();
    if positives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in &positives {
        let r = ranks_before(i);
        let hits = positives
            .iter()
            .filter(|&&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count();
        total += (hits + 1) as f64 / (r + 1) as f64;
    }
    Some(total / positives.len() as f64)
}

fn brute_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn metrics_oracle() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = 1 + rng.below(20);
        let k = 1 + rng.below(5);
        // coarse scores so ties are common
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.below(6) as f64 / 5.0).collect()).collect();
        let labels: Vec<Vec<u8>> = (0..n).map(|_| (0..k).map(|_| u8::from(rng.bernoulli(0.3))).collect()).collect();
        let preds: Vec<Vec<u8>> = (0..n).map(|_| (0..k).map(|_| u8::from(rng.bernoulli(0.4))).collect()).collect();

        let aps = per_class_ap(&scores, &labels).map_err(|e| e.to_string())?;
        let mut oracle_aps = Vec::new();
        for c in 0..k {
            let col_s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let col_y: Vec<u8> = labels.iter().map(|r| r[c]).collect();
            let o = brute_ap(&col_s, &col_y);
            match (aps[c], o, average_precision(&col_s, &col_y)) {
                (Some(a), Some(b), Some(c)) => worst = worst.max((a - b).abs()).max((c - b).abs()),
                (None, None, None) => {}
                _ => mismatches += 1,
            }
            oracle_aps.extend(o);
        }
        match mean_average_precision(&scores, &labels) {
            Ok(m) if !oracle_aps.is_empty() => {
                worst = worst.max((m - oracle_aps.iter().sum::<f64>() / oracle_aps.len() as f64).abs())
            }
            Err(_) if oracle_aps.is_empty() => {}
            _ => mismatches += 1,
        }

        let f = f1_scores(&preds, &labels).map_err(|e| e.to_string())?;
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let mut per_class = Vec::new();
        for c in 0..k {
            let count = |p: u8, y: u8| (0..n).filter(|&i| preds[i][c] == p && labels[i][c] == y).count();
            let (a, b, d) = (count(1, 1), count(1, 0), count(0, 1));
            tp += a;
            fp += b;
            fn_ += d;
            if a + d > 0 {
                per_class.push(brute_f1(a, b, d));
            }
        }
        let f1c = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().sum::<f64>() / per_class.len() as f64
        };
        worst = worst.max((f.f1_c - f1c).abs()).max((f.f1_o - brute_f1(tp, fp, fn_)).abs());
    }
    Ok((
        worst <= 1e-12 && mismatches == 0,
        format!("1000 instances, max abs diff {worst:.2e}, evaluability mismatches {mismatches}"),
    ))
}

fn optimizer_oracle() -> Outcome {
    let mut rng = Rng::new(5);
    let init = rng.normal_vec(7, 0.0, 1.0);
    let config = AdamaxConfig::default();
    let mut theta = Matrix::column(init.clone());
    let mut state = AdamaxState {
        config,
        lr: config.lr,
        t: 0,
        m: vec![Matrix::zeros(7, 1)],
        u: vec![Matrix::zeros(7, 1)],
    };
    let (mut x, mut m, mut u) = (init, vec![0.0; 7], vec![0.0; 7]);
    let mut worst = 0.0f64;
    for t in 1..=10 {
        let g = Matrix::column(theta.as_slice().iter().map(|v| 2.0 * v).collect());
        state.step_tensors(&mut [&mut theta], &[&g]).map_err(|e| e.to_string())?;
        for i in 0..7 {
            let gi = 2.0 * x[i] + config.weight_decay * x[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            u[i] = (config.beta2 * u[i]).max(gi.abs());
            x[i] -= config.lr / (1.0 - config.beta1.powi(t)) * m[i] / (u[i] + config.eps);
        }
        for (a, b) in theta.as_slice().iter().zip(&x) {
            worst = worst.max((a - b).abs());
        }
    }
    let s = Schedule::default();
    let base = 1e-3;
    let lr = |e| s.lr_at(base, e);
    let schedule_ok = lr(14) == base && lr(15) == lr(14) * 0.1 && lr(29) == lr(15) && lr(30) == lr(29) * 0.1;
    Ok((
        worst <= 1e-12 && schedule_ok,
        format!(
            "10 steps max abs diff {worst:.2e}; lr epochs 14/15/29/30 = {:e}/{:e}/{:e}/{:e}",
            lr(14),
            lr(15),
            lr(29),
            lr(30)
        ),
    ))
}

fn loss_fixtures() -> Outcome {
    let config = ModelConfig {
        zero_init_heads: true,
        ..ModelConfig::tiny()
    };
    let model = Model::build(config.clone(), 1).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(9);
    let records = deepmm::training::checks::random_records(&config, 20, 3, 4, &mut rng);
    let (q, p) = (config.n_topics as f64, config.n_sentiments as f64);
    let ln2 = std::f64::consts::LN_2;
    let mut worst = 0.0f64;
    for r in &records {
        let (t, s) = model.predict_probs(r).map_err(|e| e.to_string())?;
        let lt = loss_ml(&t, &r.topic_labels).map_err(|e| e.to_string())?;
        let ls = loss_ml(&s, &r.sentiment_labels).map_err(|e| e.to_string())?;
        worst = worst.max((lt - q * ln2).abs()).max((ls - p * ln2).abs());
    }
    let fixture = loss_multitask(1.0, 2.0, 3.0, &LossWeights::default());
    Ok((
        worst <= 1e-12 && fixture == 551.0,
        format!("zero heads max |L - k ln2| {worst:.2e} over 20 records; 1 + 200*2 + 50*3 = {fixture}"),
    ))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn attention_invariants() -> Outcome {
    const CASES: usize = 200;
    let mut rng = Rng::new(77);
    let (mut norm, mut perm, mut lin) = (0.0f64, 0.0f64, 0.0f64);
    let mut argmax_breaks = 0;
    let config = ModelConfig {
        dropout_rate: 0.0,
        ..ModelConfig::tiny()
    };
    for case in 0..CASES {
        let d = 2 + rng.below(7);
        let n = 1 + rng.below(6);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(d, 0.0, 1.0)).collect();
        let kernel = rng.normal_vec(d, 0.0, 1.0);
        let (_, w, _) = IntraAttention::from_kernel(kernel.clone()).attend(&zs).map_err(|e| e.to_string())?;
        norm = norm.max((w.iter().sum::<f64>() - 1.0).abs());
        if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            norm = f64::INFINITY;
        }

        let scale = 0.1 + 10.0 * rng.uniform();
        let scaled: Vec<f64> = kernel.iter().map(|k| k * scale).collect();
        let (_, ws, _) = IntraAttention::from_kernel(scaled).attend(&zs).map_err(|e| e.to_string())?;
        if argmax(&w) != argmax(&ws) {
            argmax_breaks += 1;
        }

        let scores = [rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)];
        let inter = InterAttention::new(scores);
        let x: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(d, 0.0, 1.0)).collect();
        let y: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(d, 0.0, 1.0)).collect();
        let (a, b) = (rng.normal(0.0, 2.0), rng.normal(0.0, 2.0));
        let mix: Vec<Vec<f64>> = x
            .iter()
            .zip(&y)
            .map(|(u, v)| u.iter().zip(v).map(|(u, v)| a * u + b * v).collect())
            .collect();
        let combine = |p: &[Vec<f64>]| inter.combine(&p[0], &p[1], &p[2]).map(|(r, _)| r);
        let (rx, ry, rm) = (
            combine(&x).map_err(|e| e.to_string())?,
            combine(&y).map_err(|e| e.to_string())?,
            combine(&mix).map_err(|e| e.to_string())?,
        );
        for i in 0..rm.len() {
            lin = lin.max((rm[i] - (a * rx[i] + b * ry[i])).abs());
        }

        let model = Model::build(config.clone(), case as u64).map_err(|e| e.to_string())?;
        let mut rec = deepmm::training::checks::random_records(&config, 1, 1 + rng.below(5), 1 + rng.below(4), &mut rng)
            .remove(0);
        let (t0, s0) = model.predict_probs(&rec).map_err(|e| e.to_string())?;
        let objs = &mut rec.object_features;
        for i in (1..objs.len()).rev() {
            objs.swap(i, rng.below(i + 1));
        }
        let (t1, s1) = model.predict_probs(&rec).map_err(|e| e.to_string())?;
        for (u, v) in t0.iter().chain(&s0).zip(t1.iter().chain(&s1)) {
            perm = perm.max((u - v).abs());
        }
    }
    Ok((
        norm <= 1e-12 && perm <= 1e-12 && lin <= 1e-9 && argmax_breaks == 0,
        format!(
            "{CASES} cases: |sum w - 1| {norm:.2e}, permutation {perm:.2e}, superposition {lin:.2e}, argmax changes {argmax_breaks}"
        ),
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("planted.jsonl");
    cmd_synth(&SynthArgs {
        config: None,
        out: data.clone(),
        records: Some(300),
        seed: Some(3),
        topics: None,
        sentiments: None,
        dim: Some(8),
        noise: None,
    })
    .map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{run}"));
        cmd_train(&TrainArgs {
            data: data.clone(),
            out_dir: out_dir.clone(),
            overrides: TrainOverrides {
                seed: Some(11),
                epochs: Some(4),
                dropout: Some(0.2),
                d_shared: Some(8),
                deterministic: true,
                ..TrainOverrides::default()
            },
        })
        .map_err(|e| e.to_string())?;
        curves.push(std::fs::read(out_dir.join("curve.csv")).map_err(|e| e.to_string())?);
    }
    let same = curves[0] == curves[1];
    Ok((same, format!("curve.csv {} bytes, identical: {same}", curves[0].len())))
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradients),
        ("planted-data learning", planted_learning),
        ("multitask direction", multitask_direction),
        ("ablation harness", ablations),
        ("metrics oracle", metrics_oracle),
        ("optimizer oracle", optimizer_oracle),
        ("loss fixtures", loss_fixtures),
        ("attention invariants", attention_invariants),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {}. {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
