//! Trial-level splits, mini-batch Adam training with early stopping on
//! validation MAE, and reproducible run logging.

use crate::data::Trial;
use crate::error::{Error, Result};
use crate::evalkit;
use crate::features::{
    fit_stats, make_windows, standardize, ChannelStats, FeatureWindow, Mode, DEFAULT_WINDOW,
    EVAL_STRIDE, PIPELINE_GRAVITY_ALPHA, TRAIN_STRIDE,
};
use crate::magnet::{build, MagNetConfig, Model, Variant};
use crate::numkit::adam::AdamState;
use crate::numkit::tensor::Tensor;
use crate::seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Trial-level split rule. Windows overlap inside a trial, so splitting at
/// any finer grain would leak test samples into training; the unit here is
/// the trial and nothing smaller.
#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// (train, val, test), each > 0, summing to 1.
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    /// Explicit trial_id -> split map. When present, ratios are ignored and
    /// the map must cover every trial exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<BTreeMap<String, SplitName>>,
}

impl Default for SplitSpec {
    fn default() -> SplitSpec {
        SplitSpec { ratios: (0.7, 0.15, 0.15), seed: 0, assignment: None }
    }
}

/// Largest-remainder apportionment of n trials over the three ratios.
/// Ties go to the earlier split.
fn apportion(n: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let quotas = [ratios.0 * n as f64, ratios.1 * n as f64, ratios.2 * n as f64];
    let mut sizes = [quotas[0] as usize, quotas[1] as usize, quotas[2] as usize];
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        sizes[order[i % 3]] += 1;
    }
    sizes
}

/// Deterministic trial-level split: shuffle by seed, cut by apportioned
/// sizes. With an explicit assignment, honor it verbatim.
pub fn split(trials: &[Trial], spec: &SplitSpec) -> Result<(Vec<Trial>, Vec<Trial>, Vec<Trial>)> {
    if trials.len() < 3 {
        return Err(Error::Contract(format!("need >= 3 trials to split, got {}", trials.len())));
    }
    if let Some(assignment) = &spec.assignment {
        let mut out: [Vec<Trial>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for t in trials {
            match assignment.get(&t.trial_id) {
                Some(SplitName::Train) => out[0].push(t.clone()),
                Some(SplitName::Val) => out[1].push(t.clone()),
                Some(SplitName::Test) => out[2].push(t.clone()),
                None => {
                    return Err(Error::Config(format!(
                        "explicit assignment misses trial '{}'",
                        t.trial_id
                    )))
                }
            }
        }
        for id in assignment.keys() {
            if !trials.iter().any(|t| &t.trial_id == id) {
                return Err(Error::Config(format!(
                    "explicit assignment names unknown trial '{}'",
                    id
                )));
            }
        }
        let [train, val, test] = out;
        return check_nonempty(train, val, test, "explicit assignment");
    }
    let (a, b, c) = spec.ratios;
    let sum = a + b + c;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got ({}, {}, {})",
            a, b, c
        )));
    }
    let sizes = apportion(trials.len(), spec.ratios);
    let mut order: Vec<usize> = (0..trials.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, "trial-split", 0));
    order.shuffle(&mut rng);
    let pick = |range: std::ops::Range<usize>| -> Vec<Trial> {
        order[range].iter().map(|&i| trials[i].clone()).collect()
    };
    let train = pick(0..sizes[0]);
    let val = pick(sizes[0]..sizes[0] + sizes[1]);
    let test = pick(sizes[0] + sizes[1]..trials.len());
    check_nonempty(train, val, test, "ratios")
}

fn check_nonempty(
    train: Vec<Trial>,
    val: Vec<Trial>,
    test: Vec<Trial>,
    source: &str,
) -> Result<(Vec<Trial>, Vec<Trial>, Vec<Trial>)> {
    for (name, s) in [("train", &train), ("val", &val), ("test", &test)] {
        if s.is_empty() {
            return Err(Error::Config(format!(
                "{} split received zero trials from {}; adjust the ratios or add trials",
                name, source
            )));
        }
    }
    Ok((train, val, test))
}

/// Optimizer and loop settings. The loss is fixed: mean squared error on
/// (x, y). All reported quality numbers are MAE, never the loss.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Initial Adam rate; cosine-decays to a tenth over max_epochs.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation MAE before stopping.
    pub patience: usize,
    pub seed: u64,
    pub train_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 15,
            seed: 0,
            train_stride: TRAIN_STRIDE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            problems.push("batch size must be >= 1".into());
        }
        if self.patience == 0 {
            problems.push("patience must be >= 1".into());
        }
        if self.max_epochs == 0 {
            problems.push("max epochs must be >= 1".into());
        }
        if self.train_stride == 0 {
            problems.push("train stride must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

/// Everything needed to audit or re-run a training run. Two runs from the
/// same (digest, config, seeds) agree on every field except wall_time_s.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub wall_time_s: f64,
    pub config: TrainConfig,
    pub dataset_digest: String,
    pub stopped_early: bool,
}

impl RunLog {
    /// One JSON object per epoch record.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for rec in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(rec)?)?;
        }
        Ok(())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Content digest of a window set: shapes, payload, targets, and identity
/// of every window, in order.
pub fn windows_digest(windows: &[FeatureWindow]) -> String {
    let mut h = Sha256::new();
    h.update((windows.len() as u64).to_le_bytes());
    for w in windows {
        h.update(w.building.as_bytes());
        h.update([0u8]);
        h.update(w.trial_id.as_bytes());
        h.update([0u8]);
        h.update((w.end_index as u64).to_le_bytes());
        h.update(w.target[0].to_le_bytes());
        h.update(w.target[1].to_le_bytes());
        for d in w.data.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in w.data.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    let out = h.finalize();
    out.iter().map(|b| format!("{:02x}", b)).collect()
}

fn param_norms(model: &Model) -> (f64, f64) {
    let mut sq = 0.0f64;
    let mut max_abs = 0.0f64;
    for p in model.parameters() {
        for v in p.as_slice() {
            let v = *v as f64;
            sq += v * v;
            max_abs = max_abs.max(v.abs());
        }
    }
    (sq.sqrt(), max_abs)
}

/// The training loop with the validation metric abstracted out, so the
/// early-stopping arithmetic is testable against a scripted curve.
fn train_loop<V>(
    model: &mut Model,
    train_windows: &[FeatureWindow],
    config: &TrainConfig,
    dataset_digest: String,
    mut val_metric: V,
) -> Result<RunLog>
where
    V: FnMut(&Model, usize) -> Result<f64>,
{
    config.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    for w in train_windows {
        if w.data.shape()[0] != model.config.input_channels {
            return Err(Error::Shape(format!(
                "training window has {} channels, model takes {}",
                w.data.shape()[0],
                model.config.input_channels
            )));
        }
    }
    let started = Instant::now();
    let shapes: Vec<Vec<usize>> =
        model.parameters().iter().map(|p| p.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = AdamState::<f32>::new(
        config.learning_rate as f32,
        0.9,
        0.999,
        1e-8,
        &shape_refs,
    );
    let mut best_params: Vec<Tensor<f32>> = model.parameters().iter().map(|p| (*p).clone()).collect();
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 1..=config.max_epochs {
        // cosine decay from learning_rate to a tenth of it across max_epochs;
        // epoch 1 sees the configured rate exactly
        let lr0 = config.learning_rate;
        let span = (config.max_epochs - 1).max(1) as f64;
        let phase = (epoch - 1) as f64 / span * std::f64::consts::PI;
        adam.lr = (0.1 * lr0 + 0.45 * lr0 * (1.0 + phase.cos())) as f32;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads: Option<Vec<Tensor<f32>>> = None;
            let mut batch_loss = 0.0f64;
            // fixed accumulation order inside the chunk keeps runs bit-identical
            for &wi in chunk {
                let w = &train_windows[wi];
                let (loss, g) = model.loss_and_gradients(&w.data, w.target)?;
                batch_loss += loss as f64;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b)?;
                        }
                    }
                }
            }
            let mut grads = grads.expect("chunks are nonempty");
            let inv = 1.0 / chunk.len() as f32;
            for g in &mut grads {
                g.scale(inv);
            }
            let finite = batch_loss.is_finite() && grads.iter().all(|g| g.all_finite());
            if !finite {
                let (l2, max_abs) = param_norms(model);
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {}, batch {}; param l2 norm {:.6e}, max |param| {:.6e}",
                    epoch, batch_idx, l2, max_abs
                )));
            }
            loss_sum += batch_loss;
            let mut params = model.parameters_mut();
            adam.step_refs(&mut params, &grads)?;
        }
        let train_loss = loss_sum / train_windows.len() as f64;
        let val_mae = val_metric(model, epoch)?;
        if !val_mae.is_finite() {
            let (l2, max_abs) = param_norms(model);
            return Err(Error::Numeric(format!(
                "non-finite validation MAE at epoch {}; param l2 norm {:.6e}, max |param| {:.6e}",
                epoch, l2, max_abs
            )));
        }
        epochs.push(EpochRecord { epoch, train_loss, val_mae });
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            for (dst, src) in best_params.iter_mut().zip(model.parameters()) {
                dst.as_mut_slice().copy_from_slice(src.as_slice());
            }
        } else if epoch - best_epoch >= config.patience {
            stopped_early = true;
            break;
        }
    }
    for (dst, src) in model.parameters_mut().into_iter().zip(&best_params) {
        dst.as_mut_slice().copy_from_slice(src.as_slice());
    }
    Ok(RunLog {
        epochs,
        best_epoch,
        best_val_mae: best_val,
        wall_time_s: started.elapsed().as_secs_f64(),
        config: config.clone(),
        dataset_digest,
        stopped_early,
    })
}

/// Validation MAE of the model over a fixed window set, same mean-Euclidean
/// definition as evalkit.
pub fn val_mae(model: &Model, windows: &[FeatureWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no validation windows".into()));
    }
    let mut preds = Vec::with_capacity(windows.len());
    let mut truths = Vec::with_capacity(windows.len());
    for w in windows {
        let p = model.forward(&w.data)?;
        preds.push([p[0] as f64, p[1] as f64]);
        truths.push(w.target);
    }
    evalkit::mae(&preds, &truths)
}

/// Mini-batch Adam on MSE with best-validation checkpointing. Windows must
/// already be standardized with stats fitted on the train split only. On
/// return the model carries the best epoch's parameters.
pub fn train(
    model: &mut Model,
    train_windows: &[FeatureWindow],
    val_windows: &[FeatureWindow],
    config: &TrainConfig,
) -> Result<RunLog> {
    if val_windows.is_empty() {
        return Err(Error::Data("no validation windows".into()));
    }
    let digest = windows_digest(train_windows);
    train_loop(model, train_windows, config, digest, |m, _| val_mae(m, val_windows))
}

/// Everything upstream of the optimizer: windowing, feature mode, stats.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub train: TrainConfig,
    pub window: usize,
    pub eval_stride: usize,
    pub gravity_alpha: f64,
    pub init_seed: u64,
    pub causal: bool,
}

impl Default for Pipeline {
    fn default() -> Pipeline {
        Pipeline {
            train: TrainConfig::default(),
            window: DEFAULT_WINDOW,
            eval_stride: EVAL_STRIDE,
            gravity_alpha: PIPELINE_GRAVITY_ALPHA,
            init_seed: 7,
            causal: false,
        }
    }
}

fn windows_for(
    trials: &[Trial],
    mode: Mode,
    window: usize,
    stride: usize,
    gravity_alpha: f64,
) -> Result<Vec<FeatureWindow>> {
    let mut out = Vec::new();
    for t in trials {
        let (mut w, _) = make_windows(t, mode, window, stride, gravity_alpha)?;
        out.append(&mut w);
    }
    Ok(out)
}

/// Build and train a model from raw trials: window extraction, stats fitted
/// on the train split only, standardization of both splits, seeded init,
/// and the full training loop. The returned model carries the stats.
pub fn fit_pipeline(
    pipe: &Pipeline,
    variant: Variant,
    mode: Mode,
    train_trials: &[Trial],
    val_trials: &[Trial],
) -> Result<(Model, RunLog, ChannelStats)> {
    let mut train_w =
        windows_for(train_trials, mode, pipe.window, pipe.train.train_stride, pipe.gravity_alpha)?;
    if train_w.is_empty() {
        return Err(Error::Data("no training windows after extraction".into()));
    }
    let stats = fit_stats(&train_w, mode)?;
    standardize(&mut train_w, &stats)?;
    let mut val_w = windows_for(val_trials, mode, pipe.window, pipe.eval_stride, pipe.gravity_alpha)?;
    standardize(&mut val_w, &stats)?;
    let mut config = MagNetConfig::new(variant, mode.channels());
    config.causal = pipe.causal;
    let mut model = build(&config, seed::derive(pipe.init_seed, "model-init", 0))?;
    // head bias starts at the train-target centroid, the best constant
    // predictor, so optimization spends its steps on deviations rather than
    // on walking the bias across the building
    let n = train_w.len() as f64;
    let (cx, cy) = train_w
        .iter()
        .fold((0.0f64, 0.0f64), |(x, y), w| (x + w.target[0], y + w.target[1]));
    model.fc2_bias = Tensor::from_vec(&[2], vec![(cx / n) as f32, (cy / n) as f32])?;
    model.stats = Some(stats.clone());
    let log = train(&mut model, &train_w, &val_w, &pipe.train)?;
    Ok((model, log, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleRecord;
    use rand::Rng;

    fn toy_trial(id: &str, n: usize, seed: u64) -> Trial {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let t = i as f64 * 0.02;
                SampleRecord {
                    t,
                    mag: [
                        20.0 + 6.0 * (t * 1.3).sin() + rng.gen_range(-0.5..0.5),
                        -12.0 + 5.0 * (t * 0.7).cos(),
                        40.0 + 3.0 * (t * 2.1).sin(),
                    ],
                    acc: [0.0, 0.0, 9.81],
                    pos: [t * 0.8, (t * 0.5).sin() * 3.0, 0.0],
                }
            })
            .collect();
        Trial {
            building: "toy".into(),
            trial_id: id.into(),
            device: "synth".into(),
            sample_rate_hz: 50.0,
            rate_flagged: false,
            records,
        }
    }

    #[test]
    fn apportion_matches_largest_remainder_oracle() {
        assert_eq!(apportion(10, (0.7, 0.15, 0.15)), [7, 2, 1]);
        // 3 trials at the default ratios starve the test split; split() turns
        // this into the zero-trials error rather than silently rebalancing
        assert_eq!(apportion(3, (0.7, 0.15, 0.15)), [2, 1, 0]);
        assert_eq!(apportion(20, (0.5, 0.25, 0.25)), [10, 5, 5]);
        // exhaustive: sizes always sum to n and differ from quotas by < 1
        for n in 3..60 {
            for ratios in [(0.7, 0.15, 0.15), (0.6, 0.2, 0.2), (0.34, 0.33, 0.33)] {
                let s = apportion(n, ratios);
                assert_eq!(s.iter().sum::<usize>(), n);
                for (size, r) in s.iter().zip([ratios.0, ratios.1, ratios.2]) {
                    assert!((*size as f64 - r * n as f64).abs() < 1.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn split_ten_trials_gives_7_2_1() {
        let trials: Vec<Trial> = (0..10).map(|i| toy_trial(&format!("t{}", i), 30, i)).collect();
        let spec = SplitSpec::default();
        let (train, val, test) = split(&trials, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (7, 2, 1));
        // every trial lands in exactly one split
        let mut seen: Vec<&str> = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|t| t.trial_id.as_str())
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
        // deterministic
        let (train2, _, _) = split(&trials, &spec).unwrap();
        let ids: Vec<_> = train.iter().map(|t| &t.trial_id).collect();
        let ids2: Vec<_> = train2.iter().map(|t| &t.trial_id).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn split_rejects_small_and_degenerate_inputs() {
        let trials: Vec<Trial> = (0..2).map(|i| toy_trial(&format!("t{}", i), 30, i)).collect();
        let err = split(&trials, &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains(">= 3 trials"), "{}", err);

        let trials: Vec<Trial> = (0..4).map(|i| toy_trial(&format!("t{}", i), 30, i)).collect();
        let spec = SplitSpec { ratios: (0.9, 0.05, 0.05), ..SplitSpec::default() };
        let err = split(&trials, &spec).unwrap_err();
        assert!(err.to_string().contains("zero trials"), "{}", err);
    }

    #[test]
    fn explicit_assignment_overrides_ratios() {
        let trials: Vec<Trial> = (0..4).map(|i| toy_trial(&format!("t{}", i), 30, i)).collect();
        let mut map = BTreeMap::new();
        map.insert("t0".into(), SplitName::Test);
        map.insert("t1".into(), SplitName::Train);
        map.insert("t2".into(), SplitName::Val);
        map.insert("t3".into(), SplitName::Train);
        let spec = SplitSpec { ratios: (0.98, 0.01, 0.01), seed: 9, assignment: Some(map.clone()) };
        let (train, val, test) = split(&trials, &spec).unwrap();
        assert_eq!(train.iter().map(|t| t.trial_id.as_str()).collect::<Vec<_>>(), ["t1", "t3"]);
        assert_eq!(val[0].trial_id, "t2");
        assert_eq!(test[0].trial_id, "t0");

        let mut missing = map.clone();
        missing.remove("t3");
        let spec = SplitSpec { assignment: Some(missing), ..spec.clone() };
        assert!(split(&trials, &spec).unwrap_err().to_string().contains("misses trial 't3'"));

        let mut unknown = map;
        unknown.insert("ghost".into(), SplitName::Val);
        let spec = SplitSpec { assignment: Some(unknown), ..spec };
        assert!(split(&trials, &spec).unwrap_err().to_string().contains("unknown trial 'ghost'"));
    }

    #[test]
    fn leakage_guard_no_window_crosses_splits() {
        let trials: Vec<Trial> = (0..6).map(|i| toy_trial(&format!("t{}", i), 260, i)).collect();
        let (train, _, test) = split(&trials, &SplitSpec::default()).unwrap();
        let tw = windows_for(&train, Mode::Inv2d, 200, 5, 1.0).unwrap();
        let sw = windows_for(&test, Mode::Inv2d, 200, 1, 1.0).unwrap();
        for a in &tw {
            for b in &sw {
                assert_ne!(a.trial_id, b.trial_id);
            }
        }
    }

    #[test]
    fn config_validation_collects_problems() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            batch_size: 0,
            patience: 0,
            ..TrainConfig::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("learning rate"));
        assert!(msg.contains("batch size"));
        assert!(msg.contains("patience"));
        assert!(TrainConfig::default().validate().is_ok());
    }

    /// Scripted val curve: improves through epoch 5, worsens monotonically
    /// after. Patience 3 must stop the loop at epoch 8 with best at 5.
    #[test]
    fn early_stop_arithmetic_on_scripted_curve() {
        let mut model = build(&MagNetConfig::small(2), 1).unwrap();
        let windows = random_windows(4, 2, 32, 11);
        let config = TrainConfig {
            patience: 3,
            max_epochs: 50,
            batch_size: 4,
            learning_rate: 1e-9,
            ..TrainConfig::default()
        };
        let log = train_loop(&mut model, &windows, &config, "scripted".into(), |_, epoch| {
            Ok(if epoch <= 5 { 10.0 - epoch as f64 } else { epoch as f64 })
        })
        .unwrap();
        assert_eq!(log.best_epoch, 5);
        assert_eq!(log.epochs.len(), 8);
        assert!(log.stopped_early);
        assert_eq!(log.best_val_mae, 5.0);
    }

    fn random_windows(count: usize, channels: usize, len: usize, seed: u64) -> Vec<FeatureWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let data: Vec<f32> = (0..channels * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                FeatureWindow {
                    data: Tensor::from_vec(&[channels, len], data).unwrap(),
                    target: [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)],
                    building: "toy".into(),
                    trial_id: format!("w{}", i),
                    end_index: len - 1,
                }
            })
            .collect()
    }

    /// Capacity sanity: the network memorizes 32 windows to under 5 cm.
    #[test]
    fn micro_overfit_reaches_5cm() {
        let windows = random_windows(32, 3, 64, 5);
        let mut model = build(&MagNetConfig::small(3), 3).unwrap();
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 400,
            patience: 60,
            seed: 42,
            train_stride: 1,
        };
        let log = train(&mut model, &windows, &windows, &config).unwrap();
        assert!(log.epochs.len() <= 500);
        assert!(
            log.best_val_mae < 0.05,
            "memorization stalled at {} m after {} epochs",
            log.best_val_mae,
            log.epochs.len()
        );
        // the returned model is the best checkpoint, not the last epoch
        let restored = val_mae(&model, &windows).unwrap();
        assert!((restored - log.best_val_mae).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_data_identical_runs() {
        let windows = random_windows(12, 2, 40, 8);
        let val = random_windows(4, 2, 40, 9);
        let config = TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            patience: 10,
            ..TrainConfig::default()
        };
        let mut m1 = build(&MagNetConfig::small(2), 21).unwrap();
        let log1 = train(&mut m1, &windows, &val, &config).unwrap();
        let mut m2 = build(&MagNetConfig::small(2), 21).unwrap();
        let log2 = train(&mut m2, &windows, &val, &config).unwrap();
        assert_eq!(log1.epochs, log2.epochs);
        assert_eq!(log1.best_epoch, log2.best_epoch);
        assert_eq!(log1.dataset_digest, log2.dataset_digest);
        for (a, b) in m1.parameters().iter().zip(m2.parameters()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let mut windows = random_windows(4, 2, 32, 13);
        let poisoned = vec![f32::NAN; 2 * 32];
        windows[2].data = Tensor::from_vec(&[2, 32], poisoned).unwrap();
        let mut model = build(&MagNetConfig::small(2), 2).unwrap();
        let config =
            TrainConfig { batch_size: 4, max_epochs: 2, ..TrainConfig::default() };
        let err = train(&mut model, &windows, &windows[..1], &config).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epoch 1"), "{}", msg);
        assert!(msg.contains("batch 0"), "{}", msg);
        assert!(msg.contains("norm"), "{}", msg);
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn run_log_round_trips_and_best_is_min() {
        let windows = random_windows(8, 2, 32, 17);
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 4,
            patience: 10,
            ..TrainConfig::default()
        };
        let mut model = build(&MagNetConfig::small(2), 31).unwrap();
        let log = train(&mut model, &windows, &windows, &config).unwrap();
        let min = log.epochs.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
        assert_eq!(log.best_val_mae, min);
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("epochs.jsonl");
        let summary = dir.path().join("run.json");
        log.write_jsonl(&jsonl).unwrap();
        log.write_summary(&summary).unwrap();
        let lines = fs::read_to_string(&jsonl).unwrap();
        assert_eq!(lines.lines().count(), log.epochs.len());
        let back: RunLog = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
        assert_eq!(back.epochs, log.epochs);
        assert_eq!(back.dataset_digest, log.dataset_digest);
    }

    #[test]
    fn fit_pipeline_trains_end_to_end_on_toy_trials() {
        let train_trials: Vec<Trial> = (0..2).map(|i| toy_trial(&format!("tr{}", i), 140, i)).collect();
        let val_trials = vec![toy_trial("va", 140, 7)];
        let pipe = Pipeline {
            train: TrainConfig {
                max_epochs: 2,
                batch_size: 8,
                train_stride: 10,
                ..TrainConfig::default()
            },
            window: 100,
            eval_stride: 20,
            ..Pipeline::default()
        };
        let (model, log, stats) =
            fit_pipeline(&pipe, Variant::S, Mode::Inv2d, &train_trials, &val_trials).unwrap();
        assert_eq!(model.config.input_channels, 2);
        assert_eq!(stats.mode, Mode::Inv2d);
        assert!(model.stats.is_some());
        assert_eq!(log.epochs.len(), 2);
        assert!(log.best_val_mae.is_finite());
    }
}
