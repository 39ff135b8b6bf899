//! Search orchestration: hypernetwork training over random architectures,
//! candidate scoring and ranking, accept-if-better chain refinement, final
//! retraining, and the correlation/corruption diagnostics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod stats;

use crate::arch::{
    corrupt_encoding, encode, perturb, sample_architecture, ArchitectureSpec, CorruptMode,
    EncodingTensor, SearchSpaceConfig,
};
use crate::data::{augment, AugmentPolicy, Dataset};
use crate::dynnet::{
    forward, init_retrain, init_shared, retrain_loss, smash_loss, OpKernels, RetrainParams,
    SharedParams,
};
use crate::error::{Error, Result};
use crate::hypernet::{build_hypernet, HyperNet, HyperNetSpec};
use crate::optim::{cosine_anneal, Optimizer, OptimizerConfig};
use crate::scalar::Scalar;
use crate::tensor::{BnPhase, Tensor};

const SCORE_CHUNK: usize = 128;

/// Settings for the search-phase training loop. Defaults mirror the
/// reference setup: adaptive updates at 2e-4 under cosine annealing,
/// batches of 50.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment: AugmentPolicy,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 100,
            batch_size: 50,
            learning_rate: 2e-4,
            augment: AugmentPolicy::None,
        }
    }
}

/// Settings for retraining a fixed architecture with free weights:
/// momentum 0.9 at step size 0.1 under cosine annealing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub augment: AugmentPolicy,
}

impl Default for RetrainSettings {
    fn default() -> Self {
        RetrainSettings {
            epochs: 300,
            batch_size: 50,
            learning_rate: 0.1,
            momentum: 0.9,
            augment: AugmentPolicy::None,
        }
    }
}

/// Candidate-selection defaults: 500 initial samples, 100 warm
/// perturbations, a 100-step accept-if-better chain, 5% element resample
/// rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    pub candidates: usize,
    pub warm_perturbations: usize,
    pub chain_steps: usize,
    pub perturb_rate: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings { candidates: 500, warm_perturbations: 100, chain_steps: 100, perturb_rate: 0.05 }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TelemetryEvent {
    Phase { name: String },
    Step { step: u64, epoch: usize, loss: f64, lr: f64 },
    Epoch { epoch: usize, mean_loss: f64 },
    Score { index: usize, error: f64, params: u64 },
    Chain { step: usize, proposal: f64, incumbent: f64, accepted: bool },
    Retrain { index: usize, error: f64 },
}

/// Sink for line-delimited progress events; the CLI writes them as JSON.
pub trait Telemetry {
    fn event(&mut self, ev: &TelemetryEvent);
}

pub struct NullTelemetry;

impl Telemetry for NullTelemetry {
    fn event(&mut self, _ev: &TelemetryEvent) {}
}

/// The trained search-phase apparatus: weight generator plus the freely
/// learned main-network parameters.
pub struct SmashModel<T: Scalar> {
    pub hyper: HyperNet<T>,
    pub shared: SharedParams<T>,
}

impl<T: Scalar> SmashModel<T> {
    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = self.hyper.params();
        p.extend(self.shared.params());
        p
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut p = self.hyper.named_params();
        p.extend(self.shared.named_params());
        p
    }

    pub fn detached(&self) -> SmashModel<T> {
        SmashModel { hyper: self.hyper.detached(), shared: self.shared.detached() }
    }
}

/// Resumable training state. Checkpointing captures the model tensors,
/// optimizer moments, RNG position, and epoch counter; restoring them and
/// continuing reproduces the uninterrupted run bit for bit (epochs are the
/// checkpoint boundary).
pub struct TrainState<T: Scalar> {
    pub config: SearchSpaceConfig,
    pub hyper_spec: HyperNetSpec,
    pub settings: TrainSettings,
    pub model: SmashModel<T>,
    pub optimizer: Optimizer<T>,
    pub rng: ChaCha8Rng,
    pub epochs_done: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(
        config: &SearchSpaceConfig,
        hyper_spec: &HyperNetSpec,
        settings: &TrainSettings,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyper = build_hypernet::<T, _>(config, hyper_spec, &mut rng)?;
        let shared = init_shared::<T, _>(config, &mut rng)?;
        let model = SmashModel { hyper, shared };
        let optimizer = Optimizer::new(
            OptimizerConfig::adam(settings.learning_rate),
            &model.params(),
        );
        Ok(TrainState {
            config: config.clone(),
            hyper_spec: hyper_spec.clone(),
            settings: settings.clone(),
            model,
            optimizer,
            rng,
            epochs_done: 0,
        })
    }

    pub fn steps_per_epoch(&self, data: &Dataset) -> Result<usize> {
        let sp = data.train.len() / self.settings.batch_size;
        if sp == 0 {
            return Err(Error::Invalid {
                what: "train_smash",
                detail: format!(
                    "{} train samples cannot fill a batch of {}",
                    data.train.len(),
                    self.settings.batch_size
                ),
            });
        }
        Ok(sp)
    }

    /// Run `count` epochs (clamped to the schedule) of one-architecture-
    /// per-step training.
    pub fn run_epochs(
        &mut self,
        data: &Dataset,
        count: usize,
        telemetry: &mut dyn Telemetry,
    ) -> Result<()> {
        let sp = self.steps_per_epoch(data)?;
        let total_steps = self.settings.epochs * sp;
        let params = self.model.params();
        let bs = self.settings.batch_size;

        for _ in 0..count {
            if self.epochs_done >= self.settings.epochs {
                return Err(Error::SchedulePastEnd {
                    t: self.epochs_done + 1,
                    total: self.settings.epochs,
                });
            }
            let mut order = data.train.clone();
            order.shuffle(&mut self.rng);
            let mut loss_sum = 0.0f64;
            for si in 0..sp {
                let step = (self.epochs_done * sp + si) as u64;
                let lr = cosine_anneal(self.settings.learning_rate, step as usize, total_steps)?;
                let batch_idx = &order[si * bs..(si + 1) * bs];
                let (raw, labels) = data.gather(batch_idx);
                let raw = augment(
                    &raw,
                    bs,
                    data.channels,
                    data.height,
                    data.width,
                    self.settings.augment,
                    &mut self.rng,
                );
                let arch = sample_architecture(&self.config, &mut self.rng, None)?;
                let x = to_tensor::<T>(&raw, &[bs, data.channels, data.height, data.width]);
                let loss = smash_loss(&arch, &self.model.hyper, &self.model.shared, &x, &labels, BnPhase::Train)?;
                let loss_val = loss.item().as_f64();
                if !loss_val.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        arch_json: serde_json::to_string(&arch).unwrap_or_default(),
                    });
                }
                params.iter().for_each(|p| p.zero_grad());
                loss.backward()?;
                self.optimizer.step(&params, lr)?;
                loss_sum += loss_val;
                telemetry.event(&TelemetryEvent::Step {
                    step,
                    epoch: self.epochs_done,
                    loss: loss_val,
                    lr,
                });
            }
            self.epochs_done += 1;
            telemetry.event(&TelemetryEvent::Epoch {
                epoch: self.epochs_done,
                mean_loss: loss_sum / sp as f64,
            });
        }
        Ok(())
    }
}

fn to_tensor<T: Scalar>(raw: &[f32], shape: &[usize]) -> Tensor<T> {
    Tensor::from_vec(shape, raw.iter().map(|&v| T::from_f64(v as f64)).collect())
}

/// Train the search-phase apparatus from scratch: per step, a fresh
/// architecture is sampled, its weights generated, and one adaptive update
/// applied to the generator and the shared parameters.
pub fn train_smash<T: Scalar>(
    config: &SearchSpaceConfig,
    hyper_spec: &HyperNetSpec,
    settings: &TrainSettings,
    data: &Dataset,
    seed: u64,
    telemetry: &mut dyn Telemetry,
) -> Result<TrainState<T>> {
    telemetry.event(&TelemetryEvent::Phase { name: "train".into() });
    let mut state = TrainState::new(config, hyper_spec, settings, seed)?;
    state.run_epochs(data, settings.epochs, telemetry)?;
    Ok(state)
}

fn eval_split<'a>(data: &'a Dataset, split: &'a [u32], what: &'static str) -> Result<&'a [u32]> {
    if split.is_empty() {
        return Err(Error::EmptySplit { what });
    }
    let _ = data;
    Ok(split)
}

/// Classification error fraction of an architecture under generated
/// weights, on the full validation split. Pure given its inputs.
pub fn smash_score<T: Scalar>(
    model: &SmashModel<T>,
    arch: &ArchitectureSpec,
    data: &Dataset,
) -> Result<f64> {
    let enc = encode::<T>(arch)?;
    score_with_encoding(model, arch, &enc, data)
}

/// Same, with an explicit (possibly corrupted) encoding supplying the
/// weights.
pub fn score_with_encoding<T: Scalar>(
    model: &SmashModel<T>,
    arch: &ArchitectureSpec,
    enc: &EncodingTensor<T>,
    data: &Dataset,
) -> Result<f64> {
    let split = eval_split(data, &data.val, "val")?;
    let frozen = model.detached();
    let bank = frozen.hyper.generate_weights(enc)?;
    let mut wrong = 0usize;
    for chunk in split.chunks(SCORE_CHUNK) {
        let (raw, labels) = data.gather(chunk);
        let x = to_tensor::<T>(&raw, &[chunk.len(), data.channels, data.height, data.width]);
        let logits = forward(arch, OpKernels::Generated(&bank), &frozen.shared, &x, BnPhase::Eval)?;
        wrong += count_errors(&logits, &labels);
    }
    Ok(wrong as f64 / split.len() as f64)
}

fn count_errors<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    let d = logits.data();
    let mut wrong = 0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &d[i * k..(i + 1) * k];
        let mut best = 0usize;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        wrong += (best != label) as usize;
    }
    wrong
}

/// One scored candidate. `true_error` is filled by retraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: u64,
    pub arch: ArchitectureSpec,
    pub smash_error: f64,
    pub true_error: Option<f64>,
    pub param_count: u64,
}

/// Sample `n` fresh architectures and sort them ascending by score, ties
/// broken by parameter count then creation index.
pub fn rank_candidates<T: Scalar>(
    model: &SmashModel<T>,
    config: &SearchSpaceConfig,
    n: usize,
    data: &Dataset,
    rng: &mut ChaCha8Rng,
    telemetry: &mut dyn Telemetry,
) -> Result<Vec<ScoreRecord>> {
    if n == 0 {
        return Err(Error::Invalid { what: "rank_candidates", detail: "n must be >= 1".into() });
    }
    let mut records = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let arch = sample_architecture(config, rng, None)?;
        let smash_error = smash_score(model, &arch, data)?;
        let param_count = crate::arch::param_count(&arch);
        telemetry.event(&TelemetryEvent::Score { index: id as usize, error: smash_error, params: param_count });
        records.push(ScoreRecord { id, arch, smash_error, true_error: None, param_count });
    }
    sort_records(&mut records);
    Ok(records)
}

pub fn sort_records(records: &mut [ScoreRecord]) {
    records.sort_by(|a, b| {
        a.smash_error
            .partial_cmp(&b.smash_error)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.param_count.cmp(&b.param_count))
            .then(a.id.cmp(&b.id))
    });
}

pub struct RefineOutcome {
    pub incumbent: ArchitectureSpec,
    pub score: f64,
    /// Incumbent score after each chain step (monotone non-increasing).
    pub trace: Vec<f64>,
}

/// Two-phase refinement around `base`: score `n_warm` independent
/// perturbations and keep the best, then walk `n_chain` steps accepting
/// only strict improvements.
#[allow(clippy::too_many_arguments)]
pub fn mcmc_refine<T: Scalar>(
    model: &SmashModel<T>,
    base: &ArchitectureSpec,
    data: &Dataset,
    n_warm: usize,
    n_chain: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
    telemetry: &mut dyn Telemetry,
) -> Result<RefineOutcome> {
    telemetry.event(&TelemetryEvent::Phase { name: "refine".into() });
    let mut incumbent = base.clone();
    let mut best = smash_score(model, &incumbent, data)?;
    for _ in 0..n_warm {
        let cand = perturb(base, rate, rng)?;
        let s = smash_score(model, &cand, data)?;
        if s < best {
            best = s;
            incumbent = cand;
        }
    }
    let mut trace = Vec::with_capacity(n_chain);
    for step in 0..n_chain {
        let cand = perturb(&incumbent, rate, rng)?;
        let s = smash_score(model, &cand, data)?;
        let accepted = s < best;
        if accepted {
            best = s;
            incumbent = cand;
        }
        trace.push(best);
        telemetry.event(&TelemetryEvent::Chain { step, proposal: s, incumbent: best, accepted });
    }
    Ok(RefineOutcome { incumbent, score: best, trace })
}

pub struct RetrainOutcome<T: Scalar> {
    pub shared: SharedParams<T>,
    pub ops: RetrainParams<T>,
    pub error: f64,
}

/// Fix the architecture and train it normally: fresh standard init, all
/// parameters free, momentum updates, batch normalization in place of
/// weight normalization. Returns the error on the test split (validation
/// split when no test data exists).
pub fn retrain<T: Scalar>(
    arch: &ArchitectureSpec,
    data: &Dataset,
    settings: &RetrainSettings,
    seed: u64,
    telemetry: &mut dyn Telemetry,
) -> Result<RetrainOutcome<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = init_shared::<T, _>(&arch.config, &mut rng)?;
    let ops = init_retrain::<T, _>(arch, &mut rng)?;
    let mut params = shared.params();
    params.extend(ops.params());
    let mut opt = Optimizer::new(
        OptimizerConfig::nesterov(settings.learning_rate, settings.momentum),
        &params,
    );

    let bs = settings.batch_size;
    let sp = data.train.len() / bs;
    if sp == 0 {
        return Err(Error::Invalid {
            what: "retrain",
            detail: format!("{} train samples cannot fill a batch of {bs}", data.train.len()),
        });
    }
    let total_steps = settings.epochs * sp;
    for epoch in 0..settings.epochs {
        let mut order = data.train.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for si in 0..sp {
            let step = epoch * sp + si;
            let lr = cosine_anneal(settings.learning_rate, step, total_steps)?;
            let batch_idx = &order[si * bs..(si + 1) * bs];
            let (raw, labels) = data.gather(batch_idx);
            let raw = augment(&raw, bs, data.channels, data.height, data.width, settings.augment, &mut rng);
            let x = to_tensor::<T>(&raw, &[bs, data.channels, data.height, data.width]);
            let loss = retrain_loss(arch, &ops, &shared, &x, &labels, BnPhase::Train)?;
            let loss_val = loss.item().as_f64();
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step as u64,
                    arch_json: serde_json::to_string(arch).unwrap_or_default(),
                });
            }
            params.iter().for_each(|p| p.zero_grad());
            loss.backward()?;
            opt.step(&params, lr)?;
            loss_sum += loss_val;
        }
        telemetry.event(&TelemetryEvent::Epoch { epoch: epoch + 1, mean_loss: loss_sum / sp as f64 });
    }

    let split = if !data.test.is_empty() { &data.test } else { &data.val };
    let split = eval_split(data, split, "val")?;
    let mut wrong = 0usize;
    for chunk in split.chunks(SCORE_CHUNK) {
        let (raw, labels) = data.gather(chunk);
        let x = to_tensor::<T>(&raw, &[chunk.len(), data.channels, data.height, data.width]);
        let logits = forward(arch, OpKernels::Free(&ops), &shared, &x, BnPhase::Eval)?;
        wrong += count_errors(&logits, &labels);
    }
    let error = wrong as f64 / split.len() as f64;
    Ok(RetrainOutcome { shared, ops, error })
}

/// Ranked records plus rank-correlation statistics over the retrained
/// subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub seed: u64,
    pub config: SearchSpaceConfig,
    pub records: Vec<ScoreRecord>,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub fit_slope: Option<f64>,
    pub fit_intercept: Option<f64>,
    /// One-sided permutation p-value for a positive rank correlation.
    pub p_one_sided: Option<f64>,
}

impl SearchReport {
    pub fn from_records(seed: u64, config: SearchSpaceConfig, records: Vec<ScoreRecord>) -> Self {
        SearchReport {
            seed,
            config,
            records,
            spearman: None,
            pearson: None,
            fit_slope: None,
            fit_intercept: None,
            p_one_sided: None,
        }
    }

    pub fn complete_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in &self.records {
            if let Some(t) = r.true_error {
                x.push(r.smash_error);
                y.push(t);
            }
        }
        (x, y)
    }

    /// Fill the correlation statistics from the complete pairs.
    pub fn compute_stats(&mut self, perm_rng: &mut ChaCha8Rng) -> Result<()> {
        let (x, y) = self.complete_pairs();
        if x.len() < 3 {
            return Err(Error::CorrelationUndefined { pairs: x.len() });
        }
        self.spearman = Some(stats::spearman(&x, &y));
        self.pearson = Some(stats::pearson(&x, &y));
        let (m, b) = stats::least_squares(&x, &y);
        self.fit_slope = Some(m);
        self.fit_intercept = Some(b);
        self.p_one_sided = Some(stats::spearman_perm_p(&x, &y, 10_000, perm_rng));
        Ok(())
    }
}

/// Score `n_sample` fresh architectures, retrain every `keep_every`-th of
/// the sorted list on a short schedule, and correlate the two error
/// columns.
#[allow(clippy::too_many_arguments)]
pub fn correlation_study<T: Scalar>(
    model: &SmashModel<T>,
    config: &SearchSpaceConfig,
    data: &Dataset,
    n_sample: usize,
    keep_every: usize,
    retrain_settings: &RetrainSettings,
    rng: &mut ChaCha8Rng,
    telemetry: &mut dyn Telemetry,
) -> Result<SearchReport> {
    telemetry.event(&TelemetryEvent::Phase { name: "correlate".into() });
    if keep_every == 0 {
        return Err(Error::Invalid { what: "correlation_study", detail: "keep_every must be >= 1".into() });
    }
    let seed_tag = rng.gen::<u64>();
    let mut records = rank_candidates(model, config, n_sample, data, rng, telemetry)?;
    for idx in (0..records.len()).step_by(keep_every) {
        let retrain_seed = rng.gen::<u64>();
        let outcome = retrain::<T>(&records[idx].arch, data, retrain_settings, retrain_seed, telemetry)?;
        records[idx].true_error = Some(outcome.error);
        telemetry.event(&TelemetryEvent::Retrain { index: idx, error: outcome.error });
    }
    let mut report = SearchReport::from_records(seed_tag, config.clone(), records);
    report.compute_stats(rng)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub arch_index: usize,
    pub mode: CorruptMode,
    pub clean: f64,
    pub corrupted: f64,
    pub delta: f64,
    /// False when the architecture offered no degree of freedom for this
    /// corruption and the encoding is unchanged.
    pub changed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    /// Fraction of changed rows where the clean encoding scored strictly
    /// better (lower error) than the corrupted one.
    pub fraction_clean_better: Option<f64>,
}

/// Score each architecture with its own weights and with weights generated
/// from corrupted encodings.
pub fn corruption_probe<T: Scalar>(
    model: &SmashModel<T>,
    archs: &[ArchitectureSpec],
    modes: &[CorruptMode],
    data: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeTable> {
    let mut rows = Vec::with_capacity(archs.len() * modes.len());
    for (ai, arch) in archs.iter().enumerate() {
        let clean = smash_score(model, arch, data)?;
        let enc = encode::<T>(arch)?;
        for &mode in modes {
            let out = corrupt_encoding(&enc, &arch.config, mode, rng)?;
            let corrupted = if out.changed {
                score_with_encoding(model, arch, &out.encoding, data)?
            } else {
                clean
            };
            rows.push(ProbeRow {
                arch_index: ai,
                mode,
                clean,
                corrupted,
                delta: corrupted - clean,
                changed: out.changed,
            });
        }
    }
    let changed: Vec<&ProbeRow> = rows.iter().filter(|r| r.changed).collect();
    let fraction_clean_better = if changed.is_empty() {
        None
    } else {
        Some(changed.iter().filter(|r| r.clean < r.corrupted).count() as f64 / changed.len() as f64)
    };
    Ok(ProbeTable { rows, fraction_clean_better })
}

/// One capacity-ablation arm: a search space, generator shape, and
/// training budget to run end to end.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationArm {
    pub label: String,
    pub space: SearchSpaceConfig,
    pub hyper: HyperNetSpec,
    pub train: TrainSettings,
    pub n_sample: usize,
    pub keep_every: usize,
    pub retrain: RetrainSettings,
}

/// Train and correlate each arm independently. Reports sit side by side;
/// no cross-arm score comparison is drawn (scores from different
/// apparatuses are not comparable).
pub fn capacity_ablation<T: Scalar>(
    arms: &[AblationArm],
    data: &Dataset,
    seed: u64,
    telemetry: &mut dyn Telemetry,
) -> Result<Vec<(String, SearchReport)>> {
    if arms.len() < 2 {
        return Err(Error::Invalid {
            what: "capacity_ablation",
            detail: "need at least two arms to compare".into(),
        });
    }
    let mut out = Vec::with_capacity(arms.len());
    for (i, arm) in arms.iter().enumerate() {
        telemetry.event(&TelemetryEvent::Phase { name: format!("ablation:{}", arm.label) });
        let arm_seed = seed.wrapping_add(i as u64);
        let state = train_smash::<T>(&arm.space, &arm.hyper, &arm.train, data, arm_seed, telemetry)?;
        let mut rng = ChaCha8Rng::seed_from_u64(arm_seed ^ 0x5eed_c0de);
        let report = correlation_study(
            &state.model,
            &arm.space,
            data,
            arm.n_sample,
            arm.keep_every,
            &arm.retrain,
            &mut rng,
            telemetry,
        )?;
        out.push((arm.label.clone(), report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_dataset, synth_dataset, SynthKind};

    fn desk_setup() -> (SearchSpaceConfig, HyperNetSpec, Dataset) {
        let cfg = SearchSpaceConfig {
            num_blocks: 2,
            ops_per_block: (1, 3),
            ..SearchSpaceConfig::v1_desk()
        };
        let data = synth_dataset(SynthKind::GaussianBlobs, 260, 10, 8, 77).unwrap();
        let data = split_dataset(data, 0.23, 7).unwrap();
        (cfg, HyperNetSpec::tiny(), data)
    }

    fn quick_train(seed: u64) -> (SearchSpaceConfig, Dataset, TrainState<f32>) {
        let (cfg, hspec, data) = desk_setup();
        let settings = TrainSettings { epochs: 2, batch_size: 50, ..TrainSettings::default() };
        let state = train_smash::<f32>(&cfg, &hspec, &settings, &data, seed, &mut NullTelemetry).unwrap();
        (cfg, data, state)
    }

    #[test]
    fn training_reduces_loss_on_toy_data() {
        let (cfg, hspec, data) = desk_setup();
        let settings = TrainSettings { epochs: 6, batch_size: 50, learning_rate: 2e-3, ..TrainSettings::default() };

        struct Capture {
            first: Option<f64>,
            last: f64,
        }
        impl Telemetry for Capture {
            fn event(&mut self, ev: &TelemetryEvent) {
                if let TelemetryEvent::Epoch { mean_loss, .. } = ev {
                    if self.first.is_none() {
                        self.first = Some(*mean_loss);
                    }
                    self.last = *mean_loss;
                }
            }
        }
        let mut cap = Capture { first: None, last: f64::NAN };
        train_smash::<f32>(&cfg, &hspec, &settings, &data, 3, &mut cap).unwrap();
        let first = cap.first.unwrap();
        assert!(
            cap.last < first,
            "mean epoch loss should fall: first {first}, last {}",
            cap.last
        );
    }

    #[test]
    fn training_is_seed_reproducible() {
        let (_, _, a) = quick_train(5);
        let (_, _, b) = quick_train(5);
        for (pa, pb) in a.model.params().iter().zip(b.model.params()) {
            assert_eq!(pa.to_vec(), pb.to_vec());
        }
    }

    #[test]
    fn untrained_score_sits_at_chance_level() {
        let (cfg, data, state) = quick_train(11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut errs = Vec::new();
        for _ in 0..5 {
            let arch = sample_architecture(&cfg, &mut rng, None).unwrap();
            errs.push(smash_score(&state.model, &arch, &data).unwrap());
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        // 10 classes: near-chance after a token amount of training.
        assert!(mean > 0.5, "mean error {mean}");
        for &e in &errs {
            assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn score_is_deterministic() {
        let (cfg, data, state) = quick_train(13);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let arch = sample_architecture(&cfg, &mut rng, None).unwrap();
        let a = smash_score(&state.model, &arch, &data).unwrap();
        let b = smash_score(&state.model, &arch, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_returns_sorted_permutation() {
        let (cfg, data, state) = quick_train(17);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records = rank_candidates(&state.model, &cfg, 8, &data, &mut rng, &mut NullTelemetry).unwrap();
        assert_eq!(records.len(), 8);
        let mut ids: Vec<u64> = records.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..8).collect::<Vec<u64>>());
        for w in records.windows(2) {
            assert!(w[0].smash_error <= w[1].smash_error);
        }
        let single = rank_candidates(&state.model, &cfg, 1, &data, &mut rng, &mut NullTelemetry).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn refine_trace_is_monotone_and_zero_budget_returns_base() {
        let (cfg, data, state) = quick_train(19);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = sample_architecture(&cfg, &mut rng, None).unwrap();
        let base_score = smash_score(&state.model, &base, &data).unwrap();

        let none = mcmc_refine(&state.model, &base, &data, 0, 0, 0.05, &mut rng, &mut NullTelemetry).unwrap();
        assert_eq!(none.incumbent, base);
        assert_eq!(none.score, base_score);

        let out = mcmc_refine(&state.model, &base, &data, 4, 8, 0.2, &mut rng, &mut NullTelemetry).unwrap();
        assert!(out.score <= base_score);
        for w in out.trace.windows(2) {
            assert!(w[1] <= w[0], "incumbent trace must not increase");
        }
    }

    #[test]
    fn retrain_learns_separable_data() {
        let (cfg, _, data) = desk_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let arch = sample_architecture(&cfg, &mut rng, None).unwrap();
        let settings = RetrainSettings {
            epochs: 4,
            batch_size: 50,
            learning_rate: 0.05,
            ..RetrainSettings::default()
        };
        let out = retrain::<f32>(&arch, &data, &settings, 8, &mut NullTelemetry).unwrap();
        assert!(out.error < 0.9, "retrained error {} should beat chance", out.error);
        let out2 = retrain::<f32>(&arch, &data, &settings, 8, &mut NullTelemetry).unwrap();
        assert_eq!(out.error, out2.error, "fixed seed reproducibility");
    }

    #[test]
    fn correlation_report_on_synthetic_pairs() {
        let (cfg, _, _) = desk_setup();
        // Hand-build records with perfectly monotone and anti-monotone
        // pairs to pin the statistics.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = sample_architecture(&cfg, &mut rng, None).unwrap();
        let rec = |id: u64, s: f64, t: f64| ScoreRecord {
            id,
            arch: arch.clone(),
            smash_error: s,
            true_error: Some(t),
            param_count: 0,
        };
        let mono: Vec<ScoreRecord> =
            (0..10).map(|i| rec(i, i as f64 * 0.05, 0.2 + i as f64 * 0.03)).collect();
        let mut report = SearchReport::from_records(0, cfg.clone(), mono);
        report.compute_stats(&mut rng).unwrap();
        assert_eq!(report.spearman, Some(1.0));
        assert!(report.p_one_sided.unwrap() < 0.01);

        let anti: Vec<ScoreRecord> =
            (0..10).map(|i| rec(i, i as f64 * 0.05, 0.5 - i as f64 * 0.03)).collect();
        let mut report = SearchReport::from_records(0, cfg.clone(), anti);
        report.compute_stats(&mut rng).unwrap();
        assert_eq!(report.spearman, Some(-1.0));

        let few: Vec<ScoreRecord> = (0..2).map(|i| rec(i, 0.1, 0.2)).collect();
        let mut report = SearchReport::from_records(0, cfg, few);
        assert!(matches!(
            report.compute_stats(&mut rng),
            Err(Error::CorrelationUndefined { pairs: 2 })
        ));
    }

    #[test]
    fn probe_table_has_expected_row_count() {
        let (cfg, data, state) = quick_train(23);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let archs: Vec<ArchitectureSpec> =
            (0..3).map(|_| sample_architecture(&cfg, &mut rng, None).unwrap()).collect();
        let modes = [CorruptMode::ShuffleDilations, CorruptMode::SwapLayers];
        let table = corruption_probe(&state.model, &archs, &modes, &data, &mut rng).unwrap();
        assert_eq!(table.rows.len(), archs.len() * modes.len());
        for row in &table.rows {
            if !row.changed {
                assert_eq!(row.delta, 0.0);
            }
        }
    }

    #[test]
    fn ablation_needs_two_arms_and_is_reproducible() {
        let (cfg, hspec, data) = desk_setup();
        let arm = AblationArm {
            label: "standard".into(),
            space: cfg.clone(),
            hyper: hspec.clone(),
            train: TrainSettings { epochs: 1, batch_size: 50, ..TrainSettings::default() },
            n_sample: 6,
            keep_every: 2,
            retrain: RetrainSettings { epochs: 1, batch_size: 50, ..RetrainSettings::default() },
        };
        let single = capacity_ablation::<f32>(&[arm.clone()], &data, 1, &mut NullTelemetry);
        assert!(single.is_err());

        let mut crippled = arm.clone();
        crippled.label = "crippled".into();
        crippled.hyper = HyperNetSpec { growth_rate: 1, ..HyperNetSpec::tiny() };
        let arms = [arm, crippled];
        let a = capacity_ablation::<f32>(&arms, &data, 1, &mut NullTelemetry).unwrap();
        let b = capacity_ablation::<f32>(&arms, &data, 1, &mut NullTelemetry).unwrap();
        assert_eq!(a.len(), 2);
        for ((la, ra), (lb, rb)) in a.iter().zip(&b) {
            assert_eq!(la, lb);
            assert_eq!(ra.spearman, rb.spearman);
            assert_eq!(ra.records.len(), rb.records.len());
        }
    }
}
