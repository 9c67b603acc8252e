use std::fmt;
use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{graph_batch, koopman_batch, sequence_embeddings, KoopmanItem};
use super::model::GkaeModel;
use crate::error::{Error, Result};
use crate::graph::{GraphSequence, GraphSnapshot};
use crate::nn::{AdamConfig, AdamState, Parameters};
use crate::swarm_sim::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Linear horizon in steps.
    pub tau: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub lr: f64,
    /// Training-window length in frames; defaults to `tau + 1`.
    pub window: Option<usize>,
    pub seed: u64,
    /// Minibatch size; `None` means one full-batch step per epoch.
    pub batch_size: Option<usize>,
    /// Offset between consecutive phase-2 windows.
    pub window_stride: usize,
    /// Use every n-th frame for phase 1.
    pub frame_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha1: 1.0,
            alpha2: 1.0,
            tau: 30,
            epochs_phase1: 400,
            epochs_phase2: 400,
            lr: 1e-3,
            window: None,
            seed: 0,
            batch_size: None,
            window_stride: 1,
            frame_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if !(self.alpha1 >= 0.0 && self.alpha1.is_finite() && self.alpha2 >= 0.0 && self.alpha2.is_finite()) {
            return bad(format!("loss weights must be finite and >= 0, got {} and {}", self.alpha1, self.alpha2));
        }
        if self.epochs_phase1 + self.epochs_phase2 == 0 {
            return bad("at least one training epoch is required".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.window_len() < self.tau + 1 {
            return bad(format!("window {} is shorter than tau + 1 = {}", self.window_len(), self.tau + 1));
        }
        if self.batch_size == Some(0) || self.window_stride == 0 || self.frame_stride == 0 {
            return bad("batch size and strides must be positive".into());
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.window.unwrap_or(self.tau + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Graph,
    Koopman,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Graph => "1",
            Phase::Koopman => "2",
        })
    }
}

/// Losses of one epoch; terms not optimised in that phase are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    /// 1-based within its phase.
    pub epoch: usize,
    pub phase: Phase,
    pub l_grec: Option<f64>,
    pub l_rec: Option<f64>,
    pub l_pred: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochLoss> {
        self.epochs.iter().filter(move |e| e.phase == phase)
    }

    /// `epoch,phase,L_grec,L_rec,L_pred,total`; absent terms are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "phase", "L_grec", "L_rec", "L_pred", "total"])?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.phase.to_string(),
                opt(e.l_grec),
                opt(e.l_rec),
                opt(e.l_pred),
                fmt_f64(e.total),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_dataset(model: &GkaeModel, dataset: &[GraphSequence]) -> Result<()> {
    if dataset.is_empty() || dataset.iter().all(GraphSequence::is_empty) {
        return Err(Error::Input("training dataset is empty".into()));
    }
    for (i, seq) in dataset.iter().enumerate() {
        if !seq.is_normalized() {
            return Err(Error::State(format!("sequence {i} is not normalized")));
        }
        if seq.num_nodes() != model.dims.num_uavs {
            return Err(Error::shape(
                format!("{} UAVs", model.dims.num_uavs),
                format!("{} UAVs in sequence {i}", seq.num_nodes()),
            ));
        }
        if seq.norm != model.norm {
            return Err(Error::Config(format!(
                "sequence {i} normalization (scale {}) differs from the model's (scale {})",
                seq.norm.scale, model.norm.scale
            )));
        }
    }
    Ok(())
}

fn non_finite(phase: Phase, epoch: usize, what: &str) -> Error {
    Error::Numeric(format!("non-finite {what} in phase {phase}, epoch {epoch}; training aborted"))
}

/// Splits `n` shuffled indices into batches of `size` (the last may be short).
fn batches(n: usize, size: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    match size {
        None => vec![idx],
        Some(b) => {
            idx.shuffle(rng);
            idx.chunks(b).map(<[usize]>::to_vec).collect()
        }
    }
}

fn adam_step<P: Parameters>(params: &mut P, grads: &P, adam: &mut AdamState) -> Result<()> {
    let mut flat = params.flatten();
    adam.step(&mut flat, &grads.flatten())?;
    params.assign(&flat)
}

/// Two-phase training. Phase 1 fits the graph autoencoder on
/// `alpha1 * L_grec`; phase 2 freezes it and fits the Koopman
/// autoencoder on `alpha2 * (L_rec + L_pred)` over sliding windows.
pub fn train(mut model: GkaeModel, dataset: &[GraphSequence], cfg: &TrainConfig) -> Result<(GkaeModel, LossHistory)> {
    cfg.validate()?;
    model.validate()?;
    check_dataset(&model, dataset)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut history = LossHistory::default();
    let d_out = model.dims.d_out;

    let frames: Vec<&GraphSnapshot> = dataset
        .iter()
        .flat_map(|s| s.snapshots.iter().step_by(cfg.frame_stride))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.graph.num_params(), adam_cfg);
    for epoch in 1..=cfg.epochs_phase1 {
        let mut sum = 0.0;
        for batch in batches(frames.len(), cfg.batch_size, &mut rng) {
            let snaps: Vec<&GraphSnapshot> = batch.iter().map(|&i| frames[i]).collect();
            let w = 1.0 / snaps.len() as f64;
            let (loss, grads) = graph_batch(&model.graph, d_out, &snaps, w * cfg.alpha1, true);
            if !loss.is_finite() {
                return Err(non_finite(Phase::Graph, epoch, "L_grec"));
            }
            sum += loss;
            adam_step(&mut model.graph, &grads.expect("gradient requested"), &mut adam)?;
        }
        if !model.graph.all_finite() {
            return Err(non_finite(Phase::Graph, epoch, "parameters"));
        }
        let l_grec = sum / frames.len() as f64;
        history.epochs.push(EpochLoss {
            epoch,
            phase: Phase::Graph,
            l_grec: Some(l_grec),
            l_rec: None,
            l_pred: None,
            total: cfg.alpha1 * l_grec,
        });
        model.meta.epochs_phase1 += 1;
        model.meta.final_l_grec = Some(l_grec);
        log_epoch(Phase::Graph, epoch, cfg.epochs_phase1, &history);
    }

    if cfg.epochs_phase2 > 0 {
        let embeddings = dataset
            .iter()
            .map(|s| sequence_embeddings(&model, s))
            .collect::<Result<Vec<_>>>()?;
        let window = cfg.window_len();
        let items: Vec<KoopmanItem> = embeddings
            .iter()
            .enumerate()
            .flat_map(|(seq, e)| {
                (0..(e.len() + 1).saturating_sub(window))
                    .step_by(cfg.window_stride)
                    .map(move |t| KoopmanItem {
                        seq,
                        t,
                        rec: true,
                        pred: true,
                    })
            })
            .collect();
        if items.is_empty() {
            return Err(Error::Input(format!("no sequence is long enough for a {window}-frame window")));
        }
        let tau = cfg.tau;
        let mut adam = AdamState::new(model.koopman.num_params(), adam_cfg);
        for epoch in 1..=cfg.epochs_phase2 {
            let (mut rec, mut pred) = (0.0, 0.0);
            for batch in batches(items.len(), cfg.batch_size, &mut rng) {
                let sel: Vec<KoopmanItem> = batch.iter().map(|&i| items[i]).collect();
                let w = cfg.alpha2 / sel.len() as f64;
                let (r, p, grads) = koopman_batch(&model.koopman, &embeddings, &sel, tau, w, w / tau as f64, true);
                if !(r.is_finite() && p.is_finite()) {
                    return Err(non_finite(Phase::Koopman, epoch, "L_rec + L_pred"));
                }
                rec += r;
                pred += p;
                adam_step(&mut model.koopman, &grads.expect("gradient requested"), &mut adam)?;
            }
            if !model.koopman.all_finite() {
                return Err(non_finite(Phase::Koopman, epoch, "parameters"));
            }
            let n = items.len() as f64;
            let (l_rec, l_pred) = (rec / n, pred / (n * tau as f64));
            history.epochs.push(EpochLoss {
                epoch,
                phase: Phase::Koopman,
                l_grec: None,
                l_rec: Some(l_rec),
                l_pred: Some(l_pred),
                total: cfg.alpha2 * (l_rec + l_pred),
            });
            model.meta.epochs_phase2 += 1;
            model.meta.final_l_rec = Some(l_rec);
            model.meta.final_l_pred = Some(l_pred);
            log_epoch(Phase::Koopman, epoch, cfg.epochs_phase2, &history);
        }
    }
    model.meta.seed = cfg.seed;
    Ok((model, history))
}

fn log_epoch(phase: Phase, epoch: usize, total: usize, history: &LossHistory) {
    let Some(last) = history.epochs.last() else { return };
    if epoch == 1 || epoch == total || epoch.is_multiple_of(50) {
        info!("phase {phase} epoch {epoch}/{total}: loss {:.6e}", last.total);
    } else {
        debug!("phase {phase} epoch {epoch}/{total}: loss {:.6e}", last.total);
    }
}
