//! Ground-network link model, covert transmit-power control and Monte-Carlo
//! estimation of the probability that a UAV detects a ground transmission
//! when ground nodes plan their power from a predicted swarm trajectory.

use std::collections::BTreeSet;
use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::gkae::GkaeModel;
use crate::graph::NormalizationSpec;
use crate::swarm_sim::{fmt_f64, init_swarm, simulate_from, steps_for, SwarmConfig};

/// Thermal noise density (dBm/Hz).
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;
/// Bandwidth used to turn the noise density into a power (Hz).
pub const DEFAULT_BANDWIDTH_HZ: f64 = 1e6;

/// Noise power in watts for a density in dBm/Hz over `bandwidth_hz`.
pub fn noise_power(density_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    10f64.powf((density_dbm_hz - 30.0) / 10.0) * bandwidth_hz
}

/// Link-budget parameters shared by all ground nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkParams {
    /// Maximum transmit power (W).
    #[serde(rename = "P_max")]
    pub p_max: f64,
    /// Air-ground path-loss exponent.
    pub eta: f64,
    /// Ground-ground path-loss exponent.
    pub eta_t: f64,
    /// Noise power (W).
    #[serde(rename = "N0")]
    pub n0: f64,
    /// SNR threshold (linear).
    pub gamma_t: f64,
    /// Minimum number of links per node.
    #[serde(rename = "M_bar")]
    pub m_bar: usize,
    /// Power returned when no link is required (W).
    pub p_floor: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            p_max: 20.0,
            eta: 1.0,
            eta_t: 3.0,
            n0: noise_power(THERMAL_NOISE_DBM_HZ, DEFAULT_BANDWIDTH_HZ),
            gamma_t: 10.0,
            m_bar: 2,
            p_floor: 1e-12,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p_max > 0.0
            && self.p_max.is_finite()
            && self.eta > 0.0
            && self.eta.is_finite()
            && self.eta_t >= 0.0
            && self.eta_t.is_finite()
            && self.n0 > 0.0
            && self.n0.is_finite()
            && self.gamma_t >= 0.0
            && self.gamma_t.is_finite()
            && self.p_floor >= 0.0
            && self.p_floor <= self.p_max;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid network parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundNetwork {
    /// Node positions (m), all with `z = 0`.
    pub positions: Vec<Vec3>,
    pub params: NetworkParams,
}

impl GroundNetwork {
    pub fn new(positions: Vec<Vec3>, params: NetworkParams) -> Result<Self> {
        params.validate()?;
        if positions.is_empty() {
            return Err(Error::Config("ground network needs at least one node".into()));
        }
        if let Some(p) = positions.iter().find(|p| p.z() != 0.0 || !p.is_finite()) {
            return Err(Error::Config(format!("ground node {p:?} must be finite with z = 0")));
        }
        Ok(GroundNetwork { positions, params })
    }

    /// `n` nodes uniform over `[0, side)^2`, drawn one after another so that
    /// a larger network extends a smaller one drawn from the same stream.
    pub fn random<R: Rng + ?Sized>(n: usize, side: f64, params: NetworkParams, rng: &mut R) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::Config(format!("area side must be positive, got {side}")));
        }
        let positions = (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..side);
                let y = rng.random_range(0.0..side);
                Vec3::new(x, y, 0.0)
            })
            .collect();
        Self::new(positions, params)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn positive_distance(a: Vec3, b: Vec3) -> Result<f64> {
    let d = a.distance(&b);
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::Input(format!("coincident positions {a:?} and {b:?}")))
    }
}

/// `P d^-eta` for the air-ground link between `uav` and `node`.
pub fn received_power(p: f64, uav: Vec3, node: Vec3, eta: f64) -> Result<f64> {
    let d = positive_distance(uav, node)?;
    Ok(p * d.powf(-eta))
}

/// Instantaneous linear SNR `P d^-eta_t nu / N0`.
pub fn snr(p: f64, d: f64, nu: f64, eta_t: f64, n0: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::Input(format!("link distance must be positive, got {d}")));
    }
    if n0 <= 0.0 {
        return Err(Error::Input(format!("noise power must be positive, got {n0}")));
    }
    Ok(p * d.powf(-eta_t) * nu / n0)
}

/// Unit-mean exponential fading sample.
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::Exp1)
}

/// Nodes reachable from `i` at power `p` with mean SNR at least `gamma_t`.
pub fn mean_link_set(net: &GroundNetwork, i: usize, p: f64) -> BTreeSet<usize> {
    let prm = &net.params;
    let from = net.positions[i];
    net.positions
        .iter()
        .enumerate()
        .filter(|&(j, &to)| j != i && p * from.distance(&to).powf(-prm.eta_t) / prm.n0 >= prm.gamma_t)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalPower {
    pub watts: f64,
    /// The link requirement needed more than `P_max`.
    pub capped: bool,
}

/// Smallest power giving node `i` at least `M_bar` mean links:
/// `gamma_t N0 d^eta_t` with `d` the `M_bar`-th nearest-neighbour distance.
pub fn nominal_power(net: &GroundNetwork, i: usize) -> Result<NominalPower> {
    let prm = &net.params;
    if prm.m_bar >= net.len() {
        return Err(Error::Config(format!(
            "M_bar = {} needs more than {} ground nodes",
            prm.m_bar,
            net.len()
        )));
    }
    if prm.m_bar == 0 {
        return Ok(NominalPower {
            watts: prm.p_floor,
            capped: false,
        });
    }
    let from = net.positions[i];
    let mut dists: Vec<f64> = net
        .positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| from.distance(p))
        .collect();
    dists.sort_by(f64::total_cmp);
    let required = prm.gamma_t * prm.n0 * dists[prm.m_bar - 1].powf(prm.eta_t);
    if required > prm.p_max {
        warn!("node {i} needs {required:.3e} W for {} links; capped at P_max", prm.m_bar);
        return Ok(NominalPower {
            watts: prm.p_max,
            capped: true,
        });
    }
    Ok(NominalPower {
        watts: required.max(prm.p_floor),
        capped: false,
    })
}

/// How nominal powers are chosen before the covert bound is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalMode {
    /// Every node starts from `P_max`.
    #[default]
    Max,
    /// Per-node link-budget power, see [`nominal_power`].
    LinkBudget,
}

pub fn nominal_powers(net: &GroundNetwork, mode: NominalMode) -> Result<Vec<f64>> {
    match mode {
        NominalMode::Max => Ok(vec![net.params.p_max; net.len()]),
        NominalMode::LinkBudget => (0..net.len()).map(|i| nominal_power(net, i).map(|p| p.watts)).collect(),
    }
}

/// Covert power bound for every node given one UAV frame: the strongest
/// air-ground gain `w_n = max_l d_{l,n}^-eta` caps `P_n` at `P_det / w_n`.
pub fn transmit_power_bound(net: &GroundNetwork, uavs: &[Vec3], p_det: f64, nominal: &[f64]) -> Result<Vec<f64>> {
    if uavs.is_empty() {
        return Err(Error::Input("UAV frame is empty".into()));
    }
    if !(p_det.is_finite() && p_det > 0.0) {
        return Err(Error::Input(format!("detection budget must be positive, got {p_det}")));
    }
    if nominal.len() != net.len() {
        return Err(Error::shape(net.len(), nominal.len()));
    }
    let eta = net.params.eta;
    net.positions
        .iter()
        .zip(nominal)
        .map(|(&node, &nom)| {
            let mut w = 0.0f64;
            for &u in uavs {
                w = w.max(positive_distance(u, node)?.powf(-eta));
            }
            Ok(nom.min(p_det / w))
        })
        .collect()
}

/// `(1/L) sum_i |u_i - u_hat_i|^2`.
pub fn prediction_error(truth: &[Vec3], pred: &[Vec3]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::shape(truth.len(), pred.len()));
    }
    Ok(truth.iter().zip(pred).map(|(a, b)| (*a - *b).norm_squared()).sum::<f64>() / truth.len() as f64)
}

pub fn mean_error(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Input("empty error series".into()));
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Linear extrapolation from the last two frames; returns `horizon_steps`
/// frames following the last one.
pub fn baseline_constant_velocity(frames: &[Vec<Vec3>], horizon_steps: usize) -> Result<Vec<Vec<Vec3>>> {
    let [.., prev, last] = frames else {
        return Err(Error::Input("constant-velocity baseline needs two frames".into()));
    };
    if prev.len() != last.len() {
        return Err(Error::shape(prev.len(), last.len()));
    }
    Ok((1..=horizon_steps)
        .map(|k| {
            last.iter()
                .zip(prev)
                .map(|(&b, &a)| b + (b - a) * k as f64)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovertConfig {
    /// Detection threshold of the UAV receiver (W).
    #[serde(rename = "P_det")]
    pub p_det: f64,
    pub lambda: f64,
    /// Prediction horizon `H` (s).
    pub horizon_s: f64,
    pub report_interval_s: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Default for CovertConfig {
    fn default() -> Self {
        CovertConfig {
            p_det: 1e-6,
            lambda: 0.5,
            horizon_s: 10.0,
            report_interval_s: 1.0,
            runs: 400,
            seed: 0,
        }
    }
}

impl CovertConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.lambda < 1.0
            && self.p_det > 0.0
            && self.p_det.is_finite()
            && self.horizon_s > 0.0
            && self.horizon_s.is_finite()
            && self.report_interval_s > 0.0
            && self.report_interval_s <= self.horizon_s
            && self.runs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "covert settings need 0 < lambda < 1, P_det > 0, 0 < report_interval_s <= horizon_s and runs >= 1: {self:?}"
            )))
        }
    }

    /// Number of detection checks, `floor(H / interval)`.
    pub fn num_checks(&self) -> usize {
        steps_for(self.horizon_s, self.report_interval_s)
    }

    /// Simulation step index of every check (1-based checks).
    pub fn check_steps(&self, dt: f64) -> Result<Vec<usize>> {
        let per = self.report_interval_s / dt;
        if (per - per.round()).abs() > 1e-9 * per.max(1.0) || per.round() < 1.0 {
            return Err(Error::Config(format!(
                "report interval {} s is not a whole number of {dt} s steps",
                self.report_interval_s
            )));
        }
        let per = per.round() as usize;
        Ok((1..=self.num_checks()).map(|j| j * per).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    /// Time after the prediction start (s).
    pub delta_t: f64,
    /// Bound computed from the true UAV positions (W).
    pub p_true: Vec<f64>,
    /// Bound computed from the predicted positions (W).
    pub p_pred: Vec<f64>,
    pub detected: Vec<bool>,
    pub eps_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub detected: bool,
    pub checks: Vec<CheckReport>,
    pub eps_mean: f64,
}

/// Inputs of one detection run, sampled at the check times.
#[derive(Debug, Clone)]
pub struct RunTraces {
    pub network: GroundNetwork,
    pub nominal: Vec<f64>,
    pub truth: Vec<Vec<Vec3>>,
    pub predicted: Vec<Vec<Vec3>>,
}

/// Detection flags of one run. A node is detected at a check when the power
/// it would really be allowed is below `lambda` times the power it planned
/// from the prediction.
pub fn evaluate_run(
    run: usize,
    traces: &RunTraces,
    covert: &CovertConfig,
    norm: &NormalizationSpec,
) -> Result<RunReport> {
    let n_checks = covert.num_checks();
    if traces.truth.len() < n_checks || traces.predicted.len() < n_checks {
        return Err(Error::Input(format!(
            "run {run}: {} true and {} predicted frames for {n_checks} checks",
            traces.truth.len(),
            traces.predicted.len()
        )));
    }
    let mut checks = Vec::with_capacity(n_checks);
    for (j, (truth, pred)) in traces.truth.iter().zip(&traces.predicted).take(n_checks).enumerate() {
        if truth.len() != pred.len() {
            return Err(Error::shape(format!("{} UAVs", truth.len()), format!("{} predicted", pred.len())));
        }
        let p_true = transmit_power_bound(&traces.network, truth, covert.p_det, &traces.nominal)?;
        let p_pred = transmit_power_bound(&traces.network, pred, covert.p_det, &traces.nominal)?;
        let detected = p_true.iter().zip(&p_pred).map(|(&t, &p)| t < covert.lambda * p).collect();
        let nt: Vec<Vec3> = truth.iter().map(|&p| norm.apply(p)).collect();
        let np: Vec<Vec3> = pred.iter().map(|&p| norm.apply(p)).collect();
        checks.push(CheckReport {
            delta_t: (j + 1) as f64 * covert.report_interval_s,
            p_true,
            p_pred,
            detected,
            eps_pred: prediction_error(&nt, &np)?,
        });
    }
    let eps: Vec<f64> = checks.iter().map(|c| c.eps_pred).collect();
    Ok(RunReport {
        run,
        detected: checks.iter().any(|c| c.detected.iter().any(|&d| d)),
        eps_mean: mean_error(&eps)?,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub lambda: f64,
    pub horizon_s: f64,
    pub report_interval_s: f64,
    #[serde(rename = "N")]
    pub num_nodes: usize,
    #[serde(rename = "L")]
    pub num_uavs: usize,
    pub p_det: f64,
    /// Mean over runs of the error at each check.
    pub eps_pred: Vec<f64>,
    pub eps_mean: f64,
    pub runs: Vec<RunReport>,
}

impl DetectionReport {
    /// `(run, check, node)` triples flagged as detected.
    pub fn detection_events(&self) -> BTreeSet<(usize, usize, usize)> {
        self.runs
            .iter()
            .flat_map(|r| {
                r.checks.iter().enumerate().flat_map(move |(j, c)| {
                    c.detected
                        .iter()
                        .enumerate()
                        .filter(|&(_, &d)| d)
                        .map(move |(n, _)| (r.run, j, n))
                })
            })
            .collect()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = writer;
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    /// `run,delta_t,node,P_true,P_pred,detected`.
    pub fn write_audit_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["run", "delta_t", "node", "P_true", "P_pred", "detected"])?;
        for r in &self.runs {
            for c in &r.checks {
                for (n, ((t, p), d)) in c.p_true.iter().zip(&c.p_pred).zip(&c.detected).enumerate() {
                    w.write_record([
                        r.run.to_string(),
                        fmt_f64(c.delta_t),
                        n.to_string(),
                        fmt_f64(*t),
                        fmt_f64(*p),
                        u8::from(*d).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds a report from already sampled runs.
pub fn detection_probability(
    runs: &[RunTraces],
    covert: &CovertConfig,
    norm: &NormalizationSpec,
) -> Result<DetectionReport> {
    covert.validate()?;
    let Some(first) = runs.first() else {
        return Err(Error::Input("no runs to evaluate".into()));
    };
    let reports = runs
        .par_iter()
        .enumerate()
        .map(|(i, t)| evaluate_run(i, t, covert, norm))
        .collect::<Result<Vec<_>>>()?;
    summarize(reports, covert, first.network.len(), first.truth.first().map_or(0, Vec::len))
}

fn summarize(runs: Vec<RunReport>, covert: &CovertConfig, n: usize, l: usize) -> Result<DetectionReport> {
    let count = runs.len() as f64;
    let detected = runs.iter().filter(|r| r.detected).count() as f64;
    let eps_pred: Vec<f64> = (0..covert.num_checks())
        .map(|j| runs.iter().map(|r| r.checks[j].eps_pred).sum::<f64>() / count)
        .collect();
    Ok(DetectionReport {
        lambda: covert.lambda,
        horizon_s: covert.horizon_s,
        report_interval_s: covert.report_interval_s,
        num_nodes: n,
        num_uavs: l,
        p_det: detected / count,
        eps_mean: mean_error(&eps_pred)?,
        eps_pred,
        runs,
    })
}

/// Writes `lambda,N,L,H,P_det,eps_mean`, one row per report.
pub fn write_aggregate_csv<W: Write>(reports: &[DetectionReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "N", "L", "H", "P_det", "eps_mean"])?;
    for r in reports {
        w.write_record([
            fmt_f64(r.lambda),
            r.num_nodes.to_string(),
            r.num_uavs.to_string(),
            fmt_f64(r.horizon_s),
            fmt_f64(r.p_det),
            fmt_f64(r.eps_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Source of predicted UAV positions.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Gkae(&'a GkaeModel),
    /// Extrapolates the velocity observed between the first two frames.
    ConstantVelocity,
    /// Returns the true trajectory.
    Oracle,
}

impl Predictor<'_> {
    /// Predicted frames for steps `1..=steps` after `truth[0]`; `truth` must
    /// hold at least the frames the predictor may look at.
    pub fn predict(&self, truth: &[Vec<Vec3>], steps: usize) -> Result<Vec<Vec<Vec3>>> {
        let first = truth.first().ok_or_else(|| Error::Input("empty trajectory".into()))?;
        match self {
            Predictor::Gkae(model) => {
                let snap = model.snapshot_from_positions(first, 0.0)?;
                model.rollout_predict(&snap, steps)
            }
            Predictor::ConstantVelocity => {
                let seen = truth.get(..2).ok_or_else(|| Error::Input("baseline needs two frames".into()))?;
                let mut out = vec![seen[1].clone()];
                out.extend(baseline_constant_velocity(seen, steps.saturating_sub(1))?);
                out.truncate(steps);
                Ok(out)
            }
            Predictor::Oracle => {
                if truth.len() < steps + 1 {
                    return Err(Error::Input("trajectory shorter than the horizon".into()));
                }
                Ok(truth[1..=steps].to_vec())
            }
        }
    }
}

/// Scenario for [`monte_carlo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub swarm: SwarmConfig,
    pub network: NetworkParams,
    pub covert: CovertConfig,
    #[serde(rename = "N")]
    pub num_nodes: usize,
    pub nominal: NominalMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            swarm: SwarmConfig::default(),
            network: NetworkParams::default(),
            covert: CovertConfig::default(),
            num_nodes: 25,
            nominal: NominalMode::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.swarm.validate()?;
        self.network.validate()?;
        self.covert.validate()?;
        if self.num_nodes == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        self.covert.check_steps(self.swarm.dt)?;
        Ok(())
    }
}

/// Per-run RNG, a function of `(seed, run)` only.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Samples one run: the swarm's initial condition, then the ground nodes.
pub fn sample_run(cfg: &ScenarioConfig, predictor: &Predictor<'_>, run: usize) -> Result<RunTraces> {
    let mut rng = run_rng(cfg.covert.seed, run);
    let swarm_seed: u64 = rng.random();
    let network = GroundNetwork::random(cfg.num_nodes, cfg.swarm.x_size, cfg.network, &mut rng)?;
    let nominal = nominal_powers(&network, cfg.nominal)?;
    let checks = cfg.covert.check_steps(cfg.swarm.dt)?;
    let steps = *checks.last().expect("at least one check");
    let initial = init_swarm(&cfg.swarm, &mut crate::swarm_sim::swarm_rng(swarm_seed));
    let truth: Vec<Vec<Vec3>> = simulate_from(initial, &cfg.swarm, steps)
        .into_iter()
        .map(|f| f.iter().map(|u| u.position).collect())
        .collect();
    let predicted = predictor.predict(&truth, steps)?;
    Ok(RunTraces {
        network,
        nominal,
        truth: checks.iter().map(|&k| truth[k].clone()).collect(),
        predicted: checks.iter().map(|&k| predicted[k - 1].clone()).collect(),
    })
}

/// Monte-Carlo detection probability over `covert.runs` independent initial
/// conditions and ground-node placements.
pub fn monte_carlo(cfg: &ScenarioConfig, predictor: &Predictor<'_>, norm: &NormalizationSpec) -> Result<DetectionReport> {
    cfg.validate()?;
    if let Predictor::Gkae(m) = predictor {
        if m.dims.num_uavs != cfg.swarm.num_uavs {
            return Err(Error::Config(format!(
                "model trained for {} UAVs, scenario has {}",
                m.dims.num_uavs, cfg.swarm.num_uavs
            )));
        }
    }
    let reports = (0..cfg.covert.runs)
        .into_par_iter()
        .map(|r| sample_run(cfg, predictor, r).and_then(|t| evaluate_run(r, &t, &cfg.covert, norm)))
        .collect::<Result<Vec<_>>>()?;
    summarize(reports, &cfg.covert, cfg.num_nodes, cfg.swarm.num_uavs)
}
