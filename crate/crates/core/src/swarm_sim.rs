//! Ground-truth multi-UAV trajectories from zone-based (Couzin-style)
//! interaction dynamics.
//!
//! Each step every UAV accumulates three forces from its neighbours, banded
//! by distance: repulsion in `[0, r_rep)`, orientation in `[r_rep, r_ali)`
//! and attraction in `[r_ali, r_att)`. The desired velocity is the current
//! velocity plus those forces, which is then speed-limited, turn-limited and
//! integrated with explicit Euler. Altitude is clamped to `[z_min, z_max]`;
//! horizontal positions are left unbounded.
//!
//! All UAVs are updated synchronously from the frame at time `t`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmConfig {
    /// Number of UAVs.
    #[serde(rename = "L", default = "defaults::num_uavs")]
    pub num_uavs: usize,
    /// Maximum speed (m/s).
    #[serde(rename = "V_max", default = "defaults::v_max")]
    pub v_max: f64,
    /// Maximum heading change per step (rad).
    #[serde(default = "defaults::theta_max")]
    pub theta_max: f64,
    /// Integration step (s).
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::r_rep")]
    pub r_rep: f64,
    #[serde(default = "defaults::r_ali")]
    pub r_ali: f64,
    #[serde(default = "defaults::r_att")]
    pub r_att: f64,
    #[serde(rename = "Z_min", default = "defaults::z_min")]
    pub z_min: f64,
    #[serde(rename = "Z_max", default = "defaults::z_max")]
    pub z_max: f64,
    /// Side of the square operation area (m).
    #[serde(rename = "X_size", default = "defaults::x_size")]
    pub x_size: f64,
    /// Simulated time (s).
    #[serde(default = "defaults::duration")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep the desired vertical velocity instead of zeroing it in the
    /// turn limiter.
    #[serde(default)]
    pub preserve_vertical: bool,
}

mod defaults {
    pub fn num_uavs() -> usize {
        4
    }
    pub fn v_max() -> f64 {
        20.0
    }
    pub fn theta_max() -> f64 {
        std::f64::consts::PI / 100.0
    }
    pub fn dt() -> f64 {
        0.1
    }
    pub fn r_rep() -> f64 {
        300.0
    }
    pub fn r_ali() -> f64 {
        0.0
    }
    pub fn r_att() -> f64 {
        500.0
    }
    pub fn z_min() -> f64 {
        50.0
    }
    pub fn z_max() -> f64 {
        150.0
    }
    pub fn x_size() -> f64 {
        500.0
    }
    pub fn duration() -> f64 {
        60.0
    }
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            num_uavs: defaults::num_uavs(),
            v_max: defaults::v_max(),
            theta_max: defaults::theta_max(),
            dt: defaults::dt(),
            r_rep: defaults::r_rep(),
            r_ali: defaults::r_ali(),
            r_att: defaults::r_att(),
            z_min: defaults::z_min(),
            z_max: defaults::z_max(),
            x_size: defaults::x_size(),
            duration: defaults::duration(),
            seed: 0,
            preserve_vertical: false,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        let finite = [
            self.v_max,
            self.theta_max,
            self.dt,
            self.r_rep,
            self.r_ali,
            self.z_min,
            self.z_max,
            self.x_size,
            self.duration,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("parameters must be finite (r_att may be infinite)");
        }
        if self.num_uavs < 1 {
            return fail("L must be at least 1");
        }
        if self.v_max <= 0.0 {
            return fail("V_max must be positive");
        }
        if self.dt <= 0.0 {
            return fail("dt must be positive");
        }
        if !(self.theta_max > 0.0 && self.theta_max <= PI) {
            return fail("theta_max must lie in (0, pi]");
        }
        if !(self.r_rep >= 0.0 && self.r_rep <= self.r_att) {
            return fail("zone radii must satisfy 0 <= r_rep <= r_att");
        }
        if self.r_ali < 0.0 {
            return fail("r_ali must be non-negative");
        }
        if self.z_min >= self.z_max {
            return fail("Z_min must be below Z_max");
        }
        if self.x_size <= 0.0 {
            return fail("X_size must be positive");
        }
        if self.duration < 0.0 {
            return fail("duration must be non-negative");
        }
        Ok(())
    }

    /// Frames produced by [`simulate`]: `floor(duration / dt) + 1`.
    pub fn frame_count(&self) -> usize {
        steps_for(self.duration, self.dt) + 1
    }
}

/// Number of whole `dt` steps in `span`, tolerant to round-off in the ratio.
pub fn steps_for(span: f64, dt: f64) -> usize {
    let ratio = span / dt;
    (ratio + 1e-9 * ratio.abs().max(1.0)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec3,
    pub velocity: Vec3,
}

/// One time slice of the swarm, indexed by UAV.
pub type Frame = Vec<UavState>;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub dt: f64,
    /// Generating configuration; absent when the trajectory was loaded from
    /// a file.
    pub config: Option<SwarmConfig>,
}

impl Trajectory {
    pub fn num_uavs(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn positions(&self, k: usize) -> Vec<Vec3> {
        self.frames[k].iter().map(|s| s.position).collect()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Writes the `t,uav_id,x,y,z,vx,vy,vz` CSV form with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "uav_id", "x", "y", "z", "vx", "vy", "vz"])?;
        for (k, frame) in self.frames.iter().enumerate() {
            let t = fmt_f64(self.time(k));
            for (id, s) in frame.iter().enumerate() {
                let p = s.position;
                let v = s.velocity;
                w.write_record([
                    t.as_str(),
                    &id.to_string(),
                    &fmt_f64(p[0]),
                    &fmt_f64(p[1]),
                    &fmt_f64(p[2]),
                    &fmt_f64(v[0]),
                    &fmt_f64(v[1]),
                    &fmt_f64(v[2]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`Trajectory::write_csv`]. Rows must be grouped
    /// by frame with UAV ids `0..L` in order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = ["t", "uav_id", "x", "y", "z", "vx", "vy", "vz"];
        if header.iter().map(str::trim).ne(expected.iter().copied()) {
            return Err(Error::Parse(format!(
                "unexpected trajectory header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }

        let mut frames: Vec<Frame> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: column {}: {e}", row + 2, i)))
            };
            let t = num(0)?;
            let id: usize = rec[1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: uav_id: {e}", row + 2)))?;
            let state = UavState {
                position: Vec3::new(num(2)?, num(3)?, num(4)?),
                velocity: Vec3::new(num(5)?, num(6)?, num(7)?),
            };
            if id == 0 {
                frames.push(Vec::new());
                times.push(t);
            }
            match frames.last_mut() {
                Some(frame) if frame.len() == id => frame.push(state),
                _ => {
                    return Err(Error::Parse(format!(
                        "row {}: uav_id {id} out of order",
                        row + 2
                    )))
                }
            }
        }

        let Some(l) = frames.first().map(Vec::len) else {
            return Err(Error::Parse("trajectory has no rows".into()));
        };
        if frames.iter().any(|f| f.len() != l) {
            return Err(Error::Parse("frames have differing UAV counts".into()));
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(Trajectory {
            frames,
            dt,
            config: None,
        })
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Random initial frame: positions uniform over `[0, X_size]^2 x [Z_min, Z_max]`
/// and velocities uniform on the sphere of radius `V_max`.
pub fn init_swarm<R: Rng + ?Sized>(config: &SwarmConfig, rng: &mut R) -> Frame {
    (0..config.num_uavs)
        .map(|_| {
            let position = Vec3::new(
                rng.random_range(0.0..=config.x_size),
                rng.random_range(0.0..=config.x_size),
                rng.random_range(config.z_min..=config.z_max),
            );
            // Archimedes: uniform z and azimuth give a uniform point on the sphere.
            let cz: f64 = rng.random_range(-1.0..=1.0);
            let az: f64 = rng.random_range(0.0..2.0 * PI);
            let r = (1.0 - cz * cz).max(0.0).sqrt();
            let dir = Vec3::new(r * az.cos(), r * az.sin(), cz);
            UavState {
                position,
                velocity: dir * config.v_max,
            }
        })
        .collect()
}

/// Zone forces acting on UAV `i`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Forces {
    pub repulsion: Vec3,
    pub orientation: Vec3,
    pub attraction: Vec3,
}

impl Forces {
    pub fn total(&self) -> Vec3 {
        self.repulsion + self.orientation + self.attraction
    }
}

pub fn interaction_forces(i: usize, frame: &[UavState], config: &SwarmConfig) -> Forces {
    let me = frame[i];
    let mut f = Forces::default();
    for (j, other) in frame.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = me.position.distance(&other.position);
        if d < config.r_rep {
            f.repulsion += me.position - other.position;
        } else if d < config.r_ali {
            f.orientation += other.velocity;
        } else if d < config.r_att {
            f.attraction += other.position - me.position;
        }
    }
    f
}

/// Rescales `v` to norm `min(|v|, v_max)`; the zero vector maps to itself.
pub fn limit_speed(v: Vec3, v_max: f64) -> Vec3 {
    let n = v.norm();
    if n == 0.0 {
        return Vec3::ZERO;
    }
    v * (n.min(v_max) / n)
}

/// Turns the horizontal heading of `current` towards `desired` by at most
/// `theta_max` and returns a velocity with horizontal speed `v_max`.
///
/// The heading difference is taken on the short way round. A horizontally
/// stationary `desired` keeps the current heading; a horizontally stationary
/// `current` adopts the desired heading without clamping. The vertical
/// component is zero unless `preserve_vertical` is set, in which case it is
/// `desired.z` and the horizontal speed shrinks so that `|v| = v_max`.
pub fn limit_turning(
    current: Vec3,
    desired: Vec3,
    v_max: f64,
    theta_max: f64,
    preserve_vertical: bool,
) -> Vec3 {
    let cur_flat = current.horizontal_norm() == 0.0;
    let des_flat = desired.horizontal_norm() == 0.0;
    let heading = match (cur_flat, des_flat) {
        (true, true) => 0.0,
        (true, false) => desired.heading(),
        (false, true) => current.heading(),
        (false, false) => {
            let phi = current.heading();
            let delta = wrap_angle(desired.heading() - phi).clamp(-theta_max, theta_max);
            phi + delta
        }
    };
    let (vz, horizontal) = if preserve_vertical {
        let vz = desired.z().clamp(-v_max, v_max);
        (vz, (v_max * v_max - vz * vz).max(0.0).sqrt())
    } else {
        (0.0, v_max)
    };
    Vec3::new(horizontal * heading.cos(), horizontal * heading.sin(), vz)
}

/// Advances the whole frame by one step.
pub fn step(frame: &[UavState], config: &SwarmConfig) -> Frame {
    frame
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let forces = interaction_forces(i, frame, config);
            let desired = limit_speed(s.velocity + forces.total(), config.v_max);
            let velocity = limit_turning(
                s.velocity,
                desired,
                config.v_max,
                config.theta_max,
                config.preserve_vertical,
            );
            let mut position = s.position + velocity * config.dt;
            position.0[2] = position.0[2].min(config.z_max).max(config.z_min);
            UavState { position, velocity }
        })
        .collect()
}

/// Runs the dynamics from an explicit initial frame.
pub fn simulate_from(initial: Frame, config: &SwarmConfig, steps: usize) -> Vec<Frame> {
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(initial);
    for _ in 0..steps {
        let next = step(frames.last().expect("non-empty"), config);
        frames.push(next);
    }
    frames
}

/// Seeded RNG used for swarm initialisation.
pub fn swarm_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn simulate(config: &SwarmConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = swarm_rng(config.seed);
    let initial = init_swarm(config, &mut rng);
    let steps = config.frame_count() - 1;
    Ok(Trajectory {
        frames: simulate_from(initial, config, steps),
        dt: config.dt,
        config: Some(config.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_uavs(d: f64) -> Frame {
        vec![
            UavState {
                position: Vec3::new(0.0, 0.0, 100.0),
                velocity: Vec3::new(20.0, 0.0, 0.0),
            },
            UavState {
                position: Vec3::new(d, 0.0, 100.0),
                velocity: Vec3::new(0.0, 20.0, 0.0),
            },
        ]
    }

    #[test]
    fn init_has_exact_speed_and_bounds() {
        let cfg = SwarmConfig::default();
        let frame = init_swarm(&cfg, &mut swarm_rng(3));
        assert_eq!(frame.len(), 4);
        for s in &frame {
            assert!((s.velocity.norm() - 20.0).abs() < 1e-12);
            assert!((0.0..=500.0).contains(&s.position.x()));
            assert!((0.0..=500.0).contains(&s.position.y()));
            assert!((50.0..=150.0).contains(&s.position.z()));
        }
    }

    #[test]
    fn init_single_uav_and_determinism() {
        let cfg = SwarmConfig {
            num_uavs: 1,
            ..SwarmConfig::default()
        };
        let a = init_swarm(&cfg, &mut swarm_rng(11));
        let b = init_swarm(&cfg, &mut swarm_rng(11));
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn lone_uav_feels_no_force() {
        let cfg = SwarmConfig::default();
        let frame = &two_uavs(100.0)[..1];
        assert_eq!(interaction_forces(0, frame, &cfg), Forces::default());
    }

    #[test]
    fn repulsion_points_away_from_neighbour() {
        let cfg = SwarmConfig::default();
        let f = interaction_forces(0, &two_uavs(100.0), &cfg);
        assert_eq!(f.repulsion, Vec3::new(-100.0, 0.0, 0.0));
        assert_eq!(f.orientation, Vec3::ZERO);
        assert_eq!(f.attraction, Vec3::ZERO);
    }

    #[test]
    fn attraction_band_between_rep_and_att() {
        let cfg = SwarmConfig::default();
        let f = interaction_forces(0, &two_uavs(400.0), &cfg);
        assert_eq!(f.repulsion, Vec3::ZERO);
        assert_eq!(f.attraction, Vec3::new(400.0, 0.0, 0.0));
        // beyond r_att nothing
        let f = interaction_forces(0, &two_uavs(600.0), &cfg);
        assert_eq!(f, Forces::default());
    }

    #[test]
    fn bands_are_half_open() {
        let cfg = SwarmConfig {
            r_rep: 100.0,
            r_ali: 200.0,
            r_att: 300.0,
            ..SwarmConfig::default()
        };
        // exactly r_rep falls into orientation
        let f = interaction_forces(0, &two_uavs(100.0), &cfg);
        assert_eq!(f.repulsion, Vec3::ZERO);
        assert_eq!(f.orientation, Vec3::new(0.0, 20.0, 0.0));
        // exactly r_ali falls into attraction
        let f = interaction_forces(0, &two_uavs(200.0), &cfg);
        assert_eq!(f.attraction, Vec3::new(200.0, 0.0, 0.0));
        // exactly r_att is outside
        let f = interaction_forces(0, &two_uavs(300.0), &cfg);
        assert_eq!(f, Forces::default());
    }

    #[test]
    fn speed_limit_cases() {
        assert_eq!(limit_speed(Vec3::new(30.0, 0.0, 0.0), 20.0), Vec3::new(20.0, 0.0, 0.0));
        assert_eq!(limit_speed(Vec3::new(3.0, 4.0, 0.0), 20.0), Vec3::new(3.0, 4.0, 0.0));
        assert_eq!(limit_speed(Vec3::ZERO, 20.0), Vec3::ZERO);
    }

    #[test]
    fn turn_clamped_to_theta_max() {
        let th = PI / 100.0;
        let v = limit_turning(
            Vec3::new(20.0, 0.0, 0.0),
            Vec3::new(0.0, 20.0, 0.0),
            20.0,
            th,
            false,
        );
        let want = Vec3::new(20.0 * th.cos(), 20.0 * th.sin(), 0.0);
        assert!((v - want).norm() < 1e-12);
    }

    #[test]
    fn turn_unchanged_and_negative_clamp() {
        let th = PI / 100.0;
        let cur = Vec3::new(10.0, 10.0, 0.0);
        let v = limit_turning(cur, cur, 20.0, th, false);
        assert!((v.heading() - PI / 4.0).abs() < 1e-12);
        assert!((v.norm() - 20.0).abs() < 1e-12);

        let des = Vec3::new((-th).cos(), (-th).sin(), 0.0);
        let v = limit_turning(Vec3::new(5.0, 0.0, 0.0), des, 20.0, th, false);
        assert!((v - Vec3::new(20.0 * th.cos(), -20.0 * th.sin(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn turn_takes_short_way_across_pi() {
        let th = 0.1;
        let cur = Vec3::new((PI - 0.01).cos(), (PI - 0.01).sin(), 0.0);
        let des = Vec3::new((-PI + 0.01).cos(), (-PI + 0.01).sin(), 0.0);
        let v = limit_turning(cur, des, 1.0, th, false);
        // 0.02 rad counter-clockwise, within the cap
        assert!((wrap_angle(v.heading() - (-PI + 0.01))).abs() < 1e-12);
    }

    #[test]
    fn turn_degenerate_headings() {
        // stationary desired keeps heading
        let v = limit_turning(Vec3::new(0.0, 5.0, 0.0), Vec3::ZERO, 20.0, 0.1, false);
        assert!((v - Vec3::new(0.0, 20.0, 0.0)).norm() < 1e-12);
        // vertical-only current adopts desired heading unclamped
        let v = limit_turning(
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::new(-1.0, 0.0, 0.0),
            20.0,
            0.1,
            false,
        );
        assert!((v - Vec3::new(-20.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn preserve_vertical_keeps_norm() {
        let v = limit_turning(
            Vec3::new(20.0, 0.0, 0.0),
            Vec3::new(12.0, 0.0, 16.0),
            20.0,
            0.1,
            true,
        );
        assert!((v.z() - 16.0).abs() < 1e-12);
        assert!((v.norm() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn lone_uav_integrates_straight() {
        let cfg = SwarmConfig {
            num_uavs: 1,
            ..SwarmConfig::default()
        };
        let frame = vec![UavState {
            position: Vec3::new(10.0, 10.0, 100.0),
            velocity: Vec3::new(20.0, 0.0, 0.0),
        }];
        let next = step(&frame, &cfg);
        assert!((next[0].position - Vec3::new(12.0, 10.0, 100.0)).norm() < 1e-12);
    }

    #[test]
    fn altitude_is_clamped() {
        let cfg = SwarmConfig {
            num_uavs: 1,
            preserve_vertical: true,
            ..SwarmConfig::default()
        };
        let frame = vec![UavState {
            position: Vec3::new(0.0, 0.0, 149.9),
            velocity: Vec3::new(0.0, 12.0, 16.0),
        }];
        let next = step(&frame, &cfg);
        assert_eq!(next[0].position.z(), 150.0);
    }

    #[test]
    fn frame_count_arithmetic() {
        let cfg = SwarmConfig::default();
        assert_eq!(cfg.frame_count(), 601);
        let traj = simulate(&cfg).unwrap();
        assert_eq!(traj.len(), 601);
        assert!(traj.frames.iter().all(|f| f.len() == 4));
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = SwarmConfig {
            seed: 99,
            duration: 5.0,
            ..SwarmConfig::default()
        };
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SwarmConfig { num_uavs: 0, ..Default::default() },
            SwarmConfig { v_max: 0.0, ..Default::default() },
            SwarmConfig { dt: -1.0, ..Default::default() },
            SwarmConfig { theta_max: 4.0, ..Default::default() },
            SwarmConfig { r_rep: 600.0, ..Default::default() },
            SwarmConfig { z_min: 200.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = SwarmConfig {
            duration: 1.0,
            seed: 5,
            ..SwarmConfig::default()
        };
        let traj = simulate(&cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,uav_id,x,y,z,vx,vy,vz\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back.frames, traj.frames);
        assert!((back.dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(Trajectory::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "t,uav_id,x,y,z,vx,vy,vz\n0,1,0,0,0,0,0,0\n";
        assert!(matches!(Trajectory::read_csv(bad.as_bytes()), Err(Error::Parse(_))));
    }
}
