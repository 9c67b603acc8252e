#![allow(dead_code)]

use gkae_covert::geom::Vec3;
use gkae_covert::swarm_sim::{SwarmConfig, UavState};
use proptest::prelude::*;

/// Valid swarm settings over a wide range.
pub fn swarm_config() -> impl Strategy<Value = SwarmConfig> {
    (
        1usize..8,
        1.0f64..40.0,
        0.001f64..std::f64::consts::PI,
        0.01f64..0.5,
        1.0f64..400.0,
        0.0f64..2.0,
        0.0f64..2.0,
        (0.0f64..100.0, 1.0f64..200.0),
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(l, v, th, dt, r_rep, ali_f, att_f, (z_min, dz), seed, pv)| SwarmConfig {
            num_uavs: l,
            v_max: v,
            theta_max: th,
            dt,
            r_rep,
            r_ali: r_rep * ali_f,
            r_att: r_rep * (1.0 + att_f),
            z_min,
            z_max: z_min + dz,
            seed,
            preserve_vertical: pv,
            ..SwarmConfig::default()
        })
}

/// First violation of the speed, turn or altitude constraints in `frames`.
pub fn first_violation(frames: &[Vec<UavState>], cfg: &SwarmConfig, tol: f64) -> Option<String> {
    for (k, pair) in frames.windows(2).enumerate() {
        for (i, (a, b)) in pair[0].iter().zip(&pair[1]).enumerate() {
            if b.velocity.norm() > cfg.v_max + tol {
                return Some(format!("step {k} uav {i}: speed {}", b.velocity.norm()));
            }
            let z = b.position.z();
            if z < cfg.z_min - tol || z > cfg.z_max + tol {
                return Some(format!("step {k} uav {i}: altitude {z}"));
            }
            if a.velocity.horizontal_norm() > 0.0 && b.velocity.horizontal_norm() > 0.0 {
                let turn = gkae_covert::geom::wrap_angle(b.velocity.heading() - a.velocity.heading()).abs();
                if turn > cfg.theta_max + tol {
                    return Some(format!("step {k} uav {i}: turn {turn}"));
                }
            }
        }
    }
    None
}

/// Per-node bound by enumerating every (UAV, node) pair independently.
pub fn brute_force_bound(uavs: &[Vec3], nodes: &[Vec3], eta: f64, p_det: f64, nominal: &[f64]) -> Vec<f64> {
    let mut out = nominal.to_vec();
    for u in uavs {
        for (n, node) in nodes.iter().enumerate() {
            let (dx, dy, dz) = (u.x() - node.x(), u.y() - node.y(), u.z() - node.z());
            let d = (dx * dx + dy * dy + dz * dz).sqrt();
            let budget = p_det / d.powf(-eta);
            if budget < out[n] {
                out[n] = budget;
            }
        }
    }
    out
}

pub fn vec3(range: std::ops::Range<f64>, z: std::ops::Range<f64>) -> impl Strategy<Value = Vec3> {
    (range.clone(), range, z).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn ground(side: f64) -> impl Strategy<Value = Vec3> {
    (0.0..side, 0.0..side).prop_map(|(x, y)| Vec3::new(x, y, 0.0))
}
