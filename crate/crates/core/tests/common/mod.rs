#![allow(dead_code)]

use faas_lab_core::sim::WindowMetrics;

/// Reward cases evaluated by hand with alpha 1, beta 0.1, gamma_w 0.2,
/// n_min 1, N 24.
pub struct RewardCase {
    pub phi: f64,
    pub n: u32,
    pub c: f64,
    pub m: f64,
    pub valid: bool,
    pub hand: f64,
}

const fn case(phi: f64, n: u32, c: f64, m: f64, valid: bool, hand: f64) -> RewardCase {
    RewardCase { phi, n, c, m, valid, hand }
}

pub const REWARD_CASES: [RewardCase; 20] = [
    case(1.0, 1, 0.0, 0.0, true, 1.0),
    case(0.5, 3, 0.8, 0.4, true, 0.09),
    case(1.0, 24, 2.0, 2.0, false, -100.0),
    case(0.0, 1, 0.0, 0.0, false, -100.0),
    // Lower edge of the valid band, idle utilization.
    case(1.0, 1, 0.05, 0.25, true, 1.06),
    // Upper edge of the valid band.
    case(1.0, 24, 0.0, 0.0, true, -51.9),
    case(1.0, 24, 2.0, 2.0, true, -51.1),
    case(0.0, 1, 0.0, 0.0, true, 0.0),
    case(0.0, 24, 0.0, 0.0, true, -52.9),
    case(1.0, 1, 2.0, 2.0, true, 1.8),
    case(0.9, 2, 0.6, 0.3, true, 0.89),
    case(0.75, 5, 1.2, 0.5, true, -0.6975),
    case(0.25, 1, 0.1, 0.25, true, 0.1325),
    case(1.0, 4, 0.9, 0.35, true, 0.35),
    case(0.6, 10, 1.5, 0.8, true, -7.28),
    case(0.95, 2, 0.75, 0.3, true, 1.0125),
    case(0.4, 3, 2.0, 0.5, true, 0.26),
    case(1.0, 23, 0.3, 0.3, true, -47.28),
    case(0.8, 6, 1.0, 1.0, true, -1.46),
    case(0.5, 12, 0.7, 0.2, false, -100.0),
];

pub fn metrics_for(case: &RewardCase) -> WindowMetrics {
    WindowMetrics {
        phi: case.phi,
        n: case.n,
        c: case.c,
        m: case.m,
        ..WindowMetrics::default()
    }
}

/// The three reward terms evaluated separately.
pub fn reward_terms(alpha: f64, beta: f64, gamma_w: f64, phi: f64, n: u32, n_min: u32, c: f64, m: f64) -> f64 {
    let throughput = alpha * phi * phi;
    let excess = n as f64 - n_min as f64;
    let size = beta * excess * excess;
    let utilization = gamma_w * (c + m);
    throughput - size + utilization
}
