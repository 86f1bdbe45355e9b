//! Shared oracles and the synthetic verification protocol used by the
//! integration suites.

#![allow(dead_code)]

use adcfit::concentration::MprageParams;
use adcfit::fem::{assemble, AssembledSystem, MassLumping};
use adcfit::mesh::{generate_phantom, Mesh, PhantomVariant, DEFAULT_SHELL_FRACTIONS};

/// Verification protocol shared by the recovery criteria: resolution-8
/// phantom on an 80 mm box, ten observations over 24 hours matched by ten
/// implicit steps, generation on the inversion grid.
pub const PROTO_RESOLUTION: usize = 8;
pub const PROTO_BOX_MM: f64 = 80.0;
pub const PROTO_T_FINAL_H: f64 = 24.0;
pub const PROTO_STEPS: usize = 10;
pub const PROTO_N_OBS: usize = 10;
pub const PROTO_SEED: u64 = 2024;

pub const D_TRUE_THREE: [f64; 3] = [1000.0, 4.0, 8.0];
pub const D_TRUE_TWO: [f64; 2] = [4.0, 8.0];

pub fn protocol_system(variant: PhantomVariant) -> (Mesh, AssembledSystem) {
    let mesh = generate_phantom(
        PROTO_RESOLUTION,
        PROTO_BOX_MM,
        variant,
        DEFAULT_SHELL_FRACTIONS,
    )
    .unwrap();
    let system = assemble(&mesh, MassLumping::Consistent).unwrap();
    (mesh, system)
}

/// Step-by-step steady-state simulation of the inversion-prepared echo
/// train: invert, relax the inversion delay, apply `m` readout tips spaced by
/// the echo spacing, relax the recovery delay, repeat until the center-echo
/// magnetization settles. Independent of the closed-form expression it
/// checks.
pub fn bloch_recursion_f(t1_ms: f64, p: &MprageParams) -> f64 {
    assert!(t1_ms > 0.0);
    let tip = p.flip_angle_rad.cos();
    let relax = |mz: f64, dt_ms: f64| 1.0 + (mz - 1.0) * (-dt_ms / t1_ms).exp();
    let n = p.center_echo();
    let mut mz = 1.0;
    let mut previous = f64::INFINITY;
    for _cycle in 0..10_000 {
        mz = -mz;
        mz = relax(mz, p.inversion_time_ms);
        let mut center = 0.0;
        for echo in 1..=p.echo_count {
            if echo == n {
                center = mz;
            }
            mz *= tip;
            if echo < p.echo_count {
                mz = relax(mz, p.echo_spacing_ms);
            }
        }
        mz = relax(mz, p.delay_time_ms());
        if (center - previous).abs() <= 1e-15 * center.abs().max(1.0) {
            return center;
        }
        previous = center;
    }
    previous
}

/// Generic 3 T MPRAGE-style parameters used across the signal-model tests.
pub fn generic_mprage() -> MprageParams {
    MprageParams {
        flip_angle_rad: 8.0f64.to_radians(),
        inversion_time_ms: 900.0,
        echo_spacing_ms: 5.1,
        repetition_time_ms: 2000.0,
        echo_count: 200,
        relaxivity_per_mm_s: 3.2,
        echo_time_ms: 2.3,
        t2_star_ms: 0.0,
    }
}
