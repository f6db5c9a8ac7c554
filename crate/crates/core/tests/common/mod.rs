//! Shared fixtures: random schemas and buffers, and direct double-loop
//! kernel references written without the library's kernel code.

#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use soaforge::arena::MemorySpace;
use soaforge::layout::PackedBuffer;
use soaforge::schema::{FieldDecl, RecordSchema, ScalarKind};
use soaforge::sph::ParticleState;

const SIGMA: f64 = std::f64::consts::FRAC_1_PI;

pub fn random_schema(rng: &mut ChaCha8Rng) -> RecordSchema {
    let n = rng.gen_range(1..=12);
    let fields = (0..n)
        .map(|i| {
            let kind = match rng.gen_range(0..3) {
                0 => ScalarKind::F32,
                1 => ScalarKind::F64,
                _ => ScalarKind::I64,
            };
            let mut f = if rng.gen_bool(0.3) {
                FieldDecl::vector(&format!("f{i}"), kind)
            } else {
                FieldDecl::scalar(&format!("f{i}"), kind)
            };
            if kind != ScalarKind::I64 && rng.gen_bool(0.6) {
                f = f.truncated(rng.gen_range(7..=64));
            }
            f
        })
        .collect();
    RecordSchema::new("random", fields).expect("generated schema is valid")
}

/// A value drawn from a mix of ordinary magnitudes and edge cases.
pub fn random_value(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..20) {
        0 => 0.0,
        1 => -0.0,
        2 => f64::INFINITY,
        3 => f64::NEG_INFINITY,
        4 => f64::NAN,
        5 => 1e-310,
        6 => -1e300,
        7 => 2f64.powi(-20) * rng.gen::<f64>(),
        _ => {
            let sign = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            sign * 2f64.powf(rng.gen_range(-40.0..40.0))
        }
    }
}

/// Compressed AoS buffer of `count` records filled through `set_value`.
pub fn random_buffer(
    schema: Arc<RecordSchema>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> PackedBuffer {
    let mut buf = PackedBuffer::new(schema.clone(), count, MemorySpace::Host);
    for (pos, f) in schema.fields().iter().enumerate() {
        for r in 0..count {
            if f.kind == ScalarKind::I64 {
                buf.set_int(pos, r, rng.gen());
                continue;
            }
            for lane in 0..f.arity {
                buf.set_value(pos, r, lane, random_value(rng));
            }
        }
    }
    buf
}

fn spline(r: f64, h: f64) -> f64 {
    let q = r / h;
    let c = SIGMA / (h * h * h);
    if q >= 2.0 {
        return 0.0;
    }
    if q >= 1.0 {
        let t = 2.0 - q;
        return c * 0.25 * t * t * t;
    }
    c * (1.0 - 1.5 * q * q + 0.75 * q * q * q)
}

fn spline_dr(r: f64, h: f64) -> f64 {
    let q = r / h;
    let c = SIGMA / (h * h * h * h);
    if q >= 2.0 {
        return 0.0;
    }
    if q >= 1.0 {
        let t = 2.0 - q;
        return c * -0.75 * t * t;
    }
    c * (-3.0 * q + 2.25 * q * q)
}

pub fn naive_density(ps: &[ParticleState]) -> Vec<f64> {
    let mut out = vec![0.0; ps.len()];
    for i in 0..ps.len() {
        for j in 0..ps.len() {
            let dx = ps[i].position[0] - ps[j].position[0];
            let dy = ps[i].position[1] - ps[j].position[1];
            let dz = ps[i].position[2] - ps[j].position[2];
            let r = (dx * dx + dy * dy + dz * dz).sqrt();
            let h = 0.5 * (ps[i].smoothing_length + ps[j].smoothing_length);
            out[i] += ps[j].mass * spline(r, h);
        }
    }
    out
}

/// Acceleration and energy rate per particle.
pub fn naive_force(ps: &[ParticleState]) -> Vec<([f64; 3], f64)> {
    let mut out = Vec::with_capacity(ps.len());
    for i in 0..ps.len() {
        let pi = &ps[i];
        let mut a = [0.0f64; 3];
        let mut div = 0.0;
        for pj in ps {
            let d = [
                pi.position[0] - pj.position[0],
                pi.position[1] - pj.position[1],
                pi.position[2] - pj.position[2],
            ];
            if d[0] == 0.0 && d[1] == 0.0 && d[2] == 0.0 {
                continue;
            }
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let h = 0.5 * (pi.smoothing_length + pj.smoothing_length);
            let s = spline_dr(r, h) / r;
            let g = [s * d[0], s * d[1], s * d[2]];
            let coef = pj.mass
                * (pi.pressure / (pi.density * pi.density)
                    + pj.pressure / (pj.density * pj.density));
            for k in 0..3 {
                a[k] -= coef * g[k];
            }
            let dv = [
                pi.velocity[0] - pj.velocity[0],
                pi.velocity[1] - pj.velocity[1],
                pi.velocity[2] - pj.velocity[2],
            ];
            div += pj.mass * (dv[0] * g[0] + dv[1] * g[1] + dv[2] * g[2]);
        }
        out.push((a, pi.pressure / (pi.density * pi.density) * div));
    }
    out
}

/// Net momentum change relative to the summed magnitudes.
pub fn momentum_residual(ps: &[ParticleState]) -> f64 {
    let mut net = [0.0f64; 3];
    let mut scale = 0.0;
    for p in ps {
        for k in 0..3 {
            net[k] += p.mass * p.acceleration[k];
        }
        scale += p.mass.abs()
            * (p.acceleration[0].powi(2) + p.acceleration[1].powi(2) + p.acceleration[2].powi(2))
                .sqrt();
    }
    (net[0].powi(2) + net[1].powi(2) + net[2].powi(2)).sqrt() / scale
}
