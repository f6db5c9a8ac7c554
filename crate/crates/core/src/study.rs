//! Accuracy of the pressure-force acceleration under uniform truncation.

use std::sync::Arc;

use thiserror::Error;

use crate::arena::Interconnect;
use crate::fpcodec::PrecisionSpec;
use crate::pipelines::{run_variant, AccessTable, PipelineConfig, PipelineError, PipelineVariant};
use crate::schema::{RecordSchema, SchemaError};
use crate::sph::{KernelKind, ParticleState};

/// Widths swept by default, highest first.
pub const DEFAULT_SWEEP: [u32; 11] = [64, 56, 48, 40, 34, 33, 32, 24, 17, 16, 12];

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("sweep width {0} outside [{min}, {max}]", min = PrecisionSpec::MIN_BITS, max = PrecisionSpec::MAX_BITS)]
    Sweep(u32),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationRow {
    pub bits: u32,
    /// `sqrt(mean |Δa|²) / mean |a_ref|`.
    pub rmse_rel: f64,
    /// `max |Δa| / mean |a_ref|`.
    pub max_rel: f64,
}

/// Fields kept at their declared format in every sweep step.
pub const UNTRUNCATED: [&str; 1] = ["x"];

/// Reject widths the codec cannot represent.
pub fn check_sweep(sweep: &[u32]) -> Result<(), StudyError> {
    match sweep
        .iter()
        .find(|&&t| !(PrecisionSpec::MIN_BITS..=PrecisionSpec::MAX_BITS).contains(&t))
    {
        Some(&t) => Err(StudyError::Sweep(t)),
        None => Ok(()),
    }
}

fn accelerations(
    schema: RecordSchema,
    states: &[Vec<ParticleState>],
    access: &AccessTable,
) -> Result<Vec<[f64; 3]>, StudyError> {
    let pop = crate::pipelines::Population::from_states(Arc::new(schema), states);
    let mut cfg = PipelineConfig::new(PipelineVariant::CpuBaseline, Default::default());
    cfg.kernels = vec![KernelKind::Density, KernelKind::Force];
    let (out, _) = run_variant(&cfg, &pop, access, &Interconnect::default())?;
    Ok(out
        .states()
        .into_iter()
        .flatten()
        .map(|p| p.acceleration)
        .collect())
}

/// Run density then force once per width in `sweep` with every float field
/// except positions truncated to that width, and compare the resulting
/// accelerations against an all-binary64 run.
pub fn truncation_study(
    base: &RecordSchema,
    states: &[Vec<ParticleState>],
    sweep: &[u32],
    access: &AccessTable,
) -> Result<Vec<TruncationRow>, StudyError> {
    check_sweep(sweep)?;
    let reference = accelerations(
        base.with_uniform_truncation(64, &UNTRUNCATED)?,
        states,
        access,
    )?;
    let n = reference.len() as f64;
    let mean_ref = reference.iter().map(|a| crate::sph::norm(*a)).sum::<f64>() / n;
    sweep
        .iter()
        .map(|&bits| {
            let a = accelerations(
                base.with_uniform_truncation(bits, &UNTRUNCATED)?,
                states,
                access,
            )?;
            let mut sq = 0.0;
            let mut max = 0.0f64;
            for (x, r) in a.iter().zip(&reference) {
                let d = crate::sph::norm([x[0] - r[0], x[1] - r[1], x[2] - r[2]]);
                sq += d * d;
                max = max.max(d);
            }
            Ok(TruncationRow {
                bits,
                rmse_rel: (sq / n).sqrt() / mean_ref,
                max_rel: max / mean_ref,
            })
        })
        .collect()
}
