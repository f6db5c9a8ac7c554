//! Report builders for the transform, kernel and pipeline benchmarks.
//!
//! Byte counts and checksums are exact and reproducible; every `*_s` column
//! other than `modeled_transfer_s` is a wall-clock measurement.

use std::sync::Arc;

use crate::arena::{Interconnect, LinkModel, MemorySpace, TransferTag};
use crate::clock::Stopwatch;
use crate::layout::{aos_to_soa, move_to, narrow, pack, soa_to_aos, unpack, Layout, PackedBuffer};
use crate::pipelines::{
    run_variant, AccessTable, ExecutionMode, PipelineConfig, PipelineError, PipelineVariant,
    Population,
};
use crate::schema::{KernelAccessSet, RecordSchema, SchemaError};
use crate::sph::{self, KernelKind, KernelParams, ParticleState};
use crate::study::UNTRUNCATED;

/// `None` keeps the schema as declared; `Some(t)` truncates every float
/// field but positions to `t` bits.
pub type PrecisionChoice = Option<u32>;

pub fn precision_label(p: PrecisionChoice) -> String {
    p.map_or_else(|| "schema".to_string(), |t| t.to_string())
}

pub fn schema_at(base: &RecordSchema, p: PrecisionChoice) -> Result<RecordSchema, SchemaError> {
    match p {
        Some(t) => base.with_uniform_truncation(t, &UNTRUNCATED),
        None => Ok(base.clone()),
    }
}

/// Where the layout conversion runs relative to the move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Convert (C, N, U) on the host, move the native view.
    Host,
    /// Move the compressed data, convert in the device arena.
    Device,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::Host => "host",
            Placement::Device => "device",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformRow {
    /// Kernel name, or `full` for the whole record.
    pub kernel: String,
    pub placement: Placement,
    pub precision: String,
    pub particles: usize,
    pub convert_s: f64,
    /// One-way host to device bytes.
    pub bytes_moved: u64,
    pub modeled_transfer_s: f64,
    /// Host total over device total (convert + modeled transfer);
    /// above 1 means device placement is faster. Same on both rows of a pair.
    pub ratio: f64,
}

fn full_access(schema: &RecordSchema) -> KernelAccessSet {
    let names: Vec<&str> = schema.fields().iter().map(|f| f.name.as_str()).collect();
    KernelAccessSet::new("full", names.clone(), names)
}

/// Time `C -> N -> U` with the move before (device placement) or after
/// (host placement) the conversion chain, per kernel and for the full record.
pub fn bench_transform(
    base: &RecordSchema,
    states: &[Vec<ParticleState>],
    precisions: &[PrecisionChoice],
    access: &AccessTable,
    link: LinkModel,
) -> Result<Vec<TransformRow>, PipelineError> {
    let mut rows = Vec::new();
    let particles = states.iter().map(Vec::len).sum();
    for &p in precisions {
        let schema = schema_at(base, p).map_err(|e| PipelineError::Config(e.to_string()))?;
        let pop = Population::from_states(Arc::new(schema.clone()), states);
        let mut sets: Vec<(String, KernelAccessSet)> = KernelKind::TIMESTEP
            .iter()
            .map(|&k| access.get(k).map(|s| (k.name().to_string(), s)))
            .collect::<Result<_, _>>()?;
        sets.push(("full".into(), full_access(&schema)));
        for (name, set) in &sets {
            let mut pair = Vec::new();
            for placement in [Placement::Host, Placement::Device] {
                let ic = Interconnect::new(link);
                let tag = TransferTag::new(placement.name(), name.clone());
                let mut convert_s = 0.0;
                for buf in &pop.buffers {
                    let chain = |b: &PackedBuffer| -> Result<PackedBuffer, PipelineError> {
                        Ok(unpack(&narrow(&aos_to_soa(b)?, set)?)?)
                    };
                    match placement {
                        Placement::Host => {
                            let t = Stopwatch::start();
                            let v = chain(buf)?;
                            convert_s += t.seconds();
                            move_to(&v, MemorySpace::Device, &ic.ledger, &tag)?;
                        }
                        Placement::Device => {
                            let d = move_to(buf, MemorySpace::Device, &ic.ledger, &tag)?;
                            let t = Stopwatch::start();
                            chain(&d)?;
                            convert_s += t.seconds();
                        }
                    }
                }
                let snap = ic.ledger.snapshot();
                pair.push(TransformRow {
                    kernel: name.clone(),
                    placement,
                    precision: precision_label(p),
                    particles,
                    convert_s,
                    bytes_moved: snap.h2d.bytes,
                    modeled_transfer_s: snap.modeled_time_s,
                    ratio: 0.0,
                });
            }
            let total = |r: &TransformRow| r.convert_s + r.modeled_transfer_s;
            let ratio = total(&pair[0]) / total(&pair[1]);
            for mut r in pair {
                r.ratio = ratio;
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub kernel: KernelKind,
    pub layout: Layout,
    pub precision: String,
    pub particles: usize,
    pub compute_s: f64,
    pub speedup_vs_aos: f64,
    /// Checksum of the resulting compressed AoS state.
    pub checksum: String,
}

/// Time each kernel alone over full native views in AoS and in SoA.
pub fn bench_kernels(
    base: &RecordSchema,
    states: &[Vec<ParticleState>],
    precisions: &[PrecisionChoice],
    params: &KernelParams,
) -> Result<Vec<KernelRow>, PipelineError> {
    let mut rows = Vec::new();
    let particles = states.iter().map(Vec::len).sum();
    let kernels = [
        KernelKind::Identity,
        KernelKind::Density,
        KernelKind::Force,
        KernelKind::Kick,
        KernelKind::Drift,
    ];
    for &p in precisions {
        let schema = schema_at(base, p).map_err(|e| PipelineError::Config(e.to_string()))?;
        let pop = Population::from_states(Arc::new(schema), states);
        for kernel in kernels {
            let mut aos_s = 0.0;
            for layout in [Layout::Aos, Layout::Soa] {
                let mut views: Vec<PackedBuffer> = pop
                    .buffers
                    .iter()
                    .map(|b| {
                        let laid = if layout == Layout::Soa {
                            aos_to_soa(b)?
                        } else {
                            b.clone()
                        };
                        unpack(&laid)
                    })
                    .collect::<Result<_, _>>()?;
                let t = Stopwatch::start();
                for v in &mut views {
                    sph::run_kernel(kernel, v, params)?;
                }
                let compute_s = t.seconds();
                if layout == Layout::Aos {
                    aos_s = compute_s;
                }
                let packed: Vec<PackedBuffer> = views
                    .iter()
                    .map(|v| {
                        let c = pack(v)?;
                        if layout == Layout::Soa {
                            soa_to_aos(&c)
                        } else {
                            Ok(c)
                        }
                    })
                    .collect::<Result<_, _>>()?;
                let out = Population {
                    schema: pop.schema.clone(),
                    buffers: packed,
                };
                rows.push(KernelRow {
                    kernel,
                    layout,
                    precision: precision_label(p),
                    particles,
                    compute_s,
                    speedup_vs_aos: aos_s / compute_s,
                    checksum: out.checksum(),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRow {
    pub variant: PipelineVariant,
    /// `None` for CPU variants, which never move data.
    pub mode: Option<ExecutionMode>,
    pub precision: String,
    pub particles: usize,
    /// convert + compute + merge + modeled transfer.
    pub total_s: f64,
    pub convert_s: f64,
    /// Measured copy time of the simulated moves.
    pub move_s: f64,
    pub compute_s: f64,
    pub merge_s: f64,
    pub modeled_transfer_s: f64,
    pub h2d_bytes: u64,
    pub d2h_bytes: u64,
    pub transfers: u64,
    /// Share of compute time per kernel, in `KernelKind::TIMESTEP` order.
    pub kernel_share: [f64; 4],
    pub checksum: String,
}

/// Run one timestep for each requested variant and mode.
#[allow(clippy::too_many_arguments)]
pub fn bench_pipeline(
    base: &RecordSchema,
    states: &[Vec<ParticleState>],
    precisions: &[PrecisionChoice],
    variants: &[PipelineVariant],
    modes: &[ExecutionMode],
    access: &AccessTable,
    params: &KernelParams,
    link: LinkModel,
) -> Result<Vec<PipelineRow>, PipelineError> {
    let mut rows = Vec::new();
    let particles = states.iter().map(Vec::len).sum();
    for &p in precisions {
        let schema = schema_at(base, p).map_err(|e| PipelineError::Config(e.to_string()))?;
        let pop = Population::from_states(Arc::new(schema), states);
        for &variant in variants {
            let run_modes: Vec<Option<ExecutionMode>> = if variant.is_cpu() {
                vec![None]
            } else {
                modes.iter().copied().map(Some).collect()
            };
            for mode in run_modes {
                let mut cfg = PipelineConfig::new(variant, mode.unwrap_or_default());
                cfg.params = *params;
                let ic = Interconnect::new(link);
                let (_, m) = run_variant(&cfg, &pop, access, &ic)?;
                let compute = m.phases.compute_s;
                let mut share = [0.0; 4];
                for (i, k) in KernelKind::TIMESTEP.iter().enumerate() {
                    let t = m.kernel_compute_s.get(k).copied().unwrap_or(0.0);
                    share[i] = if compute > 0.0 { t / compute } else { 0.0 };
                }
                rows.push(PipelineRow {
                    variant,
                    mode,
                    precision: precision_label(p),
                    particles,
                    total_s: m.phases.convert_s
                        + m.phases.compute_s
                        + m.phases.merge_s
                        + m.ledger.modeled_time_s,
                    convert_s: m.phases.convert_s,
                    move_s: m.phases.move_s,
                    compute_s: m.phases.compute_s,
                    merge_s: m.phases.merge_s,
                    modeled_transfer_s: m.ledger.modeled_time_s,
                    h2d_bytes: m.ledger.h2d.bytes,
                    d2h_bytes: m.ledger.d2h.bytes,
                    transfers: m.ledger.total_transfers(),
                    kernel_share: share,
                    checksum: m.checksum,
                });
            }
        }
    }
    Ok(rows)
}
