//! Execution variants: fixed compositions of narrowing (N), layout
//! conversion (C), precision unpack (U) and movement (M) around a kernel,
//! and the in-place / streaming whole-timestep modes.
//!
//! | variant              | composition per kernel                         |
//! |----------------------|------------------------------------------------|
//! | `cpu-baseline`       | f on compressed AoS                            |
//! | `cpu-unpack`         | N^T U^T f U N                                  |
//! | `cpu-soa`            | C^T N^T U^T f U N C                            |
//! | `dev-native`         | M f M                                          |
//! | `dev-unpack`         | M N^T U^T f U N M                              |
//! | `dev-soa`            | M C^T N^T U^T f U N C M                        |
//! | `host-unpack-stream` | N^T U^T M f M U N                              |
//! | `host-soa-stream`    | C^T N^T U^T M f M U N C                        |
//!
//! In-place mode moves the whole buffer once per timestep and runs every
//! kernel on the device copy. Streaming moves only the kernel's narrowed
//! field set, per kernel, both ways. CPU variants never move data and run
//! identically in either mode.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::{Interconnect, LedgerSnapshot, MemorySpace, ScratchKey, TransferTag};
use crate::clock::Stopwatch;
use crate::layout::{
    aos_to_soa_in, merge_into, move_in, narrow_in, pack_in, soa_to_aos_in, unpack_in, LayoutError,
    PackedBuffer, Precision,
};
use crate::schema::{KernelAccessSet, RecordSchema};
use crate::sph::{self, load, AttrMap, KernelKind, KernelParams, ParticleState, SphError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Kernel(#[from] SphError),
    #[error("no access set declared for kernel `{0}`")]
    MissingAccessSet(KernelKind),
    #[error("pipeline configuration: {0}")]
    Config(String),
}

/// Where a variant performs its conversions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConversionSite {
    Cpu,
    Device,
    Host,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PipelineVariant {
    CpuBaseline,
    CpuUnpack,
    CpuSoa,
    DevNative,
    DevUnpack,
    DevSoa,
    HostUnpackStream,
    HostSoaStream,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 8] = [
        PipelineVariant::CpuBaseline,
        PipelineVariant::CpuUnpack,
        PipelineVariant::CpuSoa,
        PipelineVariant::DevNative,
        PipelineVariant::DevUnpack,
        PipelineVariant::DevSoa,
        PipelineVariant::HostUnpackStream,
        PipelineVariant::HostSoaStream,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineVariant::CpuBaseline => "cpu-baseline",
            PipelineVariant::CpuUnpack => "cpu-unpack",
            PipelineVariant::CpuSoa => "cpu-soa",
            PipelineVariant::DevNative => "dev-native",
            PipelineVariant::DevUnpack => "dev-unpack",
            PipelineVariant::DevSoa => "dev-soa",
            PipelineVariant::HostUnpackStream => "host-unpack-stream",
            PipelineVariant::HostSoaStream => "host-soa-stream",
        }
    }

    pub fn site(self) -> ConversionSite {
        use PipelineVariant::*;
        match self {
            CpuBaseline | CpuUnpack | CpuSoa => ConversionSite::Cpu,
            DevNative | DevUnpack | DevSoa => ConversionSite::Device,
            HostUnpackStream | HostSoaStream => ConversionSite::Host,
        }
    }

    pub fn is_cpu(self) -> bool {
        self.site() == ConversionSite::Cpu
    }

    pub fn unpacks(self) -> bool {
        !matches!(
            self,
            PipelineVariant::CpuBaseline | PipelineVariant::DevNative
        )
    }

    pub fn soa(self) -> bool {
        matches!(
            self,
            PipelineVariant::CpuSoa | PipelineVariant::DevSoa | PipelineVariant::HostSoaStream
        )
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PipelineVariant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}` (one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ExecutionMode {
    #[default]
    InPlace,
    Streaming,
}

impl ExecutionMode {
    pub const ALL: [ExecutionMode; 2] = [ExecutionMode::InPlace, ExecutionMode::Streaming];
}

impl fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecutionMode::InPlace => "inplace",
            ExecutionMode::Streaming => "streaming",
        })
    }
}

impl FromStr for ExecutionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inplace" | "in-place" => Ok(ExecutionMode::InPlace),
            "streaming" => Ok(ExecutionMode::Streaming),
            _ => Err(format!("unknown mode `{s}` (inplace|streaming)")),
        }
    }
}

/// Declared access sets keyed by kernel. The identity kernel always maps to
/// the empty set.
#[derive(Debug, Clone, Default)]
pub struct AccessTable {
    sets: BTreeMap<KernelKind, KernelAccessSet>,
}

impl AccessTable {
    /// Keep the sets whose kernel name is one of the workload kernels.
    pub fn from_sets(sets: &[KernelAccessSet]) -> Self {
        let sets = sets
            .iter()
            .filter_map(|s| s.kernel.parse::<KernelKind>().ok().map(|k| (k, s.clone())))
            .collect();
        AccessTable { sets }
    }

    pub fn get(&self, kind: KernelKind) -> Result<KernelAccessSet, PipelineError> {
        if kind == KernelKind::Identity {
            return Ok(KernelAccessSet::new("identity", [], []));
        }
        self.sets
            .get(&kind)
            .cloned()
            .ok_or(PipelineError::MissingAccessSet(kind))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub variant: PipelineVariant,
    pub mode: ExecutionMode,
    /// Kernels in execution order.
    pub kernels: Vec<KernelKind>,
    pub params: KernelParams,
    /// Convert the neighbour side of quadratic kernels once per buffer
    /// instead of once per outer iteration.
    pub hoist: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variant: PipelineVariant::CpuBaseline,
            mode: ExecutionMode::InPlace,
            kernels: KernelKind::TIMESTEP.to_vec(),
            params: KernelParams::default(),
            hoist: true,
        }
    }
}

impl PipelineConfig {
    pub fn new(variant: PipelineVariant, mode: ExecutionMode) -> Self {
        PipelineConfig {
            variant,
            mode,
            ..Default::default()
        }
    }

    /// Apply a configuration file of whitespace separated `key=value` pairs:
    /// `variant=<name> mode=<inplace|streaming> kernels=<list> order=<list>`.
    /// Lists are comma separated. `kernels` selects the kernels; `order`, when
    /// given, must be a permutation of the selection and fixes their order.
    /// Without `order`, selected kernels run in timestep order.
    pub fn apply_file(&mut self, text: &str) -> Result<(), PipelineError> {
        let cfg = |m: String| PipelineError::Config(m);
        let mut selected: Option<Vec<KernelKind>> = None;
        let mut order: Option<Vec<KernelKind>> = None;
        let parse_list = |v: &str| -> Result<Vec<KernelKind>, PipelineError> {
            v.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<KernelKind>().map_err(cfg))
                .collect()
        };
        for item in text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
        {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| cfg(format!("expected key=value, found `{item}`")))?;
            match key {
                "variant" => self.variant = value.parse().map_err(cfg)?,
                "mode" => self.mode = value.parse().map_err(cfg)?,
                "kernels" => selected = Some(parse_list(value)?),
                "order" => order = Some(parse_list(value)?),
                "hoist" => {
                    self.hoist = value
                        .parse()
                        .map_err(|_| cfg(format!("hoist expects true/false, found `{value}`")))?
                }
                "writeback" => self.params.writeback = value.parse().map_err(cfg)?,
                "dt" => {
                    self.params.dt = value
                        .parse()
                        .map_err(|_| cfg(format!("dt expects a number, found `{value}`")))?
                }
                _ => return Err(cfg(format!("unknown key `{key}`"))),
            }
        }
        match (selected, order) {
            (Some(sel), Some(ord)) => {
                let mut a = sel.clone();
                let mut b = ord.clone();
                a.sort();
                b.sort();
                if a != b {
                    return Err(cfg("order must be a permutation of kernels".into()));
                }
                self.kernels = ord;
            }
            (Some(mut sel), None) => {
                sel.sort();
                self.kernels = sel;
            }
            (None, Some(ord)) => self.kernels = ord,
            (None, None) => {}
        }
        Ok(())
    }
}

/// A particle population split into compressed AoS buffers on the host.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub schema: Arc<RecordSchema>,
    pub buffers: Vec<PackedBuffer>,
}

impl Population {
    pub fn from_states(schema: Arc<RecordSchema>, states: &[Vec<ParticleState>]) -> Self {
        let buffers = states
            .iter()
            .map(|s| {
                let mut b = PackedBuffer::new(schema.clone(), s.len(), MemorySpace::Host);
                sph::store_all(&mut b, s);
                b
            })
            .collect();
        Population { schema, buffers }
    }

    pub fn particles(&self) -> usize {
        self.buffers.iter().map(PackedBuffer::count).sum()
    }

    pub fn states(&self) -> Vec<Vec<ParticleState>> {
        self.buffers.iter().map(sph::load_all).collect()
    }

    /// SHA-256 over every buffer's bytes, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.buffers {
            h.update(b.data().as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub convert_s: f64,
    pub move_s: f64,
    pub compute_s: f64,
    pub merge_s: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.convert_s + self.move_s + self.compute_s + self.merge_s
    }

    fn add(&mut self, o: &PhaseTimes) {
        self.convert_s += o.convert_s;
        self.move_s += o.move_s;
        self.compute_s += o.compute_s;
        self.merge_s += o.merge_s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub variant: PipelineVariant,
    pub mode: ExecutionMode,
    /// Phase times summed over buffers (CPU seconds when run in parallel).
    pub phases: PhaseTimes,
    pub wall_s: f64,
    pub kernel_compute_s: BTreeMap<KernelKind, f64>,
    /// View constructions (N/C/U chains).
    pub conversions: u64,
    /// Neighbour-side view constructions of quadratic kernels.
    pub inner_conversions: u64,
    /// Transfers performed by this run.
    pub ledger: LedgerSnapshot,
    pub checksum: String,
}

#[derive(Debug, Default)]
struct Local {
    phases: PhaseTimes,
    kernel_compute_s: BTreeMap<KernelKind, f64>,
    conversions: u64,
    inner_conversions: u64,
}

impl Local {
    fn merge(&mut self, o: Local) {
        self.phases.add(&o.phases);
        for (k, t) in o.kernel_compute_s {
            *self.kernel_compute_s.entry(k).or_default() += t;
        }
        self.conversions += o.conversions;
        self.inner_conversions += o.inner_conversions;
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    access: BTreeMap<KernelKind, KernelAccessSet>,
    link: &'a Interconnect,
}

impl Ctx<'_> {
    fn tag(&self, kernel: &str) -> TransferTag {
        TransferTag::new(
            self.cfg.variant.name(),
            format!("{}/{}", self.cfg.mode, kernel),
        )
    }

    fn key(&self, kernel: KernelKind, role: &'static str) -> ScratchKey {
        (
            self.cfg.variant.name().to_string(),
            kernel.name().to_string(),
            role,
        )
    }

    fn scratch(
        &self,
        space: MemorySpace,
        kernel: KernelKind,
        role: &'static str,
        bytes: usize,
    ) -> Vec<u8> {
        self.link
            .arena(space)
            .pool()
            .take(&self.key(kernel, role), bytes)
    }

    fn recycle(
        &self,
        space: MemorySpace,
        kernel: KernelKind,
        role: &'static str,
        buf: PackedBuffer,
    ) {
        self.link
            .arena(space)
            .pool()
            .give(&self.key(kernel, role), buf.into_storage());
    }

    fn mv(
        &self,
        buf: &PackedBuffer,
        to: MemorySpace,
        kernel: &str,
        local: &mut Local,
    ) -> Result<PackedBuffer, PipelineError> {
        let t = Stopwatch::start();
        let out = move_in(
            buf,
            to,
            &self.link.ledger,
            &self.tag(kernel),
            Vec::with_capacity(buf.byte_len()),
        )?;
        local.phases.move_s += t.seconds();
        Ok(out)
    }

    fn compute(
        &self,
        kind: KernelKind,
        view: &mut PackedBuffer,
        local: &mut Local,
    ) -> Result<(), PipelineError> {
        let t = Stopwatch::start();
        sph::run_kernel(kind, view, &self.cfg.params)?;
        let dt = t.seconds();
        local.phases.compute_s += dt;
        *local.kernel_compute_s.entry(kind).or_default() += dt;
        Ok(())
    }

    /// Build the kernel view of `base`: N (when `base` carries every field)
    /// followed by U when the variant unpacks.
    fn view_of(
        &self,
        base: &PackedBuffer,
        kind: KernelKind,
        local: &mut Local,
    ) -> Result<PackedBuffer, PipelineError> {
        let t = Stopwatch::start();
        let space = base.home();
        let narrowed = if base.is_full() {
            let storage = self.scratch(space, kind, "narrow", base.byte_len());
            narrow_in(base, &self.access[&kind], storage)?
        } else {
            base.clone()
        };
        let view = if self.cfg.variant.unpacks() && narrowed.precision() == Precision::Compressed {
            let storage = self.scratch(space, kind, "unpack", narrowed.byte_len() * 2);
            let v = unpack_in(&narrowed, storage)?;
            self.recycle(space, kind, "narrow", narrowed);
            v
        } else {
            narrowed
        };
        local.phases.convert_s += t.seconds();
        local.conversions += 1;
        Ok(view)
    }

    /// Run `kind` over `view`, honouring the hoist setting for pair kernels:
    /// unhoisted, the neighbour view is rebuilt from `source` for every
    /// outer iteration.
    fn compute_view(
        &self,
        kind: KernelKind,
        view: &mut PackedBuffer,
        source: &PackedBuffer,
        local: &mut Local,
    ) -> Result<(), PipelineError> {
        if !kind.is_quadratic() {
            return self.compute(kind, view, local);
        }
        if self.cfg.hoist {
            local.inner_conversions += 1;
            return self.compute(kind, view, local);
        }
        let imap = AttrMap::of(view);
        for i in 0..view.count() {
            let jv = self.view_of(source, kind, local)?;
            local.inner_conversions += 1;
            let t = Stopwatch::start();
            let jmap = AttrMap::of(&jv);
            jmap.require(kind.reads(), kind)?;
            let neighbours: Vec<ParticleState> = (0..jv.count())
                .map(|r| load(&jv, &jmap, r, kind.reads()))
                .collect();
            sph::call_quadratic_rows(kind, view, &imap, &neighbours, &self.cfg.params, i..i + 1)?;
            let dt = t.seconds();
            local.phases.compute_s += dt;
            *local.kernel_compute_s.entry(kind).or_default() += dt;
            self.recycle(jv.home(), kind, "unpack", jv);
        }
        Ok(())
    }

    /// `[C^T] N^T U^T f U N [C]` applied to `buf` where it lives. A narrowed
    /// input skips N/N^T and is replaced wholesale.
    fn staged(
        &self,
        buf: &mut PackedBuffer,
        kind: KernelKind,
        local: &mut Local,
    ) -> Result<(), PipelineError> {
        let v = self.cfg.variant;
        if !v.unpacks() && !v.soa() {
            return self.compute(kind, buf, local);
        }
        let space = buf.home();
        let t = Stopwatch::start();
        let mut base = if v.soa() {
            let storage = self.scratch(space, kind, "soa", buf.byte_len());
            Some(aos_to_soa_in(buf, storage)?)
        } else {
            None
        };
        local.phases.convert_s += t.seconds();
        let base_ref: &mut PackedBuffer = base.as_mut().unwrap_or(buf);
        let mut view = self.view_of(base_ref, kind, local)?;
        self.compute_view(kind, &mut view, base_ref, local)?;

        let t = Stopwatch::start();
        let packed = if v.unpacks() {
            let p = pack_in(&view, Vec::with_capacity(base_ref.byte_len()))?;
            self.recycle(space, kind, "unpack", view);
            p
        } else {
            view
        };
        local.phases.convert_s += t.seconds();
        let t = Stopwatch::start();
        if base_ref.is_full() {
            merge_into(&packed, base_ref)?;
            self.recycle(space, kind, "narrow", packed);
        } else {
            *base_ref = packed;
        }
        local.phases.merge_s += t.seconds();
        if let Some(soa) = base {
            let t = Stopwatch::start();
            *buf = soa_to_aos_in(&soa, Vec::with_capacity(soa.byte_len()))?;
            self.recycle(space, kind, "soa", soa);
            local.phases.convert_s += t.seconds();
        }
        Ok(())
    }

    fn run_buffer(&self, mut buf: PackedBuffer) -> Result<(PackedBuffer, Local), PipelineError> {
        let mut local = Local::default();
        let v = self.cfg.variant;
        match (v.site(), self.cfg.mode) {
            (ConversionSite::Cpu, _) => {
                for &k in &self.cfg.kernels {
                    self.staged(&mut buf, k, &mut local)?;
                }
            }
            (ConversionSite::Device, ExecutionMode::InPlace) => {
                let mut d = self.mv(&buf, MemorySpace::Device, "all", &mut local)?;
                for &k in &self.cfg.kernels {
                    self.staged(&mut d, k, &mut local)?;
                }
                buf = self.mv(&d, MemorySpace::Host, "all", &mut local)?;
            }
            (ConversionSite::Device, ExecutionMode::Streaming) => {
                for &k in &self.cfg.kernels {
                    let t = Stopwatch::start();
                    let n = narrow_in(&buf, &self.access[&k], Vec::new())?;
                    local.phases.convert_s += t.seconds();
                    let mut d = self.mv(&n, MemorySpace::Device, k.name(), &mut local)?;
                    self.staged(&mut d, k, &mut local)?;
                    let back = self.mv(&d, MemorySpace::Host, k.name(), &mut local)?;
                    let t = Stopwatch::start();
                    merge_into(&back, &mut buf)?;
                    local.phases.merge_s += t.seconds();
                }
            }
            (ConversionSite::Host, ExecutionMode::InPlace) => {
                let t = Stopwatch::start();
                let laid = if v.soa() {
                    aos_to_soa_in(&buf, Vec::new())?
                } else {
                    buf.clone()
                };
                let native = unpack_in(&laid, Vec::new())?;
                local.phases.convert_s += t.seconds();
                local.conversions += 1;
                let mut d = self.mv(&native, MemorySpace::Device, "all", &mut local)?;
                for &k in &self.cfg.kernels {
                    let source = d.clone();
                    self.compute_view(k, &mut d, &source, &mut local)?;
                }
                let back = self.mv(&d, MemorySpace::Host, "all", &mut local)?;
                let t = Stopwatch::start();
                let packed = pack_in(&back, Vec::new())?;
                buf = if v.soa() {
                    soa_to_aos_in(&packed, Vec::new())?
                } else {
                    packed
                };
                local.phases.convert_s += t.seconds();
            }
            (ConversionSite::Host, ExecutionMode::Streaming) => {
                for &k in &self.cfg.kernels {
                    let t = Stopwatch::start();
                    let mut base = if v.soa() {
                        aos_to_soa_in(&buf, Vec::new())?
                    } else {
                        buf.clone()
                    };
                    local.phases.convert_s += t.seconds();
                    let view = self.view_of(&base, k, &mut local)?;
                    let mut d = self.mv(&view, MemorySpace::Device, k.name(), &mut local)?;
                    self.recycle(MemorySpace::Host, k, "unpack", view);
                    let source = d.clone();
                    self.compute_view(k, &mut d, &source, &mut local)?;
                    let back = self.mv(&d, MemorySpace::Host, k.name(), &mut local)?;
                    let t = Stopwatch::start();
                    let packed = pack_in(&back, Vec::new())?;
                    local.phases.convert_s += t.seconds();
                    let t = Stopwatch::start();
                    merge_into(&packed, &mut base)?;
                    local.phases.merge_s += t.seconds();
                    let t = Stopwatch::start();
                    buf = if v.soa() {
                        soa_to_aos_in(&base, Vec::new())?
                    } else {
                        base
                    };
                    local.phases.convert_s += t.seconds();
                }
            }
        }
        Ok((buf, local))
    }
}

/// Run the configured kernels over every buffer of `population` and return
/// the final population with its metrics. Buffers are processed
/// independently (in parallel with the `parallel` feature).
pub fn run_variant(
    cfg: &PipelineConfig,
    population: &Population,
    access: &AccessTable,
    link: &Interconnect,
) -> Result<(Population, RunMetrics), PipelineError> {
    let mut sets = BTreeMap::new();
    for &k in &cfg.kernels {
        let set = access.get(k)?;
        for name in set.touched() {
            if population.schema.index_of(name).is_none() {
                return Err(LayoutError::UnknownField(name.to_string()).into());
            }
        }
        sets.insert(k, set);
    }
    let ctx = Ctx {
        cfg,
        access: sets,
        link,
    };
    let before = link.ledger.snapshot();
    let wall = Stopwatch::start();

    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        population
            .buffers
            .par_iter()
            .map(|b| ctx.run_buffer(b.clone()))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = population
        .buffers
        .iter()
        .map(|b| ctx.run_buffer(b.clone()))
        .collect();

    let mut buffers = Vec::with_capacity(results.len());
    let mut total = Local::default();
    for r in results {
        let (b, l) = r?;
        buffers.push(b);
        total.merge(l);
    }
    let wall_s = wall.seconds();
    let after = link.ledger.snapshot();
    let out = Population {
        schema: population.schema.clone(),
        buffers,
    };
    let metrics = RunMetrics {
        variant: cfg.variant,
        mode: cfg.mode,
        phases: total.phases,
        wall_s,
        kernel_compute_s: total.kernel_compute_s,
        conversions: total.conversions,
        inner_conversions: total.inner_conversions,
        ledger: after.since(&before, &link.ledger.model()),
        checksum: out.checksum(),
    };
    Ok((out, metrics))
}

/// Run a pair kernel over `i_source` with neighbours from `j_source`
/// (`None`: the i-buffer itself), converting both sides through N and U.
/// Hoisted, the neighbour view is built once (shared with the i-view for a
/// self-interaction); otherwise it is rebuilt for every outer iteration.
/// Returns `(conversions, inner_conversions)`.
pub fn hoisted_quadratic(
    kind: KernelKind,
    i_source: &mut PackedBuffer,
    j_source: Option<&PackedBuffer>,
    access: &KernelAccessSet,
    params: &KernelParams,
    hoist: bool,
) -> Result<(u64, u64), PipelineError> {
    let mut view = unpack_in(&narrow_in(i_source, access, Vec::new())?, Vec::new())?;
    let mut conversions = 1;
    let mut inner = 0;
    let imap = AttrMap::of(&view);
    let convert_j = |src: &PackedBuffer| -> Result<Vec<ParticleState>, PipelineError> {
        let jv = unpack_in(&narrow_in(src, access, Vec::new())?, Vec::new())?;
        let jmap = AttrMap::of(&jv);
        jmap.require(kind.reads(), kind)?;
        Ok((0..jv.count())
            .map(|r| load(&jv, &jmap, r, kind.reads()))
            .collect())
    };
    let snapshot_i = i_source.clone();
    let j_src: &PackedBuffer = j_source.unwrap_or(&snapshot_i);
    if hoist {
        let neighbours = match j_source {
            Some(src) => {
                conversions += 1;
                convert_j(src)?
            }
            None => (0..view.count())
                .map(|r| load(&view, &imap, r, kind.reads()))
                .collect(),
        };
        inner += 1;
        sph::call_quadratic_on(kind, &mut view, &imap, &neighbours, params)?;
    } else {
        for i in 0..view.count() {
            let neighbours = convert_j(j_src)?;
            conversions += 1;
            inner += 1;
            sph::call_quadratic_rows(kind, &mut view, &imap, &neighbours, params, i..i + 1)?;
        }
    }
    let packed = pack_in(&view, Vec::new())?;
    merge_into(&packed, i_source)?;
    Ok((conversions, inner))
}
