//! SPH workload: cubic-spline smoothing kernel, the density and force
//! pair kernels, kick/drift updates, and the loop drivers that run them over
//! packed buffers in any layout or precision.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fpcodec::{quantize, PrecisionSpec};
use crate::layout::PackedBuffer;

/// Particles per neighbour buffer.
pub const NEIGHBOURS: usize = 64;

/// Adiabatic index of the ideal-gas equation of state.
pub const GAMMA: f64 = 5.0 / 3.0;

/// 3D cubic-spline normalisation.
pub const SIGMA: f64 = std::f64::consts::FRAC_1_PI;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SphError {
    #[error("particle {0} has zero density")]
    ZeroDensity(usize),
    #[error("equation of state needs positive density, got {0}")]
    NonPositiveDensity(f64),
    #[error("view lacks field `{0}` required by kernel {1}")]
    MissingField(&'static str, KernelKind),
    #[error("initial conditions: {0}")]
    Input(String),
}

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub internal_energy: f64,
    pub mass: f64,
    pub smoothing_length: f64,
    pub density: f64,
    pub pressure: f64,
    pub sound_speed: f64,
    pub acceleration: Vec3,
    pub energy_rate: f64,
    pub timestep: f64,
    pub id: i64,
}

/// Particle quantities and the schema field names they are stored under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attr {
    Position,
    Velocity,
    InternalEnergy,
    Mass,
    SmoothingLength,
    Density,
    Pressure,
    SoundSpeed,
    Acceleration,
    EnergyRate,
    Timestep,
    Id,
}

impl Attr {
    pub const ALL: [Attr; 12] = [
        Attr::Position,
        Attr::Velocity,
        Attr::InternalEnergy,
        Attr::Mass,
        Attr::SmoothingLength,
        Attr::Density,
        Attr::Pressure,
        Attr::SoundSpeed,
        Attr::Acceleration,
        Attr::EnergyRate,
        Attr::Timestep,
        Attr::Id,
    ];

    pub fn field_name(self) -> &'static str {
        match self {
            Attr::Position => "x",
            Attr::Velocity => "v",
            Attr::InternalEnergy => "u",
            Attr::Mass => "m",
            Attr::SmoothingLength => "h",
            Attr::Density => "rho",
            Attr::Pressure => "P",
            Attr::SoundSpeed => "cs",
            Attr::Acceleration => "a",
            Attr::EnergyRate => "du",
            Attr::Timestep => "dt",
            Attr::Id => "id",
        }
    }

    fn lanes(self) -> u32 {
        match self {
            Attr::Position | Attr::Velocity | Attr::Acceleration => 3,
            _ => 1,
        }
    }

    fn get(self, p: &ParticleState) -> [f64; 3] {
        let s = |x| [x, 0.0, 0.0];
        match self {
            Attr::Position => p.position,
            Attr::Velocity => p.velocity,
            Attr::Acceleration => p.acceleration,
            Attr::InternalEnergy => s(p.internal_energy),
            Attr::Mass => s(p.mass),
            Attr::SmoothingLength => s(p.smoothing_length),
            Attr::Density => s(p.density),
            Attr::Pressure => s(p.pressure),
            Attr::SoundSpeed => s(p.sound_speed),
            Attr::EnergyRate => s(p.energy_rate),
            Attr::Timestep => s(p.timestep),
            Attr::Id => s(p.id as f64),
        }
    }

    fn set(self, p: &mut ParticleState, v: [f64; 3]) {
        match self {
            Attr::Position => p.position = v,
            Attr::Velocity => p.velocity = v,
            Attr::Acceleration => p.acceleration = v,
            Attr::InternalEnergy => p.internal_energy = v[0],
            Attr::Mass => p.mass = v[0],
            Attr::SmoothingLength => p.smoothing_length = v[0],
            Attr::Density => p.density = v[0],
            Attr::Pressure => p.pressure = v[0],
            Attr::SoundSpeed => p.sound_speed = v[0],
            Attr::EnergyRate => p.energy_rate = v[0],
            Attr::Timestep => p.timestep = v[0],
            Attr::Id => p.id = v[0] as i64,
        }
    }
}

// ---------------------------------------------------------------------------
// smoothing kernel

/// Cubic spline `W(r, h)` with support radius `2h`.
#[inline]
pub fn w(r: f64, h: f64) -> f64 {
    let q = r / h;
    let norm = SIGMA / (h * h * h);
    if q < 1.0 {
        norm * (1.0 - 1.5 * q * q + 0.75 * q * q * q)
    } else if q < 2.0 {
        let t = 2.0 - q;
        norm * 0.25 * t * t * t
    } else {
        0.0
    }
}

/// `dW/dr`.
#[inline]
pub fn dw_dr(r: f64, h: f64) -> f64 {
    let q = r / h;
    let norm = SIGMA / (h * h * h * h);
    if q < 1.0 {
        norm * (-3.0 * q + 2.25 * q * q)
    } else if q < 2.0 {
        let t = 2.0 - q;
        norm * -0.75 * t * t
    } else {
        0.0
    }
}

/// `∇W` at separation `dx`; zero at the origin.
#[inline]
pub fn grad_w(dx: Vec3, h: f64) -> Vec3 {
    let r = norm(dx);
    if r == 0.0 {
        return [0.0; 3];
    }
    let s = dw_dr(r, h) / r;
    [s * dx[0], s * dx[1], s * dx[2]]
}

#[inline]
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn pair_smoothing_length(hi: f64, hj: f64) -> f64 {
    0.5 * (hi + hj)
}

/// Ideal-gas pressure and sound speed.
pub fn eos(rho: f64, u: f64) -> Result<(f64, f64), SphError> {
    if rho <= 0.0 || rho.is_nan() {
        return Err(SphError::NonPositiveDensity(rho));
    }
    let p = (GAMMA - 1.0) * rho * u;
    Ok((p, (GAMMA * p / rho).sqrt()))
}

// ---------------------------------------------------------------------------
// kernels over particle slices

/// How written quantities are stored while a kernel runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Writeback {
    /// Accumulate in binary64 and store each written field once.
    #[default]
    Deferred,
    /// Quantize through the field's storage format at every store.
    PerAccess,
}

impl FromStr for Writeback {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deferred" => Ok(Writeback::Deferred),
            "per-access" => Ok(Writeback::PerAccess),
            _ => Err(format!(
                "unknown writeback mode `{s}` (deferred|per-access)"
            )),
        }
    }
}

impl fmt::Display for Writeback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Writeback::Deferred => "deferred",
            Writeback::PerAccess => "per-access",
        })
    }
}

/// Rounding applied to an accumulator after each contribution.
#[derive(Debug, Clone, Copy)]
struct Store(Option<PrecisionSpec>);

impl Store {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self.0 {
            Some(spec) => quantize(x, spec),
            None => x,
        }
    }
}

#[inline]
fn density_pair(acc: f64, pi: &ParticleState, pj: &ParticleState, store: Store) -> f64 {
    let r = norm(sub(pi.position, pj.position));
    let h = pair_smoothing_length(pi.smoothing_length, pj.smoothing_length);
    store.apply(acc + pj.mass * w(r, h))
}

/// `rho_i = Σ_j m_j W(|x_i - x_j|, h_ij)` for particle `i` of `neighbours`,
/// self term included, ascending `j`.
pub fn density(i: usize, neighbours: &[ParticleState]) -> f64 {
    density_of(&neighbours[i], neighbours)
}

fn density_of(pi: &ParticleState, neighbours: &[ParticleState]) -> f64 {
    neighbours
        .iter()
        .fold(0.0, |acc, pj| density_pair(acc, pi, pj, Store(None)))
}

#[derive(Debug, Clone, Copy, Default)]
struct ForceAcc {
    a: Vec3,
    div: f64,
}

#[inline]
fn force_pair(acc: &mut ForceAcc, pi: &ParticleState, pj: &ParticleState, sa: Store, sdu: Store) {
    let dx = sub(pi.position, pj.position);
    if dx == [0.0; 3] {
        return;
    }
    let h = pair_smoothing_length(pi.smoothing_length, pj.smoothing_length);
    let g = grad_w(dx, h);
    let pterm = pi.pressure / (pi.density * pi.density) + pj.pressure / (pj.density * pj.density);
    let c = pj.mass * pterm;
    for k in 0..3 {
        acc.a[k] = sa.apply(acc.a[k] - c * g[k]);
    }
    acc.div = sdu.apply(acc.div + pj.mass * dot(sub(pi.velocity, pj.velocity), g));
}

/// Acceleration and internal-energy rate of particle `i` of `neighbours`
/// from pressure forces. Pairs at zero separation (including the particle
/// itself) contribute nothing.
pub fn force(i: usize, neighbours: &[ParticleState]) -> Result<(Vec3, f64), SphError> {
    force_with(&neighbours[i], i, neighbours, Store(None), Store(None))
}

fn force_with(
    pi: &ParticleState,
    i: usize,
    neighbours: &[ParticleState],
    sa: Store,
    sdu: Store,
) -> Result<(Vec3, f64), SphError> {
    if pi.density == 0.0 {
        return Err(SphError::ZeroDensity(i));
    }
    let mut acc = ForceAcc::default();
    for (j, pj) in neighbours.iter().enumerate() {
        if pj.density == 0.0 {
            return Err(SphError::ZeroDensity(j));
        }
        force_pair(&mut acc, pi, pj, sa, sdu);
    }
    let du = pi.pressure / (pi.density * pi.density) * acc.div;
    Ok((acc.a, du))
}

pub fn kick(p: &mut ParticleState, dt: f64) {
    for k in 0..3 {
        p.velocity[k] += p.acceleration[k] * dt;
    }
    p.internal_energy = (p.internal_energy + p.energy_rate * dt).max(0.0);
}

pub fn drift(p: &mut ParticleState, dt: f64) {
    for k in 0..3 {
        p.position[k] += p.velocity[k] * dt;
    }
}

// ---------------------------------------------------------------------------
// loop drivers over packed views

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    Density,
    Force,
    Kick,
    Drift,
    /// Touches nothing; used to check that pipelines are lossless.
    Identity,
}

impl KernelKind {
    pub const TIMESTEP: [KernelKind; 4] = [
        KernelKind::Density,
        KernelKind::Force,
        KernelKind::Kick,
        KernelKind::Drift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Density => "density",
            KernelKind::Force => "force",
            KernelKind::Kick => "kick",
            KernelKind::Drift => "drift",
            KernelKind::Identity => "identity",
        }
    }

    pub fn is_quadratic(self) -> bool {
        matches!(self, KernelKind::Density | KernelKind::Force)
    }

    pub fn reads(self) -> &'static [Attr] {
        use Attr::*;
        match self {
            KernelKind::Density => &[Position, Mass, SmoothingLength],
            KernelKind::Force => &[Position, Velocity, Mass, SmoothingLength, Density, Pressure],
            KernelKind::Kick => &[Velocity, InternalEnergy, Acceleration, EnergyRate],
            KernelKind::Drift => &[Position, Velocity],
            KernelKind::Identity => &[],
        }
    }

    pub fn writes(self) -> &'static [Attr] {
        use Attr::*;
        match self {
            KernelKind::Density => &[Density],
            KernelKind::Force => &[Acceleration, EnergyRate],
            KernelKind::Kick => &[Velocity, InternalEnergy],
            KernelKind::Drift => &[Position],
            KernelKind::Identity => &[],
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "density" => Ok(KernelKind::Density),
            "force" => Ok(KernelKind::Force),
            "kick" => Ok(KernelKind::Kick),
            "drift" => Ok(KernelKind::Drift),
            "identity" => Ok(KernelKind::Identity),
            _ => Err(format!("unknown kernel `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub dt: f64,
    pub writeback: Writeback,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            dt: 1e-3,
            writeback: Writeback::Deferred,
        }
    }
}

/// Carried-field positions of each attribute in one view.
#[derive(Debug, Clone)]
pub struct AttrMap {
    pos: [Option<usize>; 12],
}

impl AttrMap {
    pub fn of(buf: &PackedBuffer) -> Self {
        let mut pos = [None; 12];
        for (i, a) in Attr::ALL.iter().enumerate() {
            pos[i] = buf.position_of(a.field_name());
        }
        AttrMap { pos }
    }

    fn get(&self, a: Attr) -> Option<usize> {
        self.pos[a as usize]
    }

    pub fn require(&self, attrs: &[Attr], kernel: KernelKind) -> Result<(), SphError> {
        for &a in attrs {
            if self.get(a).is_none() {
                return Err(SphError::MissingField(a.field_name(), kernel));
            }
        }
        Ok(())
    }
}

/// Decode the listed attributes of record `r`; others stay zero.
pub fn load(buf: &PackedBuffer, map: &AttrMap, r: usize, attrs: &[Attr]) -> ParticleState {
    let mut p = ParticleState::default();
    for &a in attrs {
        if let Some(pos) = map.get(a) {
            if a == Attr::Id {
                p.id = buf.int_value(pos, r);
                continue;
            }
            let mut v = [0.0; 3];
            for (lane, slot) in v.iter_mut().enumerate().take(a.lanes() as usize) {
                *slot = buf.value(pos, r, lane as u32);
            }
            a.set(&mut p, v);
        }
    }
    p
}

/// Encode the listed attributes of `p` into record `r`.
pub fn store(buf: &mut PackedBuffer, map: &AttrMap, r: usize, p: &ParticleState, attrs: &[Attr]) {
    for &a in attrs {
        if let Some(pos) = map.get(a) {
            if a == Attr::Id {
                buf.set_int(pos, r, p.id);
                continue;
            }
            let v = a.get(p);
            for lane in 0..a.lanes() {
                buf.set_value(pos, r, lane, v[lane as usize]);
            }
        }
    }
}

/// Load every record of a view in full.
pub fn load_all(buf: &PackedBuffer) -> Vec<ParticleState> {
    let map = AttrMap::of(buf);
    (0..buf.count())
        .map(|r| load(buf, &map, r, &Attr::ALL))
        .collect()
}

/// Store every attribute of `states` into a (full) view.
pub fn store_all(buf: &mut PackedBuffer, states: &[ParticleState]) {
    let map = AttrMap::of(buf);
    for (r, p) in states.iter().enumerate() {
        store(buf, &map, r, p, &Attr::ALL);
    }
}

fn store_policy(buf: &PackedBuffer, map: &AttrMap, a: Attr, wb: Writeback) -> Store {
    match wb {
        Writeback::Deferred => Store(None),
        Writeback::PerAccess => Store(
            map.get(a)
                .and_then(|pos| buf.schema().field(buf.fields()[pos]).precision()),
        ),
    }
}

/// Apply a linear kernel to every record in ascending order.
pub fn call_linear(
    kind: KernelKind,
    view: &mut PackedBuffer,
    params: &KernelParams,
) -> Result<(), SphError> {
    let map = AttrMap::of(view);
    map.require(kind.reads(), kind)?;
    map.require(kind.writes(), kind)?;
    for r in 0..view.count() {
        let mut p = load(view, &map, r, kind.reads());
        match kind {
            KernelKind::Kick => kick(&mut p, params.dt),
            KernelKind::Drift => drift(&mut p, params.dt),
            KernelKind::Identity => {}
            KernelKind::Density | KernelKind::Force => unreachable!("quadratic kernel"),
        }
        store(view, &map, r, &p, kind.writes());
    }
    Ok(())
}

/// Apply a pair kernel for every ordered pair `(i, j)`, `i` outer, `j` inner,
/// both ascending. `j_view` of `None` means the i-view interacts with itself.
pub fn call_quadratic(
    kind: KernelKind,
    i_view: &mut PackedBuffer,
    j_view: Option<&PackedBuffer>,
    params: &KernelParams,
) -> Result<(), SphError> {
    let imap = AttrMap::of(i_view);
    imap.require(kind.reads(), kind)?;
    imap.require(kind.writes(), kind)?;
    // writes and reads of each pair kernel are disjoint, so the neighbour
    // side can be decoded once up front
    let neighbours: Vec<ParticleState> = match j_view {
        Some(jv) => {
            let jmap = AttrMap::of(jv);
            jmap.require(kind.reads(), kind)?;
            (0..jv.count())
                .map(|r| load(jv, &jmap, r, kind.reads()))
                .collect()
        }
        None => (0..i_view.count())
            .map(|r| load(i_view, &imap, r, kind.reads()))
            .collect(),
    };
    call_quadratic_on(kind, i_view, &imap, &neighbours, params)
}

/// [`call_quadratic`] against already decoded neighbours.
pub fn call_quadratic_on(
    kind: KernelKind,
    i_view: &mut PackedBuffer,
    imap: &AttrMap,
    neighbours: &[ParticleState],
    params: &KernelParams,
) -> Result<(), SphError> {
    let rows = 0..i_view.count();
    call_quadratic_rows(kind, i_view, imap, neighbours, params, rows)
}

/// Outer loop restricted to `rows` of the i-view.
pub fn call_quadratic_rows(
    kind: KernelKind,
    i_view: &mut PackedBuffer,
    imap: &AttrMap,
    neighbours: &[ParticleState],
    params: &KernelParams,
    rows: std::ops::Range<usize>,
) -> Result<(), SphError> {
    match kind {
        KernelKind::Density => {
            let s = store_policy(i_view, imap, Attr::Density, params.writeback);
            for i in rows {
                let mut pi = load(i_view, imap, i, kind.reads());
                pi.density = neighbours
                    .iter()
                    .fold(s.apply(0.0), |acc, pj| density_pair(acc, &pi, pj, s));
                store(i_view, imap, i, &pi, kind.writes());
            }
        }
        KernelKind::Force => {
            let sa = store_policy(i_view, imap, Attr::Acceleration, params.writeback);
            let sdu = store_policy(i_view, imap, Attr::EnergyRate, params.writeback);
            for i in rows {
                let mut pi = load(i_view, imap, i, kind.reads());
                let (a, du) = force_with(&pi, i, neighbours, sa, sdu)?;
                pi.acceleration = a;
                pi.energy_rate = du;
                store(i_view, imap, i, &pi, kind.writes());
            }
        }
        KernelKind::Identity => {}
        KernelKind::Kick | KernelKind::Drift => return call_linear(kind, i_view, params),
    }
    Ok(())
}

/// Dispatch on kernel arity; quadratic kernels interact the view with itself.
pub fn run_kernel(
    kind: KernelKind,
    view: &mut PackedBuffer,
    params: &KernelParams,
) -> Result<(), SphError> {
    if kind.is_quadratic() {
        call_quadratic(kind, view, None, params)
    } else {
        call_linear(kind, view, params)
    }
}

// ---------------------------------------------------------------------------
// initial conditions

/// Deterministic particle population, grouped into spatially compact
/// buffers of `buffer_size` particles. Buffer `b` fills grid cell `b` of a
/// unit box divided into `ceil(cbrt(buffers))^3` cells.
pub fn generate(
    count: usize,
    buffer_size: usize,
    seed: u64,
    dt: f64,
) -> Result<Vec<Vec<ParticleState>>, SphError> {
    if buffer_size == 0 || !count.is_multiple_of(buffer_size) {
        return Err(SphError::Input(format!(
            "buffer size {buffer_size} does not divide particle count {count}"
        )));
    }
    let buffers = count / buffer_size;
    let cells = (buffers as f64).cbrt().ceil().max(1.0) as usize;
    let side = 1.0 / cells as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(buffers);
    for b in 0..buffers {
        let origin = [
            (b % cells) as f64 * side,
            ((b / cells) % cells) as f64 * side,
            (b / (cells * cells)) as f64 * side,
        ];
        let mut buf = Vec::with_capacity(buffer_size);
        for k in 0..buffer_size {
            let mut p = ParticleState {
                id: (b * buffer_size + k) as i64,
                mass: rng.gen_range(0.8..1.2) / count as f64,
                smoothing_length: 0.6 * side * rng.gen_range(0.9..1.1),
                internal_energy: rng.gen_range(0.5..1.5),
                timestep: dt,
                ..Default::default()
            };
            for d in 0..3 {
                p.position[d] = origin[d] + side * rng.gen::<f64>();
                p.velocity[d] = rng.gen_range(-1.0..1.0);
            }
            buf.push(p);
        }
        out.push(buf);
    }
    prime(&mut out)?;
    Ok(out)
}

/// Parse `id,x0,x1,x2,v0,v1,v2,u,m,h` rows (an optional header row is skipped)
/// and group consecutive rows into buffers.
pub fn from_csv(
    text: &str,
    buffer_size: usize,
    dt: f64,
) -> Result<Vec<Vec<ParticleState>>, SphError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut states = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SphError::Input(e.to_string()))?;
        if line == 0 && rec.get(0).is_some_and(|f| f.parse::<i64>().is_err()) {
            continue;
        }
        if rec.len() != 10 {
            return Err(SphError::Input(format!(
                "row {}: expected 10 columns, got {}",
                line + 1,
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64, SphError> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| SphError::Input(format!("row {}, column {}: {e}", line + 1, i + 1)))
        };
        let p = ParticleState {
            id: rec[0]
                .parse()
                .map_err(|e| SphError::Input(format!("row {}: id: {e}", line + 1)))?,
            position: [num(1)?, num(2)?, num(3)?],
            velocity: [num(4)?, num(5)?, num(6)?],
            internal_energy: num(7)?,
            mass: num(8)?,
            smoothing_length: num(9)?,
            timestep: dt,
            ..Default::default()
        };
        if !(p.mass > 0.0 && p.smoothing_length > 0.0) {
            return Err(SphError::Input(format!(
                "row {}: mass and h must be positive",
                line + 1
            )));
        }
        states.push(p);
    }
    if buffer_size == 0 || states.is_empty() || states.len() % buffer_size != 0 {
        return Err(SphError::Input(format!(
            "buffer size {buffer_size} does not divide particle count {}",
            states.len()
        )));
    }
    let mut out: Vec<Vec<ParticleState>> = states.chunks(buffer_size).map(<[_]>::to_vec).collect();
    prime(&mut out)?;
    Ok(out)
}

/// Fill density, pressure and sound speed in binary64 (self-interaction per buffer).
pub fn prime(buffers: &mut [Vec<ParticleState>]) -> Result<(), SphError> {
    for buf in buffers {
        let snapshot = buf.clone();
        for p in buf.iter_mut() {
            p.density = density_of(p, &snapshot);
            let (pr, cs) = eos(p.density, p.internal_energy)?;
            p.pressure = pr;
            p.sound_speed = cs;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::MemorySpace;
    use crate::layout::{aos_to_soa, unpack};
    use crate::schema::particle_document;
    use std::sync::Arc;

    fn particle(pos: Vec3) -> ParticleState {
        ParticleState {
            position: pos,
            mass: 1.0,
            smoothing_length: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(w(0.0, 1.0), std::f64::consts::FRAC_1_PI);
        assert_eq!(w(2.0, 1.0), 0.0);
        assert_eq!(w(2.5, 1.0), 0.0);
        assert_eq!(w(0.5, 1.0), 0.71875 / std::f64::consts::PI);
        assert_eq!(grad_w([0.0; 3], 1.0), [0.0; 3]);
        // gradient points back toward the origin
        let g = grad_w([0.5, 0.0, 0.0], 1.0);
        assert!(g[0] < 0.0 && g[1] == 0.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for &h in &[0.3, 1.0, 2.5] {
            for k in 1..40 {
                let r = k as f64 * 0.05 * h;
                let eps = 1e-6 * h;
                let fd = (w(r + eps, h) - w(r - eps, h)) / (2.0 * eps);
                assert!(
                    (fd - dw_dr(r, h)).abs() <= 1e-6 * (1.0 / h.powi(4)),
                    "r={r} h={h}"
                );
            }
        }
    }

    #[test]
    fn kernel_is_normalised() {
        // composite Simpson on 4π ∫ W r² dr over [0, 2h]
        for &h in &[0.1, 1.0, 3.0] {
            let n = 20_000;
            let step = 2.0 * h / n as f64;
            let f = |r: f64| 4.0 * std::f64::consts::PI * w(r, h) * r * r;
            let mut sum = f(0.0) + f(2.0 * h);
            for i in 1..n {
                sum += f(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let integral = sum * step / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "h={h}: {integral}");
        }
    }

    #[test]
    fn density_examples() {
        let lone = particle([0.0; 3]);
        assert_eq!(density(0, &[lone]), 1.0 / std::f64::consts::PI);
        let pair = [particle([0.0; 3]), particle([0.5, 0.0, 0.0])];
        let rho = density(0, &pair);
        assert!((rho - 0.5470951168783902).abs() < 1e-15);
        let heavy: Vec<_> = pair
            .iter()
            .map(|p| ParticleState { mass: 2.0, ..*p })
            .collect();
        assert_eq!(density(0, &heavy), 2.0 * rho);
    }

    #[test]
    fn force_examples() {
        let mut p = particle([0.0; 3]);
        p.density = 1.0;
        p.pressure = 1.0;
        assert_eq!(force(0, &[p]).unwrap(), ([0.0; 3], 0.0));

        let mut q = p;
        q.position = [0.3, 0.2, -0.1];
        q.velocity = [0.1, 0.0, 0.0];
        let pair = [p, q];
        let (ai, _) = force(0, &pair).unwrap();
        let (aj, _) = force(1, &pair).unwrap();
        for k in 0..3 {
            assert_eq!(ai[k], -aj[k]);
        }
        let mut z = p;
        z.density = 0.0;
        assert_eq!(force(0, &[z, p]), Err(SphError::ZeroDensity(0)));
        assert_eq!(force(1, &[z, p]), Err(SphError::ZeroDensity(0)));
    }

    #[test]
    fn eos_examples() {
        assert_eq!(eos(1.0, 0.0).unwrap(), (0.0, 0.0));
        let (p, cs) = eos(1.0, 1.0).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert!((cs - (10.0f64 / 9.0).sqrt()).abs() < 1e-15);
        assert_eq!(eos(2.0, 3.0).unwrap().0, 3.0 * eos(2.0, 1.0).unwrap().0);
        assert!(eos(0.0, 1.0).is_err());
        assert!(eos(-1.0, 1.0).is_err());
    }

    #[test]
    fn linear_updates() {
        let mut p = ParticleState {
            velocity: [1.0, 0.0, 0.0],
            acceleration: [0.0, 1.0, 0.0],
            ..Default::default()
        };
        let before = p;
        kick(&mut p, 0.0);
        drift(&mut p, 0.0);
        assert_eq!(p, before);
        kick(&mut p, 0.5);
        assert_eq!(p.velocity, [1.0, 0.5, 0.0]);

        let mut d = ParticleState {
            velocity: [1.0, 2.0, 3.0],
            ..Default::default()
        };
        drift(&mut d, 0.1);
        assert_eq!(d.position, [0.1, 0.2, 0.30000000000000004]);

        let mut cool = ParticleState {
            internal_energy: 0.1,
            energy_rate: -10.0,
            ..Default::default()
        };
        kick(&mut cool, 1.0);
        assert_eq!(cool.internal_energy, 0.0);
    }

    fn population() -> (Arc<crate::schema::RecordSchema>, Vec<ParticleState>) {
        let states = generate(64, 64, 3, 1e-3).unwrap().remove(0);
        (Arc::new(particle_document().schema), states)
    }

    #[test]
    fn views_agree_across_layouts() {
        let (schema, states) = population();
        let mut aos = PackedBuffer::new(schema, 64, MemorySpace::Host);
        store_all(&mut aos, &states);
        let mut soa = aos_to_soa(&aos).unwrap();
        let mut native = unpack(&aos_to_soa(&aos).unwrap()).unwrap();
        let params = KernelParams::default();
        for k in KernelKind::TIMESTEP {
            run_kernel(k, &mut aos, &params).unwrap();
            run_kernel(k, &mut soa, &params).unwrap();
            run_kernel(k, &mut native, &params).unwrap();
        }
        assert_eq!(load_all(&aos), load_all(&soa));
        assert_eq!(load_all(&aos), load_all(&native));
    }

    #[test]
    fn missing_fields_are_reported() {
        let (schema, _) = population();
        let aos = PackedBuffer::new(schema, 4, MemorySpace::Host);
        let drift_set = particle_document()
            .kernels
            .into_iter()
            .find(|k| k.kernel == "drift")
            .unwrap();
        let mut view = crate::layout::narrow(&aos, &drift_set).unwrap();
        let err = run_kernel(KernelKind::Density, &mut view, &KernelParams::default()).unwrap_err();
        assert_eq!(err, SphError::MissingField("m", KernelKind::Density));
    }

    #[test]
    fn initial_conditions() {
        assert!(generate(100, 64, 1, 1e-3).is_err());
        let bufs = generate(128, 64, 1, 1e-3).unwrap();
        assert_eq!(bufs.len(), 2);
        assert!(bufs
            .iter()
            .flatten()
            .all(|p| p.density > 0.0 && p.pressure > 0.0));
        assert_eq!(bufs, generate(128, 64, 1, 1e-3).unwrap());
        assert_ne!(bufs, generate(128, 64, 2, 1e-3).unwrap());

        let csv = "id,x0,x1,x2,v0,v1,v2,u,m,h\n0,0,0,0,0,0,0,1,1,1\n1,0.5,0,0,0,0,0,1,1,1\n";
        let b = from_csv(csv, 2, 1e-3).unwrap();
        assert!((b[0][0].density - 0.5470951168783902).abs() < 1e-15);
        assert!(from_csv(csv, 3, 1e-3).is_err());
        assert!(from_csv("0,1,2\n", 1, 1e-3).is_err());
        assert!(from_csv("0,0,0,0,0,0,0,1,-1,1\n", 1, 1e-3).is_err());
    }

    #[test]
    fn writeback_parse() {
        assert_eq!(
            "per-access".parse::<Writeback>().unwrap(),
            Writeback::PerAccess
        );
        assert!("lazy".parse::<Writeback>().is_err());
        assert_eq!("force".parse::<KernelKind>().unwrap(), KernelKind::Force);
    }
}
