//! Self-check of a population: codec and operator round trips, kernel
//! oracle, momentum balance and cross-variant agreement.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::arena::Interconnect;
use crate::fpcodec::quantize;
use crate::layout::{aos_to_soa, merge_into, narrow, pack, soa_to_aos, unpack, PackedBuffer};
use crate::pipelines::{
    run_variant, AccessTable, ExecutionMode, PipelineConfig, PipelineVariant, Population,
};
use crate::schema::{KernelAccessSet, RecordSchema};
use crate::sph::{self, KernelKind, KernelParams, ParticleState};

/// Deliberate corruption, each aimed at one check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip a bit of the SoA copy before converting back.
    Layout,
    /// Flip a bit of the first buffer after the `dev-soa` streaming run.
    Variant,
    /// Flip the lowest bit of one computed density.
    Oracle,
    /// Negate one acceleration component after the force pass.
    Momentum,
}

impl FromStr for Fault {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "layout" => Ok(Fault::Layout),
            "variant" => Ok(Fault::Variant),
            "oracle" => Ok(Fault::Oracle),
            "momentum" => Ok(Fault::Momentum),
            _ => Err(format!(
                "unknown fault `{s}` (layout|variant|oracle|momentum)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            passed,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<20} {}  {}",
                c.name,
                if c.passed { "ok  " } else { "FAIL" },
                c.detail
            )?;
        }
        Ok(())
    }
}

fn codec_check(pop: &Population) -> (bool, String) {
    let schema = &pop.schema;
    let mut checked = 0usize;
    for buf in &pop.buffers {
        for (pos, &fi) in buf.fields().iter().enumerate() {
            let Some(spec) = schema.field(fi).precision() else {
                continue;
            };
            for r in 0..buf.count() {
                for lane in 0..schema.field(fi).arity {
                    let x = buf.value(pos, r, lane);
                    if quantize(x, spec).to_bits() != x.to_bits() {
                        return (
                            false,
                            format!(
                                "field `{}` record {r}: {x} not a fixpoint",
                                schema.field(fi).name
                            ),
                        );
                    }
                    checked += 1;
                }
            }
        }
    }
    (
        true,
        format!("{checked} stored values are quantize fixpoints"),
    )
}

fn layout_check(pop: &Population, fault: Option<Fault>) -> (bool, String) {
    let empty = KernelAccessSet::new("none", [], []);
    for (b, buf) in pop.buffers.iter().enumerate() {
        let soa = aos_to_soa(buf).and_then(|mut s| {
            if fault == Some(Fault::Layout) && b == 0 {
                s.data_mut().flip_bit(0);
            }
            soa_to_aos(&s)
        });
        match soa {
            Ok(back) if &back == buf => {}
            Ok(_) => return (false, format!("buffer {b}: AoS -> SoA -> AoS changed bits")),
            Err(e) => return (false, format!("buffer {b}: {e}")),
        }
        let all: Vec<&str> = pop
            .schema
            .fields()
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        let read_all = KernelAccessSet::new("read", all, []);
        let mut merged = buf.clone();
        let ok = narrow(buf, &read_all)
            .and_then(|n| merge_into(&n, &mut merged))
            .is_ok()
            && &merged == buf;
        if !ok || narrow(buf, &empty).is_err() {
            return (
                false,
                format!("buffer {b}: narrow/merge with no writes changed bits"),
            );
        }
        match unpack(buf).and_then(|u| pack(&u)) {
            Ok(p) if &p == buf => {}
            _ => return (false, format!("buffer {b}: pack(unpack(x)) != x")),
        }
    }
    (
        true,
        format!("{} buffers round-trip bit-exactly", pop.buffers.len()),
    )
}

fn naive_density(states: &[ParticleState], i: usize) -> f64 {
    let mut rho = 0.0;
    for pj in states {
        let d = [
            states[i].position[0] - pj.position[0],
            states[i].position[1] - pj.position[1],
            states[i].position[2] - pj.position[2],
        ];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        rho += pj.mass * sph::w(r, 0.5 * (states[i].smoothing_length + pj.smoothing_length));
    }
    rho
}

fn oracle_check(
    native: &RecordSchema,
    states: &[Vec<ParticleState>],
    fault: Option<Fault>,
) -> (bool, String) {
    let pop = Population::from_states(Arc::new(native.clone()), states);
    let params = KernelParams::default();
    for (b, buf) in pop.buffers.iter().enumerate() {
        let mut view = buf.clone();
        if let Err(e) = sph::run_kernel(KernelKind::Density, &mut view, &params) {
            return (false, format!("buffer {b}: {e}"));
        }
        let input = sph::load_all(buf);
        let mut out = sph::load_all(&view);
        if fault == Some(Fault::Oracle) && b == 0 {
            out[0].density = f64::from_bits(out[0].density.to_bits() ^ 1);
        }
        for i in 0..input.len() {
            let want = naive_density(&input, i);
            if out[i].density.to_bits() != want.to_bits() {
                return (
                    false,
                    format!(
                        "buffer {b} record {i}: density {} != {}",
                        out[i].density, want
                    ),
                );
            }
        }
    }
    (
        true,
        format!(
            "density matches a direct double loop on {} buffers",
            pop.buffers.len()
        ),
    )
}

fn momentum_check(
    native: &RecordSchema,
    states: &[Vec<ParticleState>],
    fault: Option<Fault>,
) -> (bool, String) {
    let pop = Population::from_states(Arc::new(native.clone()), states);
    let params = KernelParams::default();
    let mut worst = 0.0f64;
    for (b, buf) in pop.buffers.iter().enumerate() {
        let mut view = buf.clone();
        if let Err(e) = sph::run_kernel(KernelKind::Force, &mut view, &params) {
            return (false, format!("buffer {b}: {e}"));
        }
        let mut ps = sph::load_all(&view);
        if fault == Some(Fault::Momentum) && b == 0 {
            ps[0].acceleration[0] = -ps[0].acceleration[0];
        }
        let mut net = [0.0; 3];
        let mut scale = 0.0;
        for p in &ps {
            for k in 0..3 {
                net[k] += p.mass * p.acceleration[k];
            }
            scale += p.mass.abs() * sph::norm(p.acceleration);
        }
        if scale > 0.0 {
            worst = worst.max(sph::norm(net) / scale);
        }
    }
    (
        worst <= 1e-12,
        format!("max |sum m a| / sum |m||a| = {worst:.3e} (limit 1e-12)"),
    )
}

fn variant_check(pop: &Population, access: &AccessTable, fault: Option<Fault>) -> (bool, String) {
    let mut reference: Option<String> = None;
    for v in PipelineVariant::ALL {
        for mode in ExecutionMode::ALL {
            let cfg = PipelineConfig::new(v, mode);
            let mut out = match run_variant(&cfg, pop, access, &Interconnect::default()) {
                Ok((out, _)) => out,
                Err(e) => return (false, format!("{v} {mode}: {e}")),
            };
            if fault == Some(Fault::Variant)
                && v == PipelineVariant::DevSoa
                && mode == ExecutionMode::Streaming
            {
                out.buffers[0].data_mut().flip_bit(3);
            }
            let sum = out.checksum();
            match &reference {
                None => reference = Some(sum),
                Some(r) if *r != sum => {
                    return (
                        false,
                        format!("{v} {mode}: checksum {} != {}", &sum[..16], &r[..16]),
                    )
                }
                Some(_) => {}
            }
        }
    }
    let r = reference.unwrap_or_default();
    (
        true,
        format!(
            "8 variants x 2 modes agree, checksum {}",
            &r[..16.min(r.len())]
        ),
    )
}

/// Run every check over `states` stored with `schema`. Oracle and momentum
/// checks use the all-binary64 version of the schema.
pub fn validate(
    schema: &RecordSchema,
    states: &[Vec<ParticleState>],
    access: &AccessTable,
    fault: Option<Fault>,
) -> Report {
    let mut report = Report::default();
    let pop = Population::from_states(Arc::new(schema.clone()), states);
    let (ok, d) = codec_check(&pop);
    report.push("codec-fixpoint", ok, d);
    let (ok, d) = layout_check(&pop, fault);
    report.push("operator-roundtrip", ok, d);
    match schema.with_uniform_truncation(64, &[]) {
        Ok(native) => {
            let (ok, d) = oracle_check(&native, states, fault);
            report.push("density-oracle", ok, d);
            let (ok, d) = momentum_check(&native, states, fault);
            report.push("momentum", ok, d);
        }
        Err(e) => report.push("density-oracle", false, e.to_string()),
    }
    let (ok, d) = variant_check(&pop, access, fault);
    report.push("cross-variant", ok, d);
    report
}

/// Hex dump of a buffer's bytes, 16 per line.
pub fn dump(buf: &PackedBuffer) -> String {
    buf.data().to_hex()
}
