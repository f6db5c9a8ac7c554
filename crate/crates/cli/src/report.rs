//! CSV tables and plain-text summaries.

use std::fmt::Write as _;

use anyhow::Result;

use soaforge::arena::LedgerRow;
use soaforge::bench::{KernelRow, PipelineRow, TransformRow};
use soaforge::layout::Layout;
use soaforge::pipelines::{PipelineConfig, RunMetrics};
use soaforge::schema::SchemaDocument;
use soaforge::sph::KernelKind;
use soaforge::study::TruncationRow;

const VERSION_LINE: &str = concat!("# soaforge v", env!("CARGO_PKG_VERSION"), "\n");

fn table<R>(header: &[&str], rows: &[R], cells: impl Fn(&R) -> Vec<String>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(cells(r))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)?;
    Ok(format!("{VERSION_LINE}{body}"))
}

fn secs(x: f64) -> String {
    format!("{x:.6e}")
}

fn layout_name(l: Layout) -> &'static str {
    match l {
        Layout::Aos => "aos",
        Layout::Soa => "soa",
    }
}

pub fn transform_csv(rows: &[TransformRow]) -> Result<String> {
    table(
        &[
            "kernel",
            "placement",
            "precision",
            "particles",
            "convert_s",
            "bytes_moved",
            "modeled_transfer_s",
            "ratio",
        ],
        rows,
        |r| {
            vec![
                r.kernel.clone(),
                r.placement.name().into(),
                r.precision.clone(),
                r.particles.to_string(),
                secs(r.convert_s),
                r.bytes_moved.to_string(),
                secs(r.modeled_transfer_s),
                format!("{:.4}", r.ratio),
            ]
        },
    )
}

pub fn kernels_csv(rows: &[KernelRow]) -> Result<String> {
    table(
        &[
            "kernel",
            "layout",
            "precision",
            "particles",
            "compute_s",
            "speedup_vs_aos",
            "checksum",
        ],
        rows,
        |r| {
            vec![
                r.kernel.name().into(),
                layout_name(r.layout).into(),
                r.precision.clone(),
                r.particles.to_string(),
                secs(r.compute_s),
                format!("{:.4}", r.speedup_vs_aos),
                r.checksum.clone(),
            ]
        },
    )
}

pub fn pipeline_csv(rows: &[PipelineRow]) -> Result<String> {
    let mut header = vec![
        "variant",
        "mode",
        "precision",
        "particles",
        "total_s",
        "convert_s",
        "move_s",
        "compute_s",
        "merge_s",
        "modeled_transfer_s",
        "h2d_bytes",
        "d2h_bytes",
        "transfers",
    ];
    let shares: Vec<String> = KernelKind::TIMESTEP
        .iter()
        .map(|k| format!("{}_share", k.name()))
        .collect();
    header.extend(shares.iter().map(String::as_str));
    header.push("checksum");
    table(&header, rows, |r| {
        let mut v = vec![
            r.variant.name().to_string(),
            r.mode.map_or("-".into(), |m| m.to_string()),
            r.precision.clone(),
            r.particles.to_string(),
            secs(r.total_s),
            secs(r.convert_s),
            secs(r.move_s),
            secs(r.compute_s),
            secs(r.merge_s),
            secs(r.modeled_transfer_s),
            r.h2d_bytes.to_string(),
            r.d2h_bytes.to_string(),
            r.transfers.to_string(),
        ];
        v.extend(r.kernel_share.iter().map(|s| format!("{s:.4}")));
        v.push(r.checksum.clone());
        v
    })
}

pub fn truncation_csv(rows: &[TruncationRow]) -> Result<String> {
    table(&["bits", "rmse_rel", "max_rel"], rows, |r| {
        vec![
            r.bits.to_string(),
            format!("{:.6e}", r.rmse_rel),
            format!("{:.6e}", r.max_rel),
        ]
    })
}

pub fn ledger_csv(rows: &[LedgerRow]) -> Result<String> {
    table(
        &[
            "variant",
            "kernel",
            "direction",
            "bytes",
            "transfers",
            "modeled_time_s",
        ],
        rows,
        |r| {
            vec![
                r.tag.variant.clone(),
                r.tag.kernel.clone(),
                r.direction.to_string(),
                r.bytes.to_string(),
                r.transfers.to_string(),
                secs(r.modeled_time_s),
            ]
        },
    )
}

pub fn transform_summary(rows: &[TransformRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<9} {:>9} {:>12} {:>12} {:>8}",
        "kernel", "placement", "precision", "convert_s", "bytes", "ratio"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:<9} {:>9} {:>12.3e} {:>12} {:>8.3}",
            r.kernel,
            r.placement.name(),
            r.precision,
            r.convert_s,
            r.bytes_moved,
            r.ratio
        );
    }
    s.push_str("transfer times use a synthetic link model\n");
    s
}

pub fn kernels_summary(rows: &[KernelRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<6} {:>9} {:>12} {:>8}  checksum",
        "kernel", "layout", "precision", "compute_s", "speedup"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:<6} {:>9} {:>12.3e} {:>8.3}  {}",
            r.kernel.name(),
            layout_name(r.layout),
            r.precision,
            r.compute_s,
            r.speedup_vs_aos,
            &r.checksum[..16]
        );
    }
    s
}

pub fn pipeline_summary(rows: &[PipelineRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<19} {:<9} {:>9} {:>11} {:>12} {:>6}  checksum",
        "variant", "mode", "precision", "total_s", "bytes", "force"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<19} {:<9} {:>9} {:>11.3e} {:>12} {:>5.1}%  {}",
            r.variant.name(),
            r.mode.map_or("-".into(), |m| m.to_string()),
            r.precision,
            r.total_s,
            r.h2d_bytes + r.d2h_bytes,
            100.0 * r.kernel_share[1],
            &r.checksum[..16]
        );
    }
    s.push_str("transfer times use a synthetic link model\n");
    s
}

pub fn truncation_summary(rows: &[TruncationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>4} {:>12} {:>12}", "bits", "rmse_rel", "max_rel");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>4} {:>12.3e} {:>12.3e}",
            r.bits, r.rmse_rel, r.max_rel
        );
    }
    s
}

pub fn run_summary(cfg: &PipelineConfig, m: &RunMetrics, particles: usize) -> String {
    let mut s = String::new();
    let kernels: Vec<_> = cfg.kernels.iter().map(|k| k.name()).collect();
    let mode = if cfg.variant.is_cpu() {
        "-".to_string()
    } else {
        cfg.mode.to_string()
    };
    let _ = writeln!(s, "variant      {}", cfg.variant);
    let _ = writeln!(s, "mode         {mode}");
    let _ = writeln!(s, "kernels      {}", kernels.join(","));
    let _ = writeln!(s, "particles    {particles}");
    let _ = writeln!(s, "wall_s       {:.3e}", m.wall_s);
    let _ = writeln!(
        s,
        "phases_s     convert {:.3e}  move {:.3e}  compute {:.3e}  merge {:.3e}",
        m.phases.convert_s, m.phases.move_s, m.phases.compute_s, m.phases.merge_s
    );
    let _ = writeln!(
        s,
        "conversions  {} (inner {})",
        m.conversions, m.inner_conversions
    );
    let _ = writeln!(
        s,
        "h2d          {} B in {} transfers",
        m.ledger.h2d.bytes, m.ledger.h2d.transfers
    );
    let _ = writeln!(
        s,
        "d2h          {} B in {} transfers",
        m.ledger.d2h.bytes, m.ledger.d2h.transfers
    );
    let _ = writeln!(
        s,
        "modeled_s    {:.3e} (synthetic link model)",
        m.ledger.modeled_time_s
    );
    let _ = writeln!(s, "checksum     {}", m.checksum);
    s
}

pub fn layout_table(doc: &SchemaDocument, s: &mut String) {
    let schema = &doc.schema;
    let _ = writeln!(
        s,
        "{:<6} {:>5} {:>6} {:>7} {:>7}",
        "field", "lanes", "width", "native", "offset"
    );
    for (i, f) in schema.fields().iter().enumerate() {
        let _ = writeln!(
            s,
            "{:<6} {:>5} {:>6} {:>7} {:>7}",
            f.name,
            f.arity,
            f.stored_width(),
            f.native_width(),
            schema.field_offset(i)
        );
    }
    let _ = writeln!(
        s,
        "record_bits {}  native_record_bits {}",
        schema.record_bits(),
        schema.native_record_bits()
    );
    for k in &doc.kernels {
        let _ = writeln!(s, "{k}");
    }
}
