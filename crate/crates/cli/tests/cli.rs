use std::fs;
use std::process::{Command, Output};

fn soaforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soaforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn truncation_csv_is_versioned_and_stable() {
    let args = [
        "study",
        "truncation",
        "--particles",
        "512",
        "--precision",
        "64,32,16",
    ];
    let a = soaforge(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# soaforge v0.1.0"));
    assert_eq!(lines.next(), Some("bits,rmse_rel,max_rel"));
    assert_eq!(lines.next(), Some("64,0.000000e0,0.000000e0"));
    assert_eq!(lines.count(), 2);
    let b = soaforge(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_out_of_range_is_rejected() {
    let o = soaforge(&["study", "truncation", "--precision", "64,65"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("65"), "{}", stderr(&o));
    let o = soaforge(&["bench", "kernels", "--precision", "6"]);
    assert!(!o.status.success());
}

#[test]
fn buffer_size_must_divide_count() {
    let o = soaforge(&["study", "truncation", "--particles", "100"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("does not divide"), "{}", stderr(&o));
}

#[test]
fn validate_clean_and_faulted() {
    let o = soaforge(&["validate", "--particles", "128"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
    for (fault, check) in [
        ("layout", "operator-roundtrip"),
        ("variant", "cross-variant"),
    ] {
        let o = soaforge(&["validate", "--particles", "128", "--fault", fault]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains(check), "{}", stderr(&o));
    }
}

#[test]
fn validate_dump_is_hex() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.txt");
    let o = soaforge(&[
        "validate",
        "--particles",
        "64",
        "--dump",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // 64 records of 704 bits
    assert_eq!(lines.len(), 64 * 88 / 16);
    for l in &lines {
        let bytes: Vec<&str> = l.split(' ').collect();
        assert_eq!(bytes.len(), 16);
        assert!(bytes
            .iter()
            .all(|b| b.len() == 2 && u8::from_str_radix(b, 16).is_ok()));
    }
}

#[test]
fn mode_with_cpu_variant_is_rejected() {
    let o = soaforge(&["run", "--variant", "cpu-soa", "--mode", "streaming"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("cpu-soa"));
    let o = soaforge(&[
        "bench",
        "pipeline",
        "--variant",
        "cpu-baseline,dev-soa",
        "--mode",
        "inplace",
    ]);
    assert!(!o.status.success());
}

#[test]
fn run_writes_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.csv");
    let cfg = dir.path().join("pipe.cfg");
    fs::write(&cfg, "variant=dev-soa mode=streaming kernels=kick\n").unwrap();
    let o = soaforge(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--ledger",
        ledger.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("h2d          131072 B in 64 transfers"),
        "{}",
        stdout(&o)
    );
    let text = fs::read_to_string(&ledger).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# soaforge v0.1.0");
    assert_eq!(
        lines[1],
        "variant,kernel,direction,bytes,transfers,modeled_time_s"
    );
    assert!(
        lines[2].starts_with("dev-soa,streaming/kick,h2d,131072,64,"),
        "{}",
        lines[2]
    );
    assert!(
        lines[3].starts_with("dev-soa,streaming/kick,d2h,131072,64,"),
        "{}",
        lines[3]
    );
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipe.cfg");
    fs::write(&cfg, "variant=dev-soa mode=streaming kernels=kick\n").unwrap();
    let o = soaforge(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "inplace",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("h2d          360448 B in 64 transfers"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn pipeline_bench_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pipeline.csv");
    let o = soaforge(&[
        "bench",
        "pipeline",
        "--particles",
        "256",
        "--precision",
        "32",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("synthetic"));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 13);
    let checksum = rows[0].last().unwrap();
    assert!(rows.iter().all(|r| r.last().unwrap() == checksum));
}

#[test]
fn unwritable_output_fails() {
    let o = soaforge(&[
        "bench",
        "kernels",
        "--particles",
        "64",
        "--out",
        "/nonexistent/dir/k.csv",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("writing"));
}

#[test]
fn custom_schema_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("p.prec");
    let text = soaforge::schema::PARTICLE_SCHEMA
        .replace("field rho : f32;", "field rho : f32 @truncate(20);");
    fs::write(&good, text).unwrap();
    let o = soaforge(&["schema", "--schema", good.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("record_bits 692"), "{}", stdout(&o));

    let bad = dir.path().join("bad.prec");
    fs::write(&bad, "schema s {\n    field a : f16;\n}\n").unwrap();
    let o = soaforge(&["schema", "--schema", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("2:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("f16"), "{}", stderr(&o));
}

#[test]
fn csv_initial_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let init = dir.path().join("init.csv");
    let mut text = String::from("id,x0,x1,x2,v0,v1,v2,u,m,h\n");
    for i in 0..64 {
        let f = i as f64;
        text.push_str(&format!(
            "{i},{},{},{},0.1,0,0,1.0,0.015625,0.2\n",
            (f * 0.37) % 1.0,
            (f * 0.61) % 1.0,
            (f * 0.83) % 1.0
        ));
    }
    fs::write(&init, text).unwrap();
    let o = soaforge(&[
        "run",
        "--init",
        init.to_str().unwrap(),
        "--variant",
        "cpu-soa",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("particles    64"));
}
