use std::path::Path;
use std::process::{Command, Output};

fn vanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vanet-mac"))
        .args(args)
        .current_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../.."))
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_six_csvs() {
    let out = tempfile::tempdir().unwrap();
    let o = vanet(&[
        "run", "--config", "table2_defaults", "--protocol", "stdma", "--seed", "7", "--scale", "0.02", "--quiet", "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["drops_table", "access_delay_cdf", "consec_drops_cdf", "slot_reuse", "min_distance_cdf", "run_meta"] {
        assert!(out.path().join(format!("{f}.csv")).is_file(), "{f}.csv missing");
    }
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_config_exits_3_naming_the_path() {
    let o = vanet(&["run", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    assert!(e.starts_with("error kind=config:"), "{e}");
    assert!(e.contains("missing.cfg"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);
}

#[test]
fn unknown_flag_exits_2() {
    let o = vanet(&["run", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=usage:"));
}

#[test]
fn unknown_preset_exits_2() {
    let o = vanet(&["reproduce", "fig99"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_scale_exits_3() {
    let o = vanet(&["run", "--scale=-1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_lists_every_flag() {
    let o = vanet(&["run", "--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--out", "--seed", "--protocol", "--scale", "--mobility-tick", "--quiet"] {
        assert!(text.contains(flag), "{flag} not in help");
    }
    let o = vanet(&["sweep", "--help"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("--seeds"));
}

#[test]
fn reproduce_table4_has_ten_rows() {
    let out = tempfile::tempdir().unwrap();
    let o = vanet(&["reproduce", "table4", "--scale", "0.02", "--seeds", "2", "--quiet", "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.path().join("drops_table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("length,rate_hz,range_m,mean_drop_pct,best_pct,worst_pct"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn same_arguments_same_output() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = vanet(&["run", "--config", "cell_300B_10Hz_500m", "--scale", "0.02", "--quiet", "--out", d.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["drops_table", "access_delay_cdf", "consec_drops_cdf", "slot_reuse", "min_distance_cdf"] {
        let name = format!("{f}.csv");
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}
