use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prmr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prmr"))
        .current_dir(dir)
        .args(["--out", "."])
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn phantom_project_kspace_fbp_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), r#"{ "size": 32, "geometry": { "full_views": 60 } }"#).unwrap();
    for args in [
        &["--config", "c.json", "phantom", "--family", "shepp-logan"][..],
        &["project", "--input", "phantom_0.prmr", "--views", "60"],
        &["kspace", "--input", "sinogram.prmr"],
        &["--config", "c.json", "recon", "fbp", "--input", "kspace.prmr"],
        &[
            "--config",
            "c.json",
            "recon",
            "fbp",
            "--input",
            "sinogram.prmr",
            "--size",
            "32",
        ],
        &["export", "--input", "recon_fbp.prmr", "--window", "0", "1"],
    ] {
        let out = prmr(d, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in [
        "phantom_0.pgm",
        "sinogram.prmr",
        "kspace.prmr",
        "recon_fbp.prmr",
        "recon_fbp.pgm",
    ] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{ "sise": 32 }"#).unwrap();
    fs::write(d.join("neg.json"), r#"{ "tv": { "lambda": -1 } }"#).unwrap();
    fs::write(d.join("junk.prmr"), b"not a container").unwrap();
    for args in [
        &["--config", "bad.json", "phantom"][..],
        &["--config", "neg.json", "phantom"],
        &["--config", "missing.json", "phantom"],
        &["phantom", "--family", "lungs"],
        &["recon", "fbp", "--input", "junk.prmr"],
        &["recon", "net", "--input", "junk.prmr"],
        &["eval", "matrix", "--methods", "fbp,magic", "--no-images"],
        &["no-such-command"],
    ] {
        let out = prmr(d, args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn deterministic_matrix_has_no_timing_column() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("c.json"),
        r#"{ "size": 32, "slices": 1, "eval_views": [15], "geometry": { "full_views": 30 } }"#,
    )
    .unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["--config", "c.json", "--seed", "3"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["eval", "matrix", "--methods", "fbp", "--no-images"]);
        let out = prmr(d, &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(d.join("matrix.csv")).unwrap()
    };
    let timed = run(&[]);
    assert!(timed.starts_with("method,views,slice,nmse,psnr,wall_time_s\n"));
    let det = run(&["--deterministic"]);
    assert!(det.starts_with("method,views,slice,nmse,psnr\n"));
    assert_eq!(det.lines().count(), 3);
}
