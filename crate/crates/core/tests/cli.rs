use std::path::Path;
use std::process::Command;

fn ctqa(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ctqa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ctqa(&["synth", "clean", "--clean", "2", "--per-defect", "0"], d).0, 0);
    assert_eq!(
        ctqa(
            &["synth", "mixed", "--clean", "1", "--per-defect", "1", "--seed", "4"],
            d
        )
        .0,
        0
    );

    let (code, text) = ctqa(&["qa", "--input", "clean", "--output", "out_clean"], d);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("2 scans: 2 pass"), "{text}");

    let (code, text) = ctqa(
        &["qa", "--input", "mixed", "--output", "out_mixed", "--disable", "C7"],
        d,
    );
    assert_eq!(code, 2, "{text}");
    let c7: Vec<_> = text
        .lines()
        .find(|l| l.trim_start().starts_with("C7"))
        .unwrap()
        .split_whitespace()
        .collect();
    assert_eq!(c7, ["C7", "0/0", "n/a"]);
    assert_eq!(ctqa(&["report", "out_mixed"], d).0, 2);

    assert_eq!(ctqa(&["qa", "--input", "clean", "--output", "clean"], d).0, 1);
    assert_eq!(ctqa(&["qa", "--input", "missing", "--output", "o"], d).0, 1);
    assert_eq!(
        ctqa(&["qa", "--input", "clean", "--output", "o", "--delta", "0"], d).0,
        1
    );
    std::fs::write(d.join("bad.toml"), "unknown_key = 3\n").unwrap();
    assert_eq!(ctqa(&["qa", "--config", "bad.toml"], d).0, 1);
}

#[test]
fn single_volume_tools() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ctqa(&["synth", "c", "--clean", "1", "--per-defect", "0"], d).0, 0);
    let (code, text) = ctqa(&["convert", "c/clean_000", "v.nii.gz"], d);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("[96, 96, 100]"), "{text}");
    assert_eq!(ctqa(&["crop", "v.nii.gz", "roi.nii.gz", "--margin", "0.1"], d).0, 0);
    assert_eq!(ctqa(&["gallery", "roi.nii.gz", "m.png", "--tile-size", "64"], d).0, 0);
    let png = std::fs::read(d.join("m.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert_eq!(ctqa(&["convert", "nowhere", "x.nii.gz"], d).0, 1);
}
