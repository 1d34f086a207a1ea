use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "controller.hidden_size=16",
    "controller.epochs=2",
    "controller.validation_trials=8",
    "dataset.n_trials=120",
    "dataset.min_trials=10",
    "gnocchi.aux_encoder_hidden_size=8",
    "gnocchi.noise_predictor_hidden_size=8",
    "gnocchi.diffusion_steps=10",
    "gnocchi.max_epochs=2",
    "lfads.ic_encoder_dim=8",
    "lfads.generator_dim=8",
    "lfads.factor_dim=4",
    "lfads.max_epochs=2",
    "run.cv_folds=3",
    "run.sweep_steps=4",
    "run.samples_per_condition=1",
];

fn gnocchi(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gnocchi"));
    cmd.env("GNOCCHI_OUT", out).env("RUST_LOG", "warn").args(args);
    for s in TINY {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnocchi(dir.path(), &["synth-data", "--bogus"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnocchi(dir.path(), &["train", "lfads", "--data", "/nonexistent/heldin.gnc"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/heldin.gnc"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnocchi(dir.path(), &["synth-data", "--set", "gnocchi.bogus=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gnocchi.bogus"));
}

#[test]
fn synth_data_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&gnocchi(a.path(), &["synth-data", "--seed", "7"]));
    ok(&gnocchi(b.path(), &["synth-data", "--seed", "7"]));
    for f in ["dataset.gnc", "heldin.gnc", "heldout.gnc", "controller.gnc"] {
        let x = std::fs::read(a.path().join("synth-data").join(f)).unwrap();
        let y = std::fs::read(b.path().join("synth-data").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let prov = std::fs::read_to_string(a.path().join("synth-data/provenance.json")).unwrap();
    assert!(prov.contains("config_sha256"));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&gnocchi(out, &["synth-data", "--seed", "3"]));
    let data = out.join("synth-data");
    let heldin = data.join("heldin.gnc");
    let heldin = heldin.to_str().unwrap();
    let heldout = data.join("heldout.gnc");
    let heldout = heldout.to_str().unwrap();

    ok(&gnocchi(out, &["train", "gnocchi", "--data", heldin]));
    ok(&gnocchi(out, &["train", "lfads", "--data", heldin]));
    let g = out.join("train-gnocchi/model.gnc");
    let l = out.join("train-lfads/model.gnc");
    let (g, l) = (g.to_str().unwrap(), l.to_str().unwrap());

    let o = gnocchi(out, &["metrics", "--model", g, "--model", l, "--data", heldin, "--heldout", heldout]);
    ok(&o);
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("orthogonality_p = "), "{report}");
    assert!(report.contains("unintended_p = "), "{report}");
    assert!(out.join("metrics/report.txt").exists());

    ok(&gnocchi(out, &["plot", "codes-pca", "--data", heldin, "--model", g]));
    let svg = std::fs::read_to_string(out.join("plot/codes_pca.svg")).unwrap();
    assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.matches(r#"<g class="group""#).count() >= 2);

    ok(&gnocchi(out, &["sample", "--model", g, "--n", "3"]));
    assert!(out.join("sample/samples.gnc").exists());
    ok(&gnocchi(out, &["navigate", "--model", l, "--data", heldin, "--feature", "target-y"]));
    assert!(out.join("navigate/sweep.svg").exists());
    assert!(out.join("navigate/provenance.json").exists());

    let o = gnocchi(out, &["sample", "--model", heldin]);
    assert!(!o.status.success());
}
