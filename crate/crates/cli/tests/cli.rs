use std::path::{Path, PathBuf};
use std::process::Command;

use landmap_cli::{run_cli, sha256_file};

const BIN: &str = env!("CARGO_BIN_EXE_landmap");

fn landmap(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small config: four 128 px scenes and 64 px tiles keep every step fast.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "scene": { "width": 128, "height": 128 },
        "scenes": 4,
        "seed": 3,
        "mode": "lu3",
        "tiling": { "tile": 64, "stride": 32 },
        "train": { "epochs": 1, "learning_rate": 0.01, "tile": { "tile": 64, "stride": 32 } },
        "band": 8,
        "output_dir": dir.join("corpus"),
    });
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let (code, _, err) = landmap(&["synth", "--config", "/no/such/dir/c.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("/no/such/dir/c.json"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"scenes": 4, "tile_size": 640}"#).unwrap();
    let (code, _, err) = landmap(&["synth", "--config", s(&path)]);
    assert_eq!(code, 2);
    assert!(err.contains("tile_size"), "{err}");
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run_cli(["landmap", "frobnicate"]), 2);
    assert_eq!(run_cli(["landmap", "infer", "--image"]), 2);
    assert_eq!(run_cli(["landmap", "--help"]), 0);
}

#[test]
fn missing_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    let (code, _, err) = landmap(&[
        "eval",
        "--pred",
        "/no/pred.rstr",
        "--truth",
        "/no/truth.rstr",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("/no/pred.rstr"), "{err}");
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let corpus = d.join("corpus");
    let manifest = corpus.join("manifest.json");

    let (code, stdout, err) = landmap(&["synth", "--config", s(&cfg)]);
    assert_eq!(code, 0, "{err}");
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["config"]["scenes"], 4);
    assert_eq!(summary["config"]["tiling"]["tile"], 64);

    // same config and seed, same corpus
    let again = d.join("again");
    assert_eq!(
        landmap(&["synth", "--config", s(&cfg), "--out", s(&again)]).0,
        0
    );
    assert_eq!(
        sha256_file(&manifest).unwrap(),
        sha256_file(&again.join("manifest.json")).unwrap()
    );

    let model = d.join("lu3.json");
    let (code, _, err) = landmap(&[
        "train",
        "--config",
        s(&cfg),
        "--manifest",
        s(&manifest),
        "--out",
        s(&model),
    ]);
    assert_eq!(code, 0, "{err}");
    let log: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("lu3.log.json")).unwrap()).unwrap();
    assert_eq!(log["log"]["epoch_losses"].as_array().unwrap().len(), 1);
    assert_eq!(log["config"]["mode"], "lu3");

    let image = corpus.join("scene_000.rstr");
    let mut sums = Vec::new();
    for workers in ["1", "8"] {
        let out = d.join(format!("map_w{workers}.rstr"));
        let (code, _, err) = landmap(&[
            "infer",
            "--config",
            s(&cfg),
            "--image",
            s(&image),
            "--model",
            s(&model),
            "--manifest",
            s(&manifest),
            "--workers",
            workers,
            "--out",
            s(&out),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.with_extension("png").exists());
        let run: serde_json::Value = serde_json::from_slice(
            &std::fs::read(d.join(format!("map_w{workers}.summary.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(run["config"]["workers"], workers.parse::<u64>().unwrap());
        assert_eq!(run["run"]["tiles"], 16);
        sums.push(sha256_file(&out).unwrap());
    }
    assert_eq!(sums[0], sums[1]);

    // a model trained on LU3 cannot be fed LU6 inputs
    let (code, _, _) = landmap(&[
        "infer",
        "--image",
        s(&image),
        "--model",
        s(&model),
        "--mode",
        "lu6",
        "--out",
        s(&d.join("x.rstr")),
    ]);
    assert_eq!(code, 2);

    let report = d.join("report.json");
    let truth = corpus.join("scene_000_labels.rstr");
    let (code, _, err) = landmap(&[
        "eval",
        "--config",
        s(&cfg),
        "--pred",
        s(&d.join("map_w1.rstr")),
        "--truth",
        s(&truth),
        "--out",
        s(&report),
    ]);
    assert_eq!(code, 0, "{err}");
    let r = landmap::evaluate::read_report(&report).unwrap();
    assert_eq!(r.class_names.len(), 9);
    assert!(r.overall_accuracy.unwrap() > 0.0);
    assert!(r.metadata["boundary_accuracy"].is_number());
    assert!(report.with_extension("csv").exists());

    // oracle inference reproduces the truth exactly
    let oracle_map = d.join("oracle.rstr");
    let (code, _, err) = landmap(&[
        "infer",
        "--config",
        s(&cfg),
        "--image",
        s(&image),
        "--oracle",
        s(&truth),
        "--out",
        s(&oracle_map),
        "--no-png",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        landmap::classes::read_class_map(&oracle_map).unwrap(),
        landmap::classes::read_class_map(&truth).unwrap()
    );

    let (code, table, err) =
        landmap(&["ablation", "--config", s(&cfg), "--manifest", s(&manifest)]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(corpus.join("ablation.json").exists());
}

#[test]
fn slice_dumps_plan_and_tiles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    assert_eq!(
        landmap(&["synth", "--config", s(&cfg), "--scenes", "2"]).0,
        0
    );
    let out = d.join("slices");
    let image = d.join("corpus/scene_000.rstr");
    let (code, _, err) = landmap(&[
        "slice",
        "--image",
        s(&image),
        "--tile",
        "80",
        "--out",
        s(&out),
        "--tiles",
        "--mode",
        "lu6",
    ]);
    assert_eq!(code, 0, "{err}");
    let plan: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("plan.json")).unwrap()).unwrap();
    let tiles = plan["tiles"].as_array().unwrap();
    assert_eq!(tiles.len(), 16); // ceil(128 / 40) squared
    let first = landmap::raster::read_raster(out.join("tile_r000_c000.rstr")).unwrap();
    assert_eq!((first.width(), first.height(), first.bands()), (80, 80, 6));
}

#[test]
fn unresponsive_backend_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    assert_eq!(
        landmap(&["synth", "--config", s(&cfg), "--scenes", "2"]).0,
        0
    );
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&cfg).unwrap()).unwrap();
    v["backend"] =
        serde_json::json!({ "kind": "external", "command": ["sleep", "30"], "timeout_s": 0.3 });
    let slow = d.join("slow.json");
    std::fs::write(&slow, v.to_string()).unwrap();
    let (code, _, err) = landmap(&[
        "infer",
        "--config",
        s(&slow),
        "--image",
        s(&d.join("corpus/scene_000.rstr")),
        "--out",
        s(&d.join("m.rstr")),
    ]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("no reply"), "{err}");
}

#[test]
fn mismatched_maps_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gt = landmap::raster::GeoTransform::default();
    let a = landmap::classes::ClassMap::filled(10, 10, gt, 1);
    let b = landmap::classes::ClassMap::filled(12, 10, gt, 1);
    landmap::classes::write_class_map(&a, d.join("a.rstr")).unwrap();
    landmap::classes::write_class_map(&b, d.join("b.rstr")).unwrap();
    let (code, _, err) = landmap(&[
        "eval",
        "--pred",
        s(&d.join("a.rstr")),
        "--truth",
        s(&d.join("b.rstr")),
        "--out",
        s(&d.join("r.json")),
    ]);
    assert_eq!(code, 5, "{err}");
}

#[test]
fn readme_example_config_parses() {
    let readme =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md"))
            .unwrap();
    let start = readme.find("```json\n").unwrap() + 8;
    let end = start + readme[start..].find("```").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, &readme[start..end]).unwrap();
    let cfg = landmap_cli::ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.tiling.pad(), 64);
    assert_eq!(cfg.train.learning_rate, 0.01);
}
