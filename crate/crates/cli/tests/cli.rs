use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn doctrans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doctrans")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = doctrans(args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn evaluate_aligned_files_prints_all_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (h, r) = (dir.path().join("hyp.txt"), dir.path().join("ref.txt"));
    std::fs::write(&h, "the cat sat on the mat\na b c d\n").unwrap();
    std::fs::write(&r, "the cat sat on the mat\na b c d\n").unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&["evaluate", "--hyps", s(&h), "--refs", s(&r)])).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["BLEU", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "TER", "segments"] {
        assert!(keys.contains(&k), "missing {k} in {keys:?}");
    }
    assert_eq!(v["BLEU"], 1.0);
    assert_eq!(v["TER"], 0.0);
    assert_eq!(v["segments"], 2);

    let dbg: serde_json::Value =
        serde_json::from_str(&ok(&["evaluate", "--hyps", s(&h), "--refs", s(&r), "--debug"])).unwrap();
    assert_eq!(dbg["debug"]["precisions"].as_array().unwrap().len(), 4);
}

#[test]
fn misaligned_files_are_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (h, r) = (dir.path().join("hyp.txt"), dir.path().join("ref.txt"));
    std::fs::write(&h, "one\ntwo\n").unwrap();
    std::fs::write(&r, "one\n").unwrap();
    assert_eq!(doctrans(&["evaluate", "--hyps", s(&h), "--refs", s(&r)]).status.code(), Some(4));
}

#[test]
fn exit_codes_for_usage_and_config_errors() {
    assert_eq!(doctrans(&["no-such-command"]).status.code(), Some(2));
    let out = doctrans(&["translate-image", "missing.png"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
    assert_eq!(doctrans(&["evaluate"]).status.code(), Some(3));
    assert_eq!(doctrans(&["ocr-health", "--engine", "mock"]).status.code(), Some(3));
}

#[test]
fn ocr_health_reports_each_engine() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.json");
    std::fs::write(&table, "{}").unwrap();
    let out = ok(&["ocr-health", "--engine", "mock", "--mock-table", s(&table)]);
    assert!(out.starts_with("mock:"), "{out}");

    let ext = doctrans(&["ocr-health", "--engine", "external"]);
    let have_engine = Command::new("tesseract").arg("--version").output().is_ok();
    assert_eq!(ext.status.success(), have_engine);
    if !have_engine {
        assert_eq!(ext.status.code(), Some(5));
    }
}

#[test]
fn gen_data_writes_images_and_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let assets = assets();
    let args = ["gen-data", "--n", "3", "--assets", s(&assets), "--canvas", "96", "--seed", "5", "--out"];
    ok(&[&args[..], &[s(&data)]].concat());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 3);

    // same seed, same bytes
    let again = dir.path().join("again");
    ok(&[&args[..], &[s(&again)]].concat());
    assert_eq!(
        std::fs::read(data.join("manifest.json")).unwrap(),
        std::fs::read(again.join("manifest.json")).unwrap()
    );

    let csv = dir.path().join("corpus.csv");
    ok(&["gen-data", "--kind", "corpus", "--n", "5", "--directions", "en-fr,de-en", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn train_and_translate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    ok(&["gen-data", "--kind", "corpus", "--n", "12", "--directions", "en-fr", "--out", s(&p("corpus.csv"))]);
    ok(&[
        "train-translator",
        "--corpus",
        s(&p("corpus.csv")),
        "--tiny",
        "--epochs",
        "1",
        "--min-freq",
        "1",
        "--out",
        s(&p("nmt")),
    ]);
    for f in ["src.vocab", "tgt.vocab", "translator.ckpt", "loss.csv"] {
        assert!(p("nmt").join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(p("nmt/loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,train_loss,val_loss"));

    let nmt = p("nmt");
    let (ckpt, sv, tv) = (nmt.join("translator.ckpt"), nmt.join("src.vocab"), nmt.join("tgt.vocab"));
    let tr = [
        "translate-text",
        "--checkpoint",
        s(&ckpt),
        "--src-vocab",
        s(&sv),
        "--tgt-vocab",
        s(&tv),
        "--from",
        "en",
        "--to",
        "fr",
        "--text",
    ];
    // an untrained model may emit anything, but must emit it deterministically
    let first = ok(&[&tr[..], &["the cat"]].concat());
    assert_eq!(first, ok(&[&tr[..], &["the cat"]].concat()));
    assert_eq!(ok(&[&tr[..], &["   "]].concat()).trim(), "");

    // swapping vocabularies breaks the recorded hashes
    let swapped = doctrans(&[
        "translate-text",
        "--checkpoint",
        s(&ckpt),
        "--src-vocab",
        s(&tv),
        "--tgt-vocab",
        s(&sv),
        "--from",
        "en",
        "--to",
        "fr",
        "--text",
        "the cat",
    ]);
    assert_eq!(swapped.status.code(), Some(4));

    ok(&[
        "gen-data",
        "--n",
        "4",
        "--assets",
        s(&assets()),
        "--canvas",
        "64",
        "--languages",
        "fr",
        "--max-words",
        "2",
        "--out",
        s(&p("images")),
    ]);
    ok(&[
        "train-detector",
        "--data",
        s(&p("images")),
        "--size",
        "64",
        "--depth",
        "1",
        "--base",
        "4",
        "--epochs",
        "1",
        "--batch",
        "2",
        "--out",
        s(&p("det")),
    ]);
    assert!(p("det/detector.ckpt").exists());

    std::fs::write(p("table.json"), "{}").unwrap();
    let cfg = serde_json::json!({
        "detector_checkpoint": p("det/detector.ckpt"),
        "translator_checkpoint": nmt.join("translator.ckpt"),
        "src_vocab": nmt.join("src.vocab"),
        "tgt_vocab": nmt.join("tgt.vocab"),
        "recognizer": {"engine": "mock", "mock_table": p("table.json")},
        "source_language": "en",
        "target_language": "fr"
    });
    std::fs::write(p("pipeline.json"), cfg.to_string()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("images/manifest.json")).unwrap()).unwrap();
    let image = p("images").join(manifest[0]["image"].as_str().unwrap());
    let conf = s(&p("pipeline.json")).to_string();
    let boxes: serde_json::Value = serde_json::from_str(&ok(&["detect", s(&image), "--config", &conf])).unwrap();
    assert!(boxes.is_array());
    let only: serde_json::Value =
        serde_json::from_str(&ok(&["translate-image", s(&image), "--boxes-only", "--config", &conf])).unwrap();
    assert_eq!(only, boxes);
    let full: serde_json::Value = serde_json::from_str(&ok(&["translate-image", s(&image), "--config", &conf])).unwrap();
    for k in ["boxes", "recognized", "source_text", "translated_text", "timings"] {
        assert!(full.get(k).is_some(), "missing {k}");
    }
    assert_eq!(ok(&["ocr-health", "--config", &conf]).trim(), "mock: mock recognizer with 0 entries");
}
