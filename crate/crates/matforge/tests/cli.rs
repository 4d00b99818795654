use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use matforge::formats::Checkpoint;
use serde_json::Value;
use tempfile::TempDir;

const PROMPTS: &str = "gold\nrough stone\ngreen glass\npolished wood\nrusty iron\nwhite marble\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_matforge"));
    c.env_remove("MATFORGE_CONFIG").env("RUST_LOG", "warn");
    c
}

fn fixture() -> String {
    concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/fake_adapter.py"
    )
    .to_string()
}

/// Temp dir holding a small, fast config and a prompt list.
struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Self::with_provider(serde_json::json!({"kind": "mock", "dim": 32, "seed": 7}))
    }

    fn with_provider(provider: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({
            "provider": provider,
            "hidden_layers": [16],
            "render": {"width": 32, "height": 32},
            "train": {
                "steps": 6,
                "supervised_batch": 2,
                "unsupervised_batch": 2,
                "learning_rate": 0.01,
                "render": {"width": 16, "height": 16}
            },
            "retry": {"attempts": 2, "initial_delay_ms": 5, "max_delay_ms": 10}
        });
        std::fs::write(dir.path().join("config.json"), cfg.to_string()).unwrap();
        std::fs::write(dir.path().join("prompts.txt"), PROMPTS).unwrap();
        Work { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cmd(&self) -> Command {
        let mut c = bin();
        c.arg("--config").arg(self.path("config.json"));
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd().args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn train(&self, extra: &[&str]) -> Output {
        let prompts = self.path("prompts.txt");
        let mut args = vec!["train", "--prompts", prompts.to_str().unwrap()];
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn infer_is_byte_identical_across_runs() {
    let w = Work::new();
    let a = w.ok(&[
        "infer",
        "--prompt",
        "shiny gold",
        "--preview",
        s(&w.path("a.png")),
    ]);
    let b = w.ok(&[
        "infer",
        "--prompt",
        "shiny gold",
        "--preview",
        s(&w.path("b.png")),
    ]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(
        std::fs::read(w.path("a.png")).unwrap(),
        std::fs::read(w.path("b.png")).unwrap()
    );
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(doc["prompt"], "shiny gold");
    assert_eq!(doc["values"].as_array().unwrap().len(), 13);
}

#[test]
fn config_can_come_from_the_environment() {
    let w = Work::new();
    let a = w.ok(&["infer", "--prompt", "wood"]);
    let b = bin()
        .env("MATFORGE_CONFIG", w.path("config.json"))
        .args(["infer", "--prompt", "wood"])
        .output()
        .unwrap();
    assert_eq!(a.stdout, b.stdout);
    let c = w
        .cmd()
        .env("MATFORGE_RETRIEVAL__K", "1")
        .args(["infer", "--prompt", "wood"])
        .output()
        .unwrap();
    assert!(c.status.success());
    assert_ne!(a.stdout, c.stdout);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

#[test]
fn http_and_cli_materials_are_identical() {
    let w = Work::new();
    let port = free_port();
    let _server = Server(
        w.cmd()
            .args(["serve", "--port", &port.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let base = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        if ureq::get(&format!("{base}/api/health")).call().is_ok() {
            break;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
    for prompt in ["shiny gold", "rough dark stone"] {
        let body = serde_json::json!({ "prompt": prompt }).to_string();
        let text = ureq::post(&format!("{base}/api/material"))
            .header("content-type", "application/json")
            .send(body)
            .unwrap()
            .into_body()
            .read_to_string()
            .unwrap();
        let http: Value = serde_json::from_str(&text).unwrap();
        let cli: Value =
            serde_json::from_slice(&w.ok(&["infer", "--prompt", prompt]).stdout).unwrap();
        assert_eq!(http["values"], cli["values"]);
        assert_eq!(http["material"], cli["material"]);
    }
}

#[test]
fn scene_init_writes_files_and_manifest_deterministically() {
    let w = Work::new();
    std::fs::write(
        w.path("scene.txt"),
        "A rough stone floor beside a polished gold statue, near dark wood.",
    )
    .unwrap();
    let mut listings = Vec::new();
    for out in ["s1", "s2"] {
        let o = w.ok(&[
            "scene-init",
            "--text",
            s(&w.path("scene.txt")),
            "--out",
            s(&w.path(out)),
        ]);
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("extracted 3 material prompts"));
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(w.path(out))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().into_string().unwrap(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        listings.push(files);
    }
    assert_eq!(listings[0], listings[1]);
    let names: Vec<&str> = listings[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "01_rough_stone.mdl",
            "02_polished_gold.mdl",
            "03_dark_wood.mdl",
            "manifest.json"
        ]
    );
    let manifest: Value = serde_json::from_slice(&listings[0][3].1).unwrap();
    assert_eq!(manifest["materials"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["materials"][1]["prompt"], "polished gold");
}

#[test]
fn scene_init_without_material_nouns_succeeds_empty() {
    let w = Work::new();
    std::fs::write(
        w.path("abstract.txt"),
        "Hope and memory drift through the afternoon.",
    )
    .unwrap();
    let o = w.ok(&[
        "scene-init",
        "--text",
        s(&w.path("abstract.txt")),
        "--out",
        s(&w.path("out")),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("no concrete material nouns"));
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(w.path("out/manifest.json")).unwrap()).unwrap();
    assert!(manifest["materials"].as_array().unwrap().is_empty());
}

#[test]
fn corpus_sizes() {
    let w = Work::new();
    let full = w.ok(&["corpus"]);
    assert_eq!(full.stdout.iter().filter(|&&b| b == b'\n').count(), 62_600);
    let small = w.ok(&[
        "corpus",
        "--top-nouns",
        "25",
        "--top-adjectives",
        "10",
        "--min-adjectives",
        "1",
        "--max-adjectives",
        "1",
    ]);
    let lines: Vec<&str> = std::str::from_utf8(&small.stdout)
        .unwrap()
        .lines()
        .collect();
    assert_eq!(lines.len(), 250);
    assert!(lines.iter().all(|l| l.split(' ').count() >= 2));
}

#[test]
fn exit_codes() {
    let w = Work::new();
    assert_eq!(w.run(&["infer", "--bogus"]).status.code(), Some(1));
    assert_eq!(w.run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    // runtime failures: missing input file, missing config
    assert_eq!(
        w.run(&["export", "--material", "/nonexistent.json"])
            .status
            .code(),
        Some(2)
    );
    let o = bin()
        .args(["--config", "/nonexistent/c.json", "corpus"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/c.json"));
}

#[test]
fn export_from_saved_material_matches_export_from_prompt() {
    let w = Work::new();
    w.ok(&[
        "infer",
        "--prompt",
        "green glass",
        "--out",
        s(&w.path("m.json")),
    ]);
    let from_file = w.ok(&["export", "--material", s(&w.path("m.json"))]);
    let from_prompt = w.ok(&["export", "--prompt", "green glass"]);
    assert_eq!(from_file.stdout, from_prompt.stdout);
    assert!(String::from_utf8_lossy(&from_file.stdout).contains("mdl 1."));
}

fn metric_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_writes_metrics_and_resumes_exactly() {
    let w = Work::new();
    let out = w.train(&[
        "--out",
        s(&w.path("full.txb")),
        "--metrics",
        s(&w.path("full.jsonl")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let full = metric_lines(&w.path("full.jsonl"));
    assert_eq!(full.len(), 6);
    for (i, m) in full.iter().enumerate() {
        assert_eq!(m["step"], i as u64);
        assert!(m["loss"].as_f64().unwrap().is_finite());
    }

    let half = w.train(&[
        "--steps",
        "3",
        "--out",
        s(&w.path("half.txb")),
        "--metrics",
        s(&w.path("split.jsonl")),
    ]);
    assert!(half.status.success());
    assert_eq!(Checkpoint::load(&w.path("half.txb")).unwrap().step, 3);
    let rest = w.train(&[
        "--resume",
        s(&w.path("half.txb")),
        "--out",
        s(&w.path("resumed.txb")),
        "--metrics",
        s(&w.path("split.jsonl")),
    ]);
    assert!(
        rest.status.success(),
        "{}",
        String::from_utf8_lossy(&rest.stderr)
    );
    assert_eq!(
        std::fs::read(w.path("resumed.txb")).unwrap(),
        std::fs::read(w.path("full.txb")).unwrap()
    );
    assert_eq!(metric_lines(&w.path("split.jsonl")), full);

    // the trained checkpoint drives inference
    let cfg = w.path("config.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["paths"] = serde_json::json!({ "checkpoint": w.path("full.txb") });
    std::fs::write(w.path("trained.json"), v.to_string()).unwrap();
    let a = bin()
        .args([
            "--config",
            s(&w.path("trained.json")),
            "infer",
            "--prompt",
            "gold",
        ])
        .output()
        .unwrap();
    let b = w.ok(&["infer", "--prompt", "gold"]);
    assert!(a.status.success());
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn provider_outage_during_training_leaves_a_resumable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("images");
    let healthy = serde_json::json!({"kind": "stdio", "command": ["python3", fixture()]});
    let flaky = serde_json::json!({"kind": "stdio", "command": [
        "python3", fixture(), "--outage-after", "80", "--state", state.to_str().unwrap()
    ]});

    let reference = Work::with_provider(healthy.clone());
    let out = reference.train(&["--out", s(&reference.path("ref.txb"))]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let w = Work::with_provider(flaky);
    let out = w.train(&["--out", s(&w.path("partial.txb"))]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("resumable checkpoint"));
    let partial = Checkpoint::load(&w.path("partial.txb")).unwrap();
    assert!(
        partial.step > 0 && partial.step < 6,
        "step {}",
        partial.step
    );
    assert!(partial.momentum.is_some());

    let out = reference.train(&[
        "--resume",
        s(&w.path("partial.txb")),
        "--out",
        s(&w.path("done.txb")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let done = Checkpoint::load(&w.path("done.txb")).unwrap();
    let want = Checkpoint::load(&reference.path("ref.txb")).unwrap();
    assert_eq!(done.step, 6);
    assert_eq!(done.model.flatten(), want.model.flatten());
    assert_eq!(done.momentum, want.momentum);
}

#[test]
fn annotate_then_train_from_annotations() {
    let w = Work::new();
    w.ok(&[
        "annotate",
        "--prompts",
        s(&w.path("prompts.txt")),
        "--count",
        "5",
        "--out",
        s(&w.path("a.jsonl")),
    ]);
    let lines = std::fs::read_to_string(w.path("a.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 5);
    let prompts: Vec<&str> = PROMPTS.lines().collect();
    for l in lines.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert!(prompts.contains(&v["prompt_text"].as_str().unwrap()), "{l}");
    }
    let out = w.train(&[
        "--annotations",
        s(&w.path("a.jsonl")),
        "--steps",
        "2",
        "--out",
        s(&w.path("m.txb")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn serve_rejects_privileged_ports() {
    let w = Work::new();
    let mut child = w
        .cmd()
        .args(["serve", "--port", "80"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(1));
    let mut err = String::new();
    for line in BufReader::new(child.stderr.take().unwrap()).lines() {
        err.push_str(&line.unwrap());
    }
    assert!(err.contains("1024"), "{err}");
}

#[test]
fn w2v_report_has_the_same_shape_through_the_adapter() {
    let desk = Work::new();
    let adapter = Work::with_provider(
        serde_json::json!({"kind": "stdio", "command": ["python3", fixture()]}),
    );
    let mut reports = Vec::new();
    for (w, extra) in [(&desk, None), (&adapter, Some("--lpips"))] {
        let mut args = vec![
            "eval-w2v",
            "--k",
            "2",
            "--top-adjectives",
            "3",
            "--top-nouns",
            "2",
        ];
        let (out, report) = (w.path("w2v.csv"), w.path("w2v.json"));
        args.extend(["--out", s(&out), "--report", s(&report)]);
        args.extend(extra);
        w.ok(&args);
        let csv = std::fs::read_to_string(&out).unwrap();
        assert!(csv.starts_with("x,y\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
        reports.push(
            serde_json::from_str::<Value>(&std::fs::read_to_string(&report).unwrap()).unwrap(),
        );
    }
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&reports[0]), keys(&reports[1]));
    assert_eq!(
        (reports[0]["metric"].as_str(), reports[1]["metric"].as_str()),
        (Some("desk"), Some("lpips"))
    );
    assert_eq!(
        desk.run(&["eval-w2v", "--lpips", "--out", s(&desk.path("x.csv"))])
            .status
            .code(),
        Some(1)
    );
}
