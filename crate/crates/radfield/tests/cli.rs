use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use radfield::cli::Cli;
use radfield::config::RunConfig;
use radfield_core::scene::SceneSpec;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_radfield"));
    c.env("RFLD_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn docs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small, fast configuration for exercising every subcommand.
fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.scene = SceneSpec::standard(12);
    c.train.iterations = 4;
    c.train.rays_per_batch = 64;
    c.train.n_samples = 16;
    c.field.log2_table_size = 10;
    c.views.frames = 3;
    c.views.resolution = [16, 12];
    c.holdout.frames = 2;
    c.holdout.resolution = [16, 12];
    c.oracle_samples = 16;
    c.compression.trajectory.frames = 2;
    c.compression.trajectory.resolution = [32, 18];
    c.compression.resolutions = vec![[16, 9], [32, 18]];
    c.compression.reference_samples = 16;
    c
}

#[test]
fn documented_flags_match_the_parser() {
    let doc = std::fs::read_to_string(docs_dir().join("cli.md")).unwrap();
    let mut sections: Vec<(String, BTreeSet<String>)> = Vec::new();
    for line in doc.lines() {
        if let Some(h) = line.strip_prefix("### radfield ") {
            sections.push((h.trim().to_string(), BTreeSet::new()));
        } else if let (Some(rest), Some((_, flags))) = (line.strip_prefix("| `--"), sections.last_mut()) {
            let name = rest.split(|c: char| c == ' ' || c == '`').next().unwrap();
            flags.insert(name.to_string());
        }
    }
    fn leaves(cmd: &clap::Command, prefix: &str, out: &mut Vec<(String, BTreeSet<String>)>) {
        for sub in cmd.get_subcommands().filter(|c| c.get_name() != "help") {
            let name = if prefix.is_empty() { sub.get_name().to_string() } else { format!("{prefix} {}", sub.get_name()) };
            if sub.has_subcommands() {
                leaves(sub, &name, out);
            } else {
                let flags = sub
                    .get_arguments()
                    .filter_map(|a| a.get_long())
                    .filter(|l| *l != "help" && *l != "version")
                    .map(String::from)
                    .collect();
                out.push((name, flags));
            }
        }
    }
    let mut parsed = Vec::new();
    leaves(&Cli::command(), "", &mut parsed);
    parsed.sort();
    sections.sort();
    assert_eq!(parsed, sections);
}

/// Resolves `$ref` and unwraps a non-null `oneOf` branch holding an object.
fn resolve<'a>(schema: &'a Value, node: &'a Value) -> &'a Value {
    if let Some(r) = node.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").unwrap();
        return resolve(schema, &schema["$defs"][name]);
    }
    node
}

/// Every key of `value` is declared by `node`, recursively.
fn conforms(schema: &Value, node: &Value, value: &Value, path: &str) {
    let node = resolve(schema, node);
    if let Some(alts) = node.get("oneOf").and_then(Value::as_array) {
        let hit = alts.iter().map(|a| resolve(schema, a)).find(|a| match value {
            Value::Null => a["type"] == "null",
            Value::Object(m) => a["type"] == "object" && a["properties"].get("type").is_none_or(|t| Some(&t["const"]) == m.get("type")),
            _ => a["type"] != "null" && a["type"] != "object",
        });
        let hit = hit.unwrap_or_else(|| panic!("{path}: no schema branch for {value}"));
        return conforms(schema, hit, value, path);
    }
    match value {
        Value::Object(m) => {
            assert_eq!(node["additionalProperties"], Value::Bool(false), "{path}: open object");
            let props = node["properties"].as_object().unwrap_or_else(|| panic!("{path}: no properties"));
            for key in props.keys() {
                if node["required"].as_array().is_some_and(|r| r.iter().any(|k| k == key)) {
                    assert!(m.contains_key(key), "{path}.{key} is required by the schema but not serialized");
                }
            }
            for (k, v) in m {
                let p = props.get(k).unwrap_or_else(|| panic!("{path}.{k} is missing from the schema"));
                conforms(schema, p, v, &format!("{path}.{k}"));
            }
        }
        Value::Array(items) => {
            if let Some(it) = node.get("items") {
                for (i, v) in items.iter().enumerate() {
                    conforms(schema, it, v, &format!("{path}[{i}]"));
                }
            }
        }
        _ => {}
    }
}

/// Collects every property path declared by the schema.
fn declared(schema: &Value, node: &Value, path: &str, out: &mut BTreeSet<String>) {
    let node = resolve(schema, node);
    for alt in node.get("oneOf").and_then(Value::as_array).into_iter().flatten() {
        declared(schema, alt, path, out);
    }
    if let Some(it) = node.get("items") {
        declared(schema, it, &format!("{path}[]"), out);
    }
    for (k, v) in node.get("properties").and_then(Value::as_object).into_iter().flatten() {
        let p = format!("{path}.{k}");
        out.insert(p.clone());
        declared(schema, v, &p, out);
    }
}

fn serialized(value: &Value, path: &str, out: &mut BTreeSet<String>) {
    match value {
        Value::Object(m) => {
            for (k, v) in m {
                let p = format!("{path}.{k}");
                out.insert(p.clone());
                serialized(v, &p, out);
            }
        }
        Value::Array(items) => items.iter().for_each(|v| serialized(v, &format!("{path}[]"), out)),
        _ => {}
    }
}

#[test]
fn schema_matches_the_config_types() {
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(docs_dir().join("config.schema.json")).unwrap()).unwrap();
    let mut textured = SceneSpec::standard(8);
    textured.primitives.truncate(1);
    let mut seen = BTreeSet::new();
    for c in [RunConfig::default(), RunConfig::compression_preset(), RunConfig::dynamic_preset()] {
        let v = serde_json::to_value(&c).unwrap();
        conforms(&schema, &schema, &v, "");
        serialized(&v, "", &mut seen);
    }
    let mut all = BTreeSet::new();
    declared(&schema, &schema, "", &mut all);
    let unused: Vec<_> = all.difference(&seen).collect();
    // shape variants absent from the presets
    let allowed = ["radius", "half_height"];
    for p in &unused {
        assert!(allowed.iter().any(|a| p.ends_with(&format!("shape.{a}"))), "{p} is declared but never serialized");
    }
    let defaults = serde_json::to_value(RunConfig::default()).unwrap();
    for section in ["field", "disparity", "views"] {
        let props = resolve(&schema, &schema["properties"][section])["properties"].as_object().unwrap();
        for (k, p) in props {
            if let Some(d) = p.get("default") {
                assert_eq!(d.as_f64(), defaults[section][k].as_f64(), "{section}.{k}");
            }
        }
    }
}

#[test]
fn shipped_configs_are_the_presets() {
    for (name, c) in [("static", RunConfig::default()), ("compression", RunConfig::compression_preset()), ("dynamic", RunConfig::dynamic_preset())] {
        let text = std::fs::read_to_string(docs_dir().join("configs").join(format!("{name}.json"))).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c, "{name}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--ref", "a.ppm"]).status.code(), Some(2));
}

#[test]
fn invalid_config_exits_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"compression": {"q": 0}}"#).unwrap();
    let out = run(&["compress", "--config", s(&cfg), "--oracle", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));

    std::fs::write(&cfg, r#"{"trian": {}}"#).unwrap();
    assert_eq!(run(&["dataset", "--config", s(&cfg), "--out", s(dir.path())]).status.code(), Some(1));
}

#[test]
fn scene_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&SceneSpec::standard(10)).unwrap()).unwrap();
    let (a, b) = (dir.path().join("a.scene"), dir.path().join("b.scene"));
    ok(&["scene", "--spec", s(&spec), "--out", s(&a)]);
    ok(&["scene", "--spec", s(&spec), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn eval_of_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.ppm");
    let mut bytes = b"P6\n12 11\n255\n".to_vec();
    bytes.extend((0..12 * 11 * 3).map(|i| (i * 7) as u8));
    std::fs::write(&img, bytes).unwrap();
    let out = ok(&["eval", "--ref", s(&img), "--test", s(&img)]);
    assert_eq!(out, "frame_idx,psnr_db,ssim\n0,inf,1\n");
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, serde_json::to_string(&tiny_config()).unwrap()).unwrap();
    let cfg = s(&cfg);

    ok(&["dataset", "--config", cfg, "--out", s(&d.join("data"))]);
    ok(&["dataset", "--config", cfg, "--capture", "--out", s(&d.join("capture"))]);
    let ckpt = d.join("field.rfld");
    ok(&["train", "--config", cfg, "--data", s(&d.join("data")), "--out", s(&ckpt), "--losses", s(&d.join("loss.csv"))]);
    let losses = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 4);

    ok(&["render", "--config", cfg, "--checkpoint", s(&ckpt), "--out", s(&d.join("render"))]);
    for f in ["view_000_rgb.ppm", "view_001_disparity.pgm", "view_001_disparity.json"] {
        assert!(d.join("render").join(f).exists(), "{f}");
    }
    assert_eq!(run(&["render", "--config", cfg, "--checkpoint", s(&ckpt), "--time", "0.5", "--out", s(&d.join("r2"))]).status.code(), Some(1));

    ok(&["compress", "--config", cfg, "--checkpoint", s(&ckpt), "--out", s(&d.join("savings.csv"))]);
    let savings = std::fs::read_to_string(d.join("savings.csv")).unwrap();
    let rows: Vec<_> = savings.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 2 * 2);
    assert!(rows[1..].iter().any(|r| r.contains(",32x18,")));

    let r = d.join("render");
    let clearance = ok(&[
        "disparity", "process",
        "--in", s(&r.join("view_000_disparity.pgm")),
        "--opacity", s(&r.join("view_000_opacity.pgm")),
        "--out", s(&d.join("processed.pgm")),
        "--region", "0,0,16,12",
        "--region", "0,0,1,1",
    ]);
    assert!(clearance.starts_with("region,min_clearance\n0:0:16:12,"));
    assert_eq!(clearance.lines().count(), 3);

    // streaming between two processes
    let port = free_port().to_string();
    let recv = bin()
        .args(["stream", "recv", "--listen", &port, "--out", s(&d.join("recv")), "--checkpoint", s(&ckpt), "--samples", "16"])
        .args(["--transcript", s(&d.join("recv.csv"))])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let addr = format!("127.0.0.1:{port}");
    let mut sent = None;
    for _ in 0..100 {
        let out = run(&["stream", "send", "--input", s(&d.join("capture")), "--connect", &addr, "--checkpoint", s(&ckpt), "--samples", "16"]);
        if out.status.success() {
            sent = Some(String::from_utf8(out.stdout).unwrap());
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    let sent = sent.expect("sender never connected");
    let recv = recv.wait_with_output().unwrap();
    assert!(recv.status.success());
    let got = String::from_utf8(recv.stdout).unwrap();
    let field = |line: &str, key: &str| line.split_whitespace().find_map(|kv| kv.strip_prefix(key)).unwrap().to_string();
    assert_eq!(field(&sent, "frames="), "2");
    assert_eq!(field(&sent, "wire_bytes="), field(&got, "wire_bytes="));
    if cfg!(target_os = "linux") {
        assert_eq!(field(&sent, "tcp_bytes_acked="), field(&sent, "wire_bytes="));
        assert_eq!(field(&got, "tcp_bytes_received="), field(&got, "wire_bytes="));
    }
    for i in 0..2 {
        let a = std::fs::read(d.join("capture/images").join(format!("r_{i:03}.ppm"))).unwrap();
        let b = std::fs::read(d.join("recv").join(format!("frame_{i:03}.ppm"))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn dynamic_checkpoint_renders_at_any_time() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut c = tiny_config();
    let mut dy = RunConfig::dynamic_preset();
    c.scene = SceneSpec::arm(12);
    c.dynamic = dy.dynamic.take();
    c.dynamic.as_mut().unwrap().warmup_iterations = 2;
    c.dynamic.as_mut().unwrap().deformation_resolution = 4;
    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();
    let cfg = s(&cfg);
    let ckpt = d.join("dyn.rfld");
    assert_eq!(run(&["train", "--config", cfg, "--out", s(&ckpt)]).status.code(), Some(1));
    ok(&["train-dynamic", "--config", cfg, "--out", s(&ckpt)]);
    ok(&["render", "--config", cfg, "--checkpoint", s(&ckpt), "--time", "0.5", "--out", s(&d.join("r"))]);
    assert!(d.join("r/view_001_rgb.ppm").exists());
}
