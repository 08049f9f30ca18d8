use glam::DVec3;
use loopforge_core::geometry::write_obj;
use loopforge_core::recon::read_ply;
use loopforge_core::sequence::{read_loopseq_file, to_loopseq_string};
use loopforge_core::shapes::{cuboid, torus};
use loopforge_model::decode::sample_latent;
use loopforge_model::{save_checkpoint, Model, ModelConfig};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loopforge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "loopforge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.ckpt");
    save_checkpoint(&Model::new(&ModelConfig::tiny()).unwrap(), &path).unwrap();
    path
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["sample"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let out = run(&["sample", "--ckpt", "x", "--out", "y", "--eos", "0.1", "--plane-count", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn slicing_a_cube_and_a_torus() {
    let dir = tempfile::tempdir().unwrap();
    let cube = dir.path().join("cube.obj");
    std::fs::write(&cube, write_obj(&cuboid(DVec3::ZERO, DVec3::ONE))).unwrap();
    let out = dir.path().join("cube.loopseq");
    let o = ok(&["slice", "--mesh", s(&cube), "--planes", "5", "--axis", "y", "--out", s(&out)]);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["loops_per_plane"], serde_json::json!([1, 1, 1, 1, 1]));
    let seq = read_loopseq_file(&out).unwrap();
    assert_eq!((seq.len(), seq.level_ups()), (5, 5));

    let tor = dir.path().join("torus.obj");
    std::fs::write(&tor, write_obj(&torus(0.4, 0.1, 96, 24))).unwrap();
    let out = dir.path().join("torus.loopseq");
    let o = ok(&[
        "slice", "--mesh", s(&tor), "--planes", "3", "--axis", "z", "--range", "-0.05,0.05", "--out", s(&out),
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["loops_per_plane"], serde_json::json!([2, 2, 2]));
}

#[test]
fn open_surface_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut mesh = cuboid(DVec3::ZERO, DVec3::ONE);
    let keep: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .copied()
        .filter(|f| !f.iter().all(|&v| mesh.vertices[v].x == 0.0))
        .collect();
    mesh.faces = keep;
    let obj = dir.path().join("open.obj");
    std::fs::write(&obj, write_obj(&mesh)).unwrap();
    let out = run(&["slice", "--mesh", s(&obj), "--planes", "3", "--out", s(&dir.path().join("o.loopseq"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("open contour"));
    let out = run(&["slice", "--mesh", "/nonexistent.obj", "--planes", "3", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dataset_train_encode_and_decode() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["dataset", "--category", "vase", "--num-shapes", "3", "--plane-count", "4", "--seed", "1", "--out", s(&data)]);
    assert!(data.join("manifest.json").exists());

    let cfg = dir.path().join("model.json");
    let mut mc = ModelConfig::tiny();
    mc.max_seq_len = 40;
    std::fs::write(&cfg, mc.to_json()).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = ok(&["train", "--dataset", s(&data), "--config", s(&cfg), "--epochs", "2", "--out", s(&ckpt)]);
    let lines: Vec<serde_json::Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i);
        assert!(l["L_R"].as_f64().unwrap().is_finite());
        assert!(l["L_KL"].is_number() && l["beta_eff"].is_number() && l["lr"].is_number());
    }

    let shape = std::fs::read_dir(data.join("shapes")).unwrap().next().unwrap().unwrap().path();
    let z = dir.path().join("z.json");
    ok(&["encode", "--ckpt", s(&ckpt), "--loopseq", s(&shape), "--out", s(&z)]);
    let zv: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&z).unwrap()).unwrap();
    assert_eq!(zv.len(), 8);

    let script = dir.path().join("noop.json");
    std::fs::write(&script, r#"{"edits": []}"#).unwrap();
    let a = dir.path().join("a.loopseq");
    ok(&["edit", "--ckpt", s(&ckpt), "--z", s(&z), "--script", s(&script), "--out", s(&a)]);
    assert!(read_loopseq_file(&a).is_ok());
}

#[test]
fn edits_change_downstream_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let z = dir.path().join("z.json");
    std::fs::write(&z, serde_json::to_string(&sample_latent(8, 3)).unwrap()).unwrap();
    let plain = dir.path().join("plain.json");
    std::fs::write(&plain, "[]").unwrap();
    let moved = dir.path().join("moved.json");
    std::fs::write(&moved, r#"[{"step": 1, "op": "translate", "dx": 0.2, "dy": 0.0}]"#).unwrap();
    let (a, b) = (dir.path().join("a.loopseq"), dir.path().join("b.loopseq"));
    let common = ["--ckpt", s(&ckpt), "--z", s(&z), "--plane-count", "4"];
    ok(&[&["edit"][..], &common, &["--script", s(&plain), "--out", s(&a)]].concat());
    ok(&[&["edit"][..], &common, &["--script", s(&moved), "--out", s(&b)]].concat());
    let (sa, sb) = (read_loopseq_file(&a).unwrap(), read_loopseq_file(&b).unwrap());
    assert_eq!(sa.tokens[0], sb.tokens[0]);
    assert_ne!(sa.tokens[1], sb.tokens[1]);
    let later_differs = sa.tokens.iter().zip(&sb.tokens).skip(2).any(|(x, y)| x != y) || sa.len() != sb.len();
    assert!(later_differs);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"[{"step": 0, "op": "twist"}]"#).unwrap();
    let out = run(&[&["edit"][..], &common, &["--script", s(&bad), "--out", s(&a)]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sampling_is_deterministic_and_interpolation_hits_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let (a, b) = (dir.path().join("a.loopseq"), dir.path().join("b.loopseq"));
    ok(&["sample", "--ckpt", s(&ckpt), "--seed", "7", "--out", s(&a)]);
    ok(&["sample", "--ckpt", s(&ckpt), "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let (za, zb) = (dir.path().join("za.json"), dir.path().join("zb.json"));
    std::fs::write(&za, serde_json::to_string(&sample_latent(8, 7)).unwrap()).unwrap();
    std::fs::write(&zb, serde_json::to_string(&sample_latent(8, 9)).unwrap()).unwrap();
    let out = dir.path().join("interp");
    ok(&["interpolate", "--ckpt", s(&ckpt), "--za", s(&za), "--zb", s(&zb), "-k", "3", "--out", s(&out)]);
    let first = read_loopseq_file(out.join("interp-000.loopseq")).unwrap();
    assert_eq!(to_loopseq_string(&first).unwrap(), std::fs::read_to_string(&a).unwrap());
    assert!(out.join("interp-002.loopseq").exists());

    let short = dir.path().join("short.json");
    std::fs::write(&short, "[1.0]").unwrap();
    let o = run(&["interpolate", "--ckpt", s(&ckpt), "--za", s(&short), "--zb", s(&zb), "-k", "3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exported_ply_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let cube = dir.path().join("cube.obj");
    std::fs::write(&cube, write_obj(&cuboid(DVec3::ZERO, DVec3::ONE))).unwrap();
    let seq = dir.path().join("cube.loopseq");
    ok(&["slice", "--mesh", s(&cube), "--planes", "4", "--out", s(&seq)]);
    let ply = dir.path().join("cube.ply");
    let o = ok(&["export-ply", "--loopseq", s(&seq), "--density", "100", "--out", s(&ply)]);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let cloud = read_ply(&ply).unwrap();
    assert_eq!(summary["points"], cloud.len());
    assert!(cloud.normals.iter().all(|n| (n.length() - 1.0).abs() < 1e-6));
    let o = run(&["export-ply", "--loopseq", s(&seq), "--density", "-1", "--out", s(&ply)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_reports_and_flags_numerical_failure() {
    let o = ok(&["gradcheck", "--preset", "tiny", "--probes", "20"]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["probes"], 20);
    assert_eq!(r["pass"], true);
    let o = run(&["gradcheck", "--preset", "tiny", "--probes", "20", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(run(&["gradcheck"]).status.code(), Some(1));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    stream.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_reads_the_port_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let port = free_port();
    let mut child = bin()
        .args(["serve", "--ckpt", s(&ckpt)])
        .env("LOOPFORGE_PORT", port.to_string())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = get(port, "/models/m1") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server answered");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"model_id\":\"m1\""));
}
