use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pcadapt");

const CONFIG: &str = r#"{
  "dataset": {"classes": ["sphere", "cube", "torus"], "train_per_class": 4, "test_per_class": 2, "n_points": 96},
  "classifier": {"hidden": 8, "train": {"epochs": 3}},
  "run": {"corruptions": ["gaussian"], "adapt": {"steps": 5, "warmup_steps": 1, "votes": 1}}
}"#;

fn pcadapt(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn data_train_run_report_flow() {
    let dir = setup();
    let d = dir.path();
    ok(&pcadapt(d, &["--config", "cfg.json", "--out", "data", "gen-data"]));
    assert!(d.join("data/index.json").exists());
    ok(&pcadapt(d, &["--config", "cfg.json", "--out", "model", "train-classifier", "--data", "data"]));
    ok(&pcadapt(d, &["--config", "cfg.json", "--out", "r", "run", "--data", "data", "--model", "model/model.json"]));
    let csv = pcadapt(d, &["report", "--input", "r/report.json"]);
    ok(&csv);
    let text = String::from_utf8(csv.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("corruption,severity,instances,unadapted_accuracy,adapted_accuracy"));
    assert!(lines.next().unwrap().starts_with("gaussian,5,6,"));
    let per_instance = pcadapt(d, &["report", "--input", "r/report.json", "--instances"]);
    ok(&per_instance);
    assert_eq!(String::from_utf8(per_instance.stdout).unwrap().lines().count(), 7);
}

#[test]
fn run_is_byte_deterministic() {
    let dir = setup();
    let d = dir.path();
    ok(&pcadapt(d, &["--config", "cfg.json", "--seed", "5", "--out", "a", "run"]));
    ok(&pcadapt(d, &["--config", "cfg.json", "--seed", "5", "--out", "b", "run"]));
    ok(&pcadapt(d, &["--config", "cfg.json", "--seed", "5", "--workers", "3", "--out", "c", "run"]));
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert!(read("a/report.json") == read("b/report.json"), "reports differ");
    // the worker count is echoed in the config but changes no result
    let results = |p: &str| serde_json::from_slice::<serde_json::Value>(&read(p)).unwrap()["results"].clone();
    assert_eq!(results("a/report.json"), results("c/report.json"));
}

#[test]
fn corrupt_and_adapt_write_outputs() {
    let dir = setup();
    let d = dir.path();
    ok(&pcadapt(d, &["--config", "cfg.json", "--out", "data", "gen-data"]));
    ok(&pcadapt(d, &["--config", "cfg.json", "--out", "o", "corrupt", "--input", "data/test/00000.xyz", "--kind", "density_dec", "--severity", "2"]));
    let corrupted = d.join("o/00000_density_dec_2.xyz");
    let n = std::fs::read_to_string(&corrupted).unwrap().lines().filter(|l| !l.trim().is_empty()).count();
    assert_eq!(n, 68); // ceil(0.7 * 96)
    ok(&pcadapt(d, &["--config", "cfg.json", "--out", "o", "adapt", "--input", "o/00000_density_dec_2.xyz", "--data", "data"]));
    let trace = std::fs::read_to_string(d.join("o/trace_0.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "step,loss,chamfer_term,reg_term,lr,lambda");
    assert_eq!(trace.lines().count(), 6);
    assert!(d.join("o/adapted_0.xyz").exists());
}

#[test]
fn denoiser_check_passes_against_own_server() {
    let dir = setup();
    let out = pcadapt(
        dir.path(),
        &["--config", "cfg.json", "denoiser-check", "--command", BIN, "--arg=--config", "--arg=cfg.json", "--arg=serve-denoiser"],
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"fuzz_rejected\": 1000"));
    assert!(text.trim_end().ends_with("PASS"));
}

#[test]
fn denoiser_check_fails_against_a_different_source() {
    let dir = setup();
    // the server builds its source from another seed, so answers disagree
    let out = pcadapt(
        dir.path(),
        &["--config", "cfg.json", "denoiser-check", "--requests", "5", "--fuzz-lines", "5", "--command", BIN,
          "--arg=--config", "--arg=cfg.json", "--arg=--seed", "--arg=99", "--arg=serve-denoiser"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn exit_codes_for_config_and_protocol_errors() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"workerz": 3}"#).unwrap();
    assert_eq!(pcadapt(d, &["--config", "bad.json", "gen-data"]).status.code(), Some(2));
    assert_eq!(pcadapt(d, &["--config", "missing.json", "gen-data"]).status.code(), Some(2));
    assert_eq!(pcadapt(d, &["--workers", "0", "gen-data"]).status.code(), Some(2));
    // a server that answers the handshake with garbage
    let out = pcadapt(d, &["--config", "cfg.json", "denoiser-check", "--command", "sh", "--arg=-c", "--arg=echo nonsense; cat > /dev/null"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(d.join("wrong_t.json"), CONFIG.replacen('{', r#"{"timesteps": 300,"#, 1)).unwrap();
    let out = pcadapt(
        d,
        &["--config", "cfg.json", "denoiser-check", "--command", BIN, "--arg=--config", "--arg=wrong_t.json", "--arg=serve-denoiser"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn serve_over_tcp() {
    use std::io::{BufRead, BufReader};
    let dir = setup();
    let mut child = Command::new(BIN)
        .current_dir(dir.path())
        .args(["--config", "cfg.json", "serve-denoiser", "--listen", "127.0.0.1:0"])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut addr = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut addr).unwrap();
    let out = pcadapt(
        dir.path(),
        &["--config", "cfg.json", "denoiser-check", "--requests", "20", "--fuzz-lines", "50", "--address", addr.trim()],
    );
    child.kill().unwrap();
    child.wait().unwrap();
    ok(&out);
}
