use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn phi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn phi")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

fn small_data(dir: &Path) -> String {
    let data = dir.join("data");
    let o = phi(&["gen-data", "--out", data.to_str().unwrap(), "--n-train", "24", "--n-test", "12", "--m", "6", "--d", "16", "--d-s", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    data.to_str().unwrap().to_string()
}

fn quick_train(data: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", data, "--out", out.to_str().unwrap(), "--preset", "ci", "--epochs", "2"];
    args.extend_from_slice(extra);
    phi(&args)
}

#[test]
fn train_then_eval_through_the_flow_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let o = quick_train(&data, &ckpt, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "stage"), Some("stage2"));
    assert!(dir.path().join("m.ckpt.cfg").exists());

    let o = phi(&["eval", "--data", &data, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let srcc: f64 = value(&out, "srcc").unwrap().parse().unwrap();
    assert!((-1.0..=1.0).contains(&srcc));
    assert_eq!(value(&out, "tete_calls"), Some("0"));
    assert!(value(&out, "ordering").is_some());
}

#[test]
fn flags_override_config_file_which_overrides_preset() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "# overrides\nbatch=5\nsteps=3\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = quick_train(&data, &ckpt, &["--config", cfg.to_str().unwrap(), "--batch", "6", "--no-gmf"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side = fs::read_to_string(dir.path().join("m.ckpt.cfg")).unwrap();
    assert_eq!(value(&side, "batch"), Some("6"));
    assert_eq!(value(&side, "steps"), Some("3"));
    assert_eq!(value(&side, "d_k"), Some("16"));
    assert_eq!(value(&side, "no_gmf"), Some("true"));
    assert_eq!(value(&stdout(&o), "stage"), Some("stage1"));
}

#[test]
fn one_stage_strategy_is_selectable() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let o = quick_train(&data, &ckpt, &["--strategy", "one-stage"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side = fs::read_to_string(dir.path().join("m.ckpt.cfg")).unwrap();
    assert_eq!(value(&side, "strategy"), Some("one-stage"));
}

#[test]
fn error_categories_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    assert!(quick_train(&data, &ckpt, &[]).status.success());
    let ck = ckpt.to_str().unwrap();

    let missing = dir.path().join("nowhere");
    let o = phi(&["eval", "--data", missing.to_str().unwrap(), "--checkpoint", ck]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&bad, bytes).unwrap();
    let o = phi(&["eval", "--data", &data, "--checkpoint", bad.to_str().unwrap(), "--config", dir.path().join("m.ckpt.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let cfg = dir.path().join("unknown.cfg");
    fs::write(&cfg, "learning_rate=3\n").unwrap();
    let o = quick_train(&data, &dir.path().join("x.ckpt"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let o = quick_train(&data, &dir.path().join("x.ckpt"), &["--batch", "2"]);
    assert_eq!(o.status.code(), Some(4));

    let other = dir.path().join("other.cfg");
    fs::write(&other, "steps=2\nd_k=16\nd_t=4\n").unwrap();
    let o = phi(&["eval", "--data", &data, "--checkpoint", ck, "--config", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(7));
    let o = phi(&["eval", "--data", &data, "--checkpoint", ck, "--config", other.to_str().unwrap(), "--force"]);
    assert!(o.status.success());

    assert_eq!(phi(&["no-such-command"]).status.code(), Some(64));
    assert_eq!(phi(&["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_steps_prints_one_row_per_step_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let table = dir.path().join("sweep.tsv");
    let o = phi(&[
        "sweep-steps", "--data", &data, "--steps-list", "1,2", "--preset", "ci", "--epochs", "1", "--table",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(text, stdout(&o));
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "arm\tsrcc\trl2");
    assert!(rows[1].starts_with("steps_1\t") && rows[2].starts_with("steps_2\t"));
    assert_eq!(rows.len(), 3);
}
