use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nca_core::data::{config_reference, load_checkpoint, load_png, parse_config};
use nca_core::nca::{render_rgba, NcaModel};
use nca_core::rng::stream;

const TINY: &str = "\
seed: 3
task: {kind: generative, targets: [heart], size: 12}
model:
  hidden_channels: 4
  update: {hidden: [16]}
train:
  iterations: 20
  t_min: 4
  t_max: 6
eval:
  train_window: [4, 6]
  pre_perturb_step: 10
  final_step: 20
";

fn nca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nca"))
        .args(args)
        .env("NCA_THREADS", "1")
        .output()
        .expect("run nca")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.yaml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_file_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.yaml");
    let o = nca(&["train", "--config", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.yaml"), "{}", stderr(&o));
}

#[test]
fn bad_key_and_bad_override_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}bogus: 1\n"));
    let o = nca(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), TINY);
    let o = nca(&["train", "--config", s(&cfg), "--set", "train.batch_size=zero", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.batch_size"), "{}", stderr(&o));

    let o = nca(&["train", "--config", s(&cfg), "--set", "no-equals-sign"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_iterations_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    let o = nca(&["train", "--config", s(&cfg), "--set", "train.iterations=0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("config.yaml").exists());
    let ck = load_checkpoint(&out.join("model.ckpt")).unwrap();

    let parsed = parse_config(TINY, &[]).unwrap();
    let (data, _) = parsed.build_dataset().unwrap();
    let fresh = NcaModel::<f32>::init(parsed.model_spec(parsed.layout(&data)), &mut stream(3, "init")).unwrap();
    assert_eq!(ck.model, fresh);
}

#[test]
fn training_lowers_the_loss_and_logs_every_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    let o = nca(&["train", "--config", s(&cfg), "--set", "train.iterations=300", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    let losses: Vec<f64> = log.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 300);
    assert!(losses[299] < losses[0], "{} vs {}", losses[299], losses[0]);
}

#[test]
fn divergence_exits_3_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    let o = nca(&["train", "--config", s(&cfg), "--set", "train.optimizer.lr=1e30", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(out.join("divergence.json").exists());
    assert!(out.join("divergence.ckpt").exists());
}

#[test]
fn resume_continues_the_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&nca(&["train", "--config", s(&cfg), "--out", s(&a)])), 0);
    let half = nca(&["train", "--config", s(&cfg), "--set", "train.checkpoint_every=10", "--out", s(&b)]);
    assert_eq!(code(&half), 0);
    let resumed = dir.path().join("c");
    let mid = b.join("checkpoint-000010.ckpt");
    let o = nca(&["train", "--config", s(&cfg), "--resume", s(&mid), "--out", s(&resumed)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let full = load_checkpoint(&a.join("model.ckpt")).unwrap();
    let cont = load_checkpoint(&resumed.join("model.ckpt")).unwrap();
    for (x, y) in full.model.params.iter().zip(&cont.model.params) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn gradcheck_passes_and_lists_each_op_once() {
    let o = nca(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let names: Vec<&str> = out.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    let mut expect: Vec<&str> = nca_core::autodiff::OpKind::ALL.iter().map(|k| k.name()).collect();
    expect.push(nca_core::verify::NCA_STEP);
    assert_eq!(names, expect);
}

#[test]
fn gradcheck_with_a_corrupted_rule_exits_1_naming_it() {
    let o = nca(&["gradcheck", "--inject-fault", "conv2d"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("conv2d"), "{}", stderr(&o));
    assert_eq!(code(&nca(&["gradcheck", "--inject-fault", "nonsense"])), 2);
}

#[test]
fn load_only_without_checkpoints_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = nca(&["regen-bench", "--config", s(&cfg), "--load-only", "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("model.ckpt"), "{}", stderr(&o));
}

#[test]
fn regen_bench_twice_gives_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{TINY}bench:\n  variants:\n    - {{name: pool, set: {{train.pool.enabled: true}}}}\n    - {{name: no_pool, set: {{train.pool.enabled: false}}}}\n"
    );
    let cfg = write_config(dir.path(), &text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&nca(&["regen-bench", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&nca(&["regen-bench", "--config", s(&cfg), "--out", s(&b)])), 0);
    for f in ["table.tsv", "table.md", "reports.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let tsv = std::fs::read_to_string(a.join("table.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);

    // Reloading the trained variants reproduces the same table.
    let o = nca(&["regen-bench", "--config", s(&cfg), "--load-only", "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(a.join("table.tsv")).unwrap(), tsv);
}

fn trained_checkpoint(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, TINY);
    let out = dir.join("o");
    assert_eq!(code(&nca(&["train", "--config", s(&cfg), "--out", s(&out)])), 0);
    out.join("model.ckpt")
}

fn frame_count(dir: &Path) -> usize {
    std::fs::read_dir(dir).unwrap().count()
}

#[test]
fn export_frame_counts() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(dir.path());
    for (steps, every, expect) in [(0, 1, 1), (10, 1, 11), (10, 3, 4), (9, 3, 4)] {
        let out = dir.path().join(format!("f{steps}_{every}"));
        let o = nca(&["export", "--checkpoint", s(&ck), "--steps", &steps.to_string(), "--every", &every.to_string(), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(frame_count(&out), expect, "steps {steps} every {every}");
    }
    let o = nca(&["export", "--checkpoint", s(&ck), "--every", "0", "--out", s(&dir.path().join("z"))]);
    assert_eq!(code(&o), 2);
    let o = nca(&["export", "--checkpoint", s(&dir.path().join("nope.ckpt"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn exported_frames_match_a_live_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = trained_checkpoint(dir.path());
    let out = dir.path().join("frames");
    let o = nca(&["export", "--checkpoint", s(&ck_path), "--steps", "6", "--every", "2", "--seed", "9", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let ck = load_checkpoint(&ck_path).unwrap();
    let cfg = parse_config(TINY, &[]).unwrap();
    let (data, _) = cfg.build_dataset().unwrap();
    let (mut state, _) = nca_core::metrics::eval_sample(&ck.model.spec.layout, &data, None, 0).unwrap();
    let mut rng = stream(9, "export");
    for t in 0..=6usize {
        if t > 0 {
            state = ck.model.step(&state, &mut rng).unwrap();
        }
        if t % 2 == 0 {
            let png = load_png(&out.join(format!("frame_{t:05}.png"))).unwrap();
            let live = render_rgba(&state, 0);
            let (h, w) = (state.height(), state.width());
            for (i, &b) in live.iter().enumerate() {
                let (y, x, c) = (i / (w * 4), (i / 4) % w, i % 4);
                let v = png.data()[c * h * w + y * w + x];
                assert_eq!((v * 255.0).round() as u8, b, "t={t} pixel {i}");
            }
        }
    }
}

#[test]
fn help_lists_every_config_key() {
    let o = nca(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for (k, v) in config_reference() {
        assert!(text.contains(&format!("{k} = {v}")), "missing {k}");
    }
    assert_eq!(code(&nca(&["no-such-command"])), 2);
}

#[test]
fn demo_data_writes_loadable_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    let o = nca(&["demo-data", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["grow", "regen", "conditional", "classify", "video"] {
        let p = out.join("configs").join(format!("{name}.yaml"));
        let cfg = nca_core::data::parse_config_file(&p, &[]).unwrap();
        cfg.build_dataset().unwrap();
    }
    let idx = nca_core::data::load_idx(
        &out.join("digits-images.idx3-ubyte"),
        &out.join("digits-labels.idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(idx.len(), 2000);
}

#[test]
fn eval_reads_the_stored_config() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(dir.path());
    let out = dir.path().join("e");
    let o = nca(&["eval", "--checkpoint", s(&ck), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(v["task"], "generative");
    assert!(v["mse"].as_f64().unwrap().is_finite());
}
