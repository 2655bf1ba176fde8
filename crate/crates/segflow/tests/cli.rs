use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "frame_size=32\nnum_frames=6\ncrop_size=32\nresize_short=32\nbatch_pairs=2\nselect_pairs=8\nadapt_batch_pairs=1\n";

fn segflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segflow")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = segflow(args);
    assert_eq!(code(&out), 0, "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: PathBuf,
    data: PathBuf,
}

fn fixture(videos: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = root.join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let data = root.join("data");
    ok(&["gen", "--config", p(&cfg), "--videos", &videos.to_string(), "--seed", "7", "--out", p(&data)]);
    Fixture { _dir: dir, root, cfg, data }
}

/// Relative path and bytes of every file below `root`.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_writes_one_directory_per_video_deterministically() {
    let f = fixture(4);
    let mut ids: Vec<_> = fs::read_dir(f.data.join("videos")).unwrap().map(|e| e.unwrap().file_name()).collect();
    ids.sort();
    assert_eq!(ids, ["v00000", "v00001", "v00002", "v00003"]);
    assert!(f.data.join("videos/v00002/frames/00005.png").is_file());
    assert!(f.data.join("videos/v00002/masks/00005.png").is_file());
    assert!(fs::read_to_string(f.data.join("videos/v00002/meta")).unwrap().contains("seed="));
    let again = f.root.join("again");
    ok(&["gen", "--config", p(&f.cfg), "--videos", "4", "--seed", "7", "--out", p(&again)]);
    assert_eq!(tree(&f.data.join("videos")), tree(&again.join("videos")));
    // The echoed configurations differ only in the output directory.
    let strip = |d: &Path| -> Vec<String> {
        let text = fs::read_to_string(d.join("config.txt")).unwrap();
        text.lines().filter(|l| !l.starts_with("out=")).map(String::from).collect()
    };
    assert_eq!(strip(&f.data), strip(&again));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(code(&segflow(&["gen", "--videos", "0", "--out", out])), 2);
    assert_eq!(code(&segflow(&["gen", "--frobnicate"])), 2);
    assert_eq!(code(&segflow(&["gen", "--set", "seed"])), 2);
    assert_eq!(code(&segflow(&["gen", "--set", "no_such_key=1"])), 2);
    assert_eq!(code(&segflow(&["gen", "--seed", "1", "--set", "seed=2"])), 2);
    // Nothing was written by refused commands.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn few_segments_need_the_override() {
    let f = fixture(2);
    let run = f.root.join("c3");
    let base = ["train", "--config", p(&f.cfg), "--data", p(&f.data), "--out", p(&run), "--iters", "0", "--c", "3"];
    let refused = segflow(&base);
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("unstable"));
    let mut allowed = base.to_vec();
    allowed.push("--allow-few-segments");
    ok(&allowed);
}

#[test]
fn zero_iterations_checkpoint_the_initial_model() {
    let f = fixture(2);
    let run = f.root.join("run0");
    ok(&["train", "--config", p(&f.cfg), "--data", p(&f.data), "--out", p(&run), "--iters", "0", "--seed", "5"]);
    let ckpts: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts, ["step_000000.ckpt"]);
    assert_eq!(fs::read_to_string(run.join("loss.csv")).unwrap(), "step,loss\n");
    let init = segflow::io::read_checkpoint(&run.join("checkpoints/step_000000.ckpt"), None).unwrap();
    let fresh = segflow_core::pathways::ModelState::init(&init.config, 5).unwrap();
    assert_eq!(init.params, fresh.params);
    assert!(segflow::io::read_checkpoint(&run.join("model.ckpt"), None).unwrap().object_channel.is_some());
}

#[test]
fn training_twice_gives_identical_checkpoints_and_logs() {
    let f = fixture(4);
    let run = |name: &str| {
        let dir = f.root.join(name);
        ok(&[
            "train", "--config", p(&f.cfg), "--data", p(&f.data), "--out", p(&dir),
            "--iters", "100", "--seed", "1", "--deterministic",
        ]);
        dir
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(tree(&a.join("checkpoints")), tree(&b.join("checkpoints")));
    let log = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(log, fs::read_to_string(b.join("loss.csv")).unwrap());
    let lines: Vec<_> = log.lines().skip(1).collect();
    assert_eq!(lines.len(), 100);
    for (i, l) in lines.iter().enumerate() {
        let (step, loss) = l.split_once(',').unwrap();
        assert_eq!(step.parse::<usize>().unwrap(), i + 1);
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }
    let names: Vec<_> = tree(&a.join("checkpoints")).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, [PathBuf::from("step_000100.ckpt")]);
}

#[test]
fn resolved_config_is_echoed_with_overrides() {
    let f = fixture(2);
    let run = f.root.join("echo");
    let out = ok(&[
        "train", "--config", p(&f.cfg), "--data", p(&f.data), "--out", p(&run), "--iters", "0", "--batch", "1",
    ]);
    let _ = out;
    let echo = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echo.contains("# batch_pairs: flag value \"1\" overrides file value \"2\""));
    assert!(echo.contains("\nbatch_pairs=1\n"));
    assert!(echo.contains("\ncrop_size=32\n"));
    assert!(echo.contains("\nlearning_rate=0.0001\n"));
}

#[test]
fn eval_needs_a_checkpoint() {
    let f = fixture(2);
    let out = f.root.join("eval");
    let missing = f.root.join("nope.ckpt");
    let r = segflow(&["eval", "--data", p(&f.data), "--checkpoint", p(&missing), "--out", p(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("nope.ckpt"));
    assert_eq!(code(&segflow(&["eval", "--data", p(&f.data), "--out", p(&out)])), 2);
}

#[test]
fn inference_evaluation_adaptation_and_viz_run_end_to_end() {
    let f = fixture(4);
    let run = f.root.join("run");
    ok(&["train", "--config", p(&f.cfg), "--data", p(&f.data), "--out", p(&run), "--iters", "20"]);
    let ckpt = run.join("model.ckpt");

    for mode in ["per-image", "per-video"] {
        let out = f.root.join(format!("eval-{mode}"));
        ok(&[
            "eval", "--config", p(&f.cfg), "--data", p(&f.data), "--checkpoint", p(&ckpt), "--out", p(&out),
            "--mode", mode, "--adapt-iters", "3",
        ]);
        let csv = fs::read_to_string(out.join(format!("report_{mode}.csv"))).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "item,jaccard,f_beta,mae");
        // Parity split: the odd videos are held out.
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert!(lines[1].starts_with("v00001,"));
        assert!(lines[3].starts_with("mean,"));
        assert!(fs::read_to_string(out.join(format!("report_{mode}.txt"))).unwrap().contains(mode));
    }

    let frames = [f.data.join("videos/v00001/frames/00000.png"), f.data.join("videos/v00003/frames/00002.png")];
    let out = f.root.join("infer");
    ok(&["infer", "--checkpoint", p(&ckpt), "--out", p(&out), p(&frames[0]), p(&frames[1])]);
    for name in ["00000_saliency.png", "00002_saliency.png"] {
        let img = image::open(out.join(name)).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
    }
    let bad = segflow(&["infer", "--checkpoint", p(&ckpt), "--out", p(&out), p(&f.root.join("missing.png"))]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("missing.png"));
    assert_eq!(code(&segflow(&["infer", "--checkpoint", p(&ckpt), "--channel", "9", p(&frames[0])])), 2);

    let out = f.root.join("viz");
    ok(&["viz", "--checkpoint", p(&ckpt), "--out", p(&out), p(&frames[0]), p(&f.data.join("videos/v00001/frames/00001.png"))]);
    assert!(out.join("overlay.png").is_file() && out.join("flow.png").is_file());
    assert!(out.join("config.txt").is_file());

    let out = f.root.join("adapt");
    ok(&[
        "adapt", "--config", p(&f.cfg), "--checkpoint", p(&ckpt), "--data", p(&f.data), "--video", "v00001",
        "--iters", "2", "--out", p(&out),
    ]);
    let adapted = segflow::io::read_checkpoint(&out.join("adapted_v00001.ckpt"), None).unwrap();
    let base = segflow::io::read_checkpoint(&ckpt, None).unwrap();
    assert_ne!(adapted.params, base.params);
    assert_eq!(adapted.object_channel, base.object_channel);
    let unknown = segflow(&["adapt", "--checkpoint", p(&ckpt), "--data", p(&f.data), "--video", "zzz", "--out", p(&out)]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let r = segflow(&["gen", "--videos", "1", "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&r), 1);
}
