use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use adafocus::formats::{read_records, read_rows, AccuracyRow, CurveRow, FrontierRow};

const CONFIG: &str = "\
seed = 3
data.height = 32
data.width = 32
data.frames = 8
data.glyph = 8
data.classes = 4
data.trajectory = static
data.window = 4
data.noise = 0.1
data.distractors = 1
data.train = 160
data.val = 40
data.test = 40
model.cube = 16x16x4
model.max_cubes = 2
model.global_channels = 4,8
model.local_channels = 8,16,32,32
train.epochs = 6
train.policy_epochs = 4
train.batch_size = 8
train.learning_rate = 0.1
train.policy_learning_rate = 0.05
train.momentum = 0.9
train.weight_decay = 0.0001
train.mode = featuregrad
train.schedule = two_stage
train.policy = learned
train.offsets = centered
";

fn adafocus(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adafocus"))
        .args(args)
        .current_dir(root)
        .env_remove("ADAFOCUS_SEED")
        .output()
        .expect("spawn adafocus")
}

fn ok(args: &[&str], root: &Path) {
    let out = adafocus(args, root);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn fresh(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("run.conf"), CONFIG).unwrap();
    dir
}

/// One generate + train + eval (learned and random cubes) shared by the tests below.
fn trained() -> &'static Path {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    ROOT.get_or_init(|| {
        let root = fresh("trained");
        ok(&["generate", "--config", "run.conf", "--out", "data"], &root);
        ok(&["train", "--dataset", "data", "--config", "run.conf", "--out", "run"], &root);
        for (policy, out) in [("learned", "eval"), ("random", "eval_random")] {
            ok(
                &["eval", "--checkpoint", "run/checkpoint.ackp", "--dataset", "data", "--policy", policy, "--out", out],
                &root,
            );
        }
        root
    })
}

#[test]
fn generate_writes_every_split_and_is_repeatable() {
    let root = fresh("generate");
    ok(&["generate", "--config", "run.conf", "--out", "a"], &root);
    ok(&["generate", "--config", "run.conf", "--out", "b"], &root);
    for split in ["train", "val", "test"] {
        assert!(root.join("a").join(split).is_dir(), "{split}");
    }
    let a = std::fs::read(root.join("a/manifest.csv")).unwrap();
    assert_eq!(a, std::fs::read(root.join("b/manifest.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 160 + 40 + 40);
}

#[test]
fn missing_config_key_is_a_usage_error_naming_the_key() {
    let root = fresh("missing_key");
    let text: String = CONFIG.lines().filter(|l| !l.starts_with("data.noise")).map(|l| format!("{l}\n")).collect();
    std::fs::write(root.join("run.conf"), text).unwrap();
    let out = adafocus(&["generate", "--config", "run.conf", "--out", "data"], &root);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.noise"));
}

#[test]
fn unknown_subcommand_and_infeasible_budget_exit_with_one() {
    let root = trained();
    assert_eq!(adafocus(&["bogus"], root).status.code(), Some(1));
    let out = adafocus(&["solve-thresholds", "--records", "eval/records.csv", "--budget", "1", "--out", "s.csv"], root);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_curve_has_one_row_per_epoch_and_loss_falls() {
    let curve: Vec<CurveRow> = read_rows(&trained().join("run/training_curve.csv")).unwrap();
    assert_eq!(curve.len(), 6 + 4);
    assert!(curve.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    let stage_one: Vec<&CurveRow> = curve.iter().filter(|r| r.phase == 0).collect();
    assert_eq!(stage_one.len(), 6);
    assert!(stage_one.last().unwrap().mean_loss < stage_one[0].mean_loss);
}

#[test]
fn eval_reports_every_step_with_increasing_cost() {
    let root = trained();
    let table: Vec<AccuracyRow> = read_rows(&root.join("eval/accuracy.csv")).unwrap();
    assert_eq!(table.len(), 3);
    assert!(table[0].mean_iou.is_none() && table[1..].iter().all(|r| r.mean_iou.is_some()));
    let records = read_records(&root.join("eval/records.csv")).unwrap();
    assert_eq!(records.len(), 40);
    for r in &records {
        assert!(r.steps.windows(2).all(|w| w[1].cumulative_madds > w[0].cumulative_madds));
    }
}

#[test]
fn learned_cubes_overlap_the_glyph_more_than_random_cubes() {
    let root = trained();
    let iou = |dir: &str| -> f64 {
        let table: Vec<AccuracyRow> = read_rows(&root.join(dir).join("accuracy.csv")).unwrap();
        table.iter().filter_map(|r| r.mean_iou).sum()
    };
    let (learned, random) = (iou("eval"), iou("eval_random"));
    assert!(learned > random, "learned {learned} vs random {random}");
}

#[test]
fn sweep_emits_four_policies_per_budget_within_budget() {
    let root = trained();
    let table: Vec<AccuracyRow> = read_rows(&root.join("eval/accuracy.csv")).unwrap();
    let (lo, hi) = (table[0].mean_cumulative_madds, table[2].mean_cumulative_madds);
    let budgets: Vec<u64> = [0.2, 0.5, 0.8].iter().map(|f| (lo + f * (hi - lo)) as u64).collect();
    let list = budgets.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    ok(
        &["sweep", "--records", "eval/records.csv", "--budgets", &list, "--out", "frontier.csv", "--schedules", "schedules"],
        root,
    );
    let rows: Vec<FrontierRow> = read_rows(&root.join("frontier.csv")).unwrap();
    assert_eq!(rows.len(), budgets.len() * 4);
    for r in rows.iter().filter(|r| r.policy != "random") {
        assert!(r.realized_cost <= r.budget as f64, "{r:?}");
    }
    for b in &budgets {
        assert!(root.join(format!("schedules/schedule_{b}.csv")).is_file());
    }
}

#[test]
fn solve_thresholds_writes_a_schedule() {
    let root = trained();
    let table: Vec<AccuracyRow> = read_rows(&root.join("eval/accuracy.csv")).unwrap();
    let budget = table[1].mean_cumulative_madds as u64;
    ok(
        &["solve-thresholds", "--records", "eval/records.csv", "--budget", &budget.to_string(), "--out", "schedule.csv"],
        root,
    );
    let schedule = adafocus::formats::read_schedule(&root.join("schedule.csv")).unwrap();
    assert_eq!(schedule.budget, budget);
}

#[test]
fn gradcheck_passes() {
    let out = adafocus(&["gradcheck"], Path::new(env!("CARGO_TARGET_TMPDIR")));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("op,probes,max_rel_error,status\n"));
    assert!(!text.contains("FAIL"));
}
