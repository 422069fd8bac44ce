use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tfcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfcnet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_data(dir: &Path, train: usize, val: usize) {
    let o = tfcnet(&[
        "gen-data",
        "--train-count",
        &train.to_string(),
        "--val-count",
        &val.to_string(),
        "--seed",
        "5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_data_writes_containers_and_manifest() {
    let tmp = TempDir::new().unwrap();
    gen_data(tmp.path(), 4, 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    let videos = manifest["videos"].as_array().unwrap();
    assert_eq!(videos.len(), 6);
    for v in videos {
        for field in [
            "id",
            "label",
            "split",
            "difficulty",
            "seed",
            "frames",
            "height",
            "width",
        ] {
            assert!(!v[field].is_null(), "missing {field}");
        }
        assert!(tmp.path().join(v["file"].as_str().unwrap()).exists());
    }
}

#[test]
fn train_eval_and_plan_dump() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    gen_data(&data, 8, 4);
    let config = tmp.path().join("run.cfg");
    fs::write(
        &config,
        format!(
            "# two quick epochs\nepochs = 2\nlr_drops = 1\ntfc = v3d\ndata = {}\nout = {}\n",
            data.display(),
            out.display()
        ),
    )
    .unwrap();

    let o = tfcnet(&["train", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let printed = stdout(&o);
    assert!(printed.starts_with("epoch,split,lr,top1,top5,loss,l1"));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(out.join("metrics.json").exists());
    assert!(out.join("checkpoint/manifest.json").exists());

    let ckpt = out.join("checkpoint");
    let o = tfcnet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "val"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval_row = stdout(&o).lines().nth(1).unwrap().to_string();
    let last_val = printed.lines().rfind(|l| l.contains(",val,")).unwrap();
    assert_eq!(eval_row, last_val);

    let o = tfcnet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dump-plan"]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    let centres: Vec<u64> = (0..16).map(|i| i * 4 + 1).collect();
    let indices: Vec<u64> = lines[0]["indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(indices, centres);

    let o = tfcnet(&["train", "--config", config.to_str().unwrap(), "--dump-plan"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 8);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "learning_rate = 0.1\n").unwrap();
    assert_eq!(
        tfcnet(&["train", "--config", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let missing = tmp.path().join("missing.cfg");
    fs::write(&missing, format!("data = {}\n", tmp.path().join("nowhere").display())).unwrap();
    assert_eq!(
        tfcnet(&["train", "--config", missing.to_str().unwrap()]).status.code(),
        Some(3)
    );

    assert_eq!(
        tfcnet(&["gen-data", "--grid", "1", "--out", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(tfcnet(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn cost_reports_text_json_and_ratios() {
    let o = tfcnet(&["cost", "--tfc", "v3d", "--baseline"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains(".tfc"));
    assert!(text.contains("params / no TFC"));

    let o = tfcnet(&["cost", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["total_params"].as_u64().unwrap() > 0);

    let o = tfcnet(&["cost", "--ratios", "256,256,32,3"]);
    assert!(stdout(&o).contains("tfc flops / temporal_conv flops: 0.041667"));
}
