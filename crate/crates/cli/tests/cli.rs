use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use forge_core::model::{init_checkpoint, read_checkpoint, write_checkpoint, ModelConfig};
use serde_json::{json, Value};
use tempfile::TempDir;

fn forge(args: &[&str]) -> Output {
    forge_env(args, &[])
}

fn forge_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_forge"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run forge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus() -> String {
    let mut lines = vec![
        json!({"id": "rep", "tokens": vec![7; 40]}),
        json!({"id": "ok", "tokens": (0..50).collect::<Vec<u32>>(), "text": "fn main ( ) { }"}),
        json!({"id": "words", "tokens": [1, 2, 3], "text": "a a a b"}),
        json!({"id": "short", "tokens": vec![7; 31]}),
        json!({"id": "stars", "tokens": [5], "stars": 1}),
    ];
    for i in 0..200u32 {
        let toks: Vec<u32> = if i % 3 == 0 {
            vec![i % 5; 40]
        } else {
            (0..60).map(|k| (k * 7 + i) % 97).collect()
        };
        lines.push(json!({"id": format!("bulk{i}"), "tokens": toks}));
    }
    lines.iter().map(|l| l.to_string() + "\n").collect()
}

fn ids(jsonl: &str) -> Vec<String> {
    jsonl
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect()
}

#[test]
fn flops_prints_estimate() {
    let o = forge(&["flops", "--params", "7e9", "--tokens", "4.05e12"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "1.701e23");
    assert!(stderr(&o).contains("\"subcommand\":\"flops\""));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&forge(&["bogus"])), 1);
    assert_eq!(
        code(&forge(&["flops", "--params", "1.5", "--tokens", "1"])),
        1
    );
    assert_eq!(code(&forge(&["filter"])), 1);
    assert_eq!(code(&forge(&["--help"])), 0);
    let v = forge(&["--version"]);
    assert_eq!(code(&v), 0);
    assert!(stdout(&v).starts_with("forge "));
}

#[test]
fn missing_input_is_io_error() {
    let dir = TempDir::new().unwrap();
    let o = forge(&[
        "filter",
        s(&dir.path().join("nope.jsonl")),
        s(&dir.path().join("out.jsonl")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn filter_empty_input() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.jsonl", "");
    let out = dir.path().join("out.jsonl");
    let o = forge(&["filter", s(&input), s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
    assert_eq!(
        fs::read_to_string(dir.path().join("out.jsonl.verdicts.jsonl")).unwrap(),
        ""
    );
    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["subcommand"], "filter");
}

#[test]
fn filter_rules_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.jsonl", &corpus());
    let out = dir.path().join("out.jsonl");
    let o = forge(&[
        "filter",
        "--rules",
        "repeat,wordfreq,stars",
        s(&input),
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let kept = ids(&fs::read_to_string(&out).unwrap());
    assert_eq!(&kept[..2], &["ok", "short"]);
    assert!(kept
        .iter()
        .all(|id| !id.starts_with("bulk") || id[4..].parse::<u32>().unwrap() % 3 != 0));

    let verdicts: Vec<Value> = fs::read_to_string(dir.path().join("out.jsonl.verdicts.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(verdicts.len(), 205);
    assert_eq!(verdicts[0]["reasons"], json!(["repeat_ngram"]));
    assert_eq!(
        verdicts[0]["spans"][0],
        json!({"start": 0, "end": 40, "n": 1, "count": 40})
    );
    assert_eq!(
        verdicts[2]["reasons"],
        json!(["top_word_freq", "top2_word_freq"])
    );
    assert_eq!(verdicts[4]["reasons"], json!(["low_stars"]));
    assert_eq!(verdicts[1]["kept"], json!(true));
}

#[test]
fn filter_output_independent_of_threads() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.jsonl", &corpus());
    let mut outputs = Vec::new();
    for t in ["1", "4"] {
        let out = dir.path().join(format!("out{t}.jsonl"));
        let o = forge_env(&["filter", s(&input), s(&out)], &[("FORGE_THREADS", t)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let o = forge_env(
        &["filter", s(&input), s(&dir.path().join("x.jsonl"))],
        &[("FORGE_THREADS", "zero")],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn malformed_line_is_reported_and_outputs_removed() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{}{}{}",
        corpus(),
        "{\"id\": \"bad\", \"tokens\": [1, -2]}\n",
        "{\"id\":\"z\",\"tokens\":[]}\n"
    );
    let input = write(dir.path(), "in.jsonl", &text);
    let out = dir.path().join("out.jsonl");
    let o = forge(&["filter", s(&input), s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("in.jsonl:206:"), "{}", stderr(&o));
    assert!(!out.exists());
    assert!(!dir.path().join("out.jsonl.verdicts.jsonl").exists());

    let dup = write(
        dir.path(),
        "dup.jsonl",
        "{\"id\":\"a\",\"tokens\":[]}\n{\"id\":\"a\",\"tokens\":[1]}\n",
    );
    let o = forge(&["filter", s(&dup), s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dup.jsonl:2:"));
}

#[test]
fn decontamination() {
    let dir = TempDir::new().unwrap();
    let eval = write(
        dir.path(),
        "eval.jsonl",
        &format!(
            "{}\n",
            json!({"id": "e", "tokens": (0..20).collect::<Vec<u32>>()})
        ),
    );
    let docs = [
        json!({"id": "copy", "tokens": (0..20).collect::<Vec<u32>>()}),
        json!({"id": "clean", "tokens": (100..140).collect::<Vec<u32>>()}),
    ];
    let input = write(
        dir.path(),
        "in.jsonl",
        &docs
            .iter()
            .map(|d| d.to_string() + "\n")
            .collect::<String>(),
    );
    let out = dir.path().join("out.jsonl");
    let o = forge(&["filter", "--rules", "decontam", s(&input), s(&out)]);
    assert_eq!(code(&o), 1, "needs --decontam-ngrams");
    let o = forge(&[
        "filter",
        "--rules",
        "decontam",
        "--decontam-ngrams",
        s(&eval),
        s(&input),
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(ids(&fs::read_to_string(&out).unwrap()), vec!["clean"]);
}

fn mixture_setup(dir: &Path) -> PathBuf {
    let mk = |tag: &str, n: u32, len: usize| -> String {
        (0..n)
            .map(|i| json!({"id": format!("{tag}{i}"), "tokens": vec![i; len]}).to_string() + "\n")
            .collect()
    };
    write(dir, "a.jsonl", &mk("a", 30, 10));
    write(dir, "b.jsonl", &mk("b", 10, 5));
    write(
        dir,
        "mix.json",
        &json!({"sources": [
            {"name": "a", "path": "a.jsonl", "available_tokens": 300, "source_pct": 0.5},
            {"name": "b", "path": "b.jsonl", "available_tokens": 50, "source_pct": 2.0}
        ]})
        .to_string(),
    )
}

#[test]
fn mix_plan_and_sample() {
    let dir = TempDir::new().unwrap();
    let cfg = mixture_setup(dir.path());
    let plan = dir.path().join("plan.json");
    let o = forge(&["mix", "--config", s(&cfg), "--seed", "1", "--out", s(&plan)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p: Value = serde_json::from_str(&fs::read_to_string(&plan).unwrap()).unwrap();
    assert_eq!(p["total_tokens"], 250);
    assert_eq!(p["entries"][1]["drawn_tokens"], 100);
    assert!(dir.path().join("plan.json.manifest.json").exists());

    let sample = |name: &str, seed: Option<&str>| -> Vec<String> {
        let out = dir.path().join(name);
        let mut args = vec!["mix", "sample", "--plan", s(&plan), "--out", s(&out)];
        if let Some(seed) = seed {
            args.extend(["--seed", seed]);
        }
        let o = forge(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        ids(&fs::read_to_string(&out).unwrap())
    };
    let x = sample("s1.jsonl", None);
    assert_eq!(x, sample("s2.jsonl", Some("1")));
    let y = sample("s3.jsonl", Some("9"));
    assert_ne!(x, y);
    let sorted = |mut v: Vec<String>| {
        v.sort();
        v
    };
    assert_eq!(sorted(x.clone()), sorted(y));
    for i in 0..10 {
        assert_eq!(x.iter().filter(|id| **id == format!("b{i}")).count(), 2);
    }
}

#[test]
fn mix_config_is_required() {
    assert_eq!(code(&forge(&["mix"])), 1);
}

#[test]
fn schedule_csv() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        dir.path(),
        "sched.json",
        &json!({"peak_lr": 3e-4, "warmup_steps": 10, "cosine_horizon_tokens": 1000, "tokens_per_step": 10,
                "truncate_at_tokens": 500, "anneal_tokens": 200})
        .to_string(),
    );
    let csv = dir.path().join("lr.csv");
    let o = forge(&[
        "schedule",
        "--spec",
        s(&spec),
        "--steps",
        "1e2",
        "--csv",
        s(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "step,tokens,lr");
    assert_eq!(rows.len(), 102);
    assert_eq!(rows[6], "5,50,0.00015");
    assert_eq!(rows[11], "10,100,0.0003");
    assert_eq!(rows[71], "70,700,0.0");
}

fn small_model(dir: &Path) -> PathBuf {
    write(
        dir,
        "cfg.json",
        &json!({"model": {"d_model": 16, "n_layers": 2, "n_heads": 2, "n_kv_heads": 1, "vocab_size": 32, "max_seq_len": 16},
                "train": {"batch_size": 2, "seq_len": 16, "seed": 3}})
        .to_string(),
    )
}

#[test]
fn soup_of_identical_checkpoints() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.ckpt");
    let ckpt = init_checkpoint(&ModelConfig::tiny(8, 2, 2, 11, 5), 4).unwrap();
    write_checkpoint(&a, &ckpt).unwrap();
    let out = dir.path().join("s.ckpt");
    let o = forge(&["soup", s(&a), s(&a), s(&a), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&a).unwrap());
    assert_eq!(read_checkpoint(&out).unwrap(), ckpt);

    let other = dir.path().join("b.ckpt");
    write_checkpoint(
        &other,
        &init_checkpoint(&ModelConfig::tiny(8, 1, 2, 11, 5), 4).unwrap(),
    )
    .unwrap();
    let o = forge(&[
        "soup",
        s(&a),
        s(&other),
        "--out",
        s(&dir.path().join("bad.ckpt")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("bad.ckpt").exists());
}

#[test]
fn train_toy_is_reproducible_and_feeds_spike() {
    let dir = TempDir::new().unwrap();
    let cfg = small_model(dir.path());
    let sched = write(
        dir.path(),
        "sched.json",
        &json!({"peak_lr": 3e-3, "warmup_steps": 5, "cosine_horizon_tokens": 1000, "tokens_per_step": 32}).to_string(),
    );
    let run = |name: &str, seed: &str| -> String {
        let metrics = dir.path().join(name);
        let o = forge(&[
            "train-toy",
            "--config",
            s(&cfg),
            "--sched",
            s(&sched),
            "--steps",
            "30",
            "--metrics",
            s(&metrics),
            "--seed",
            seed,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(metrics).unwrap()
    };
    let a = run("m1.csv", "5");
    assert_eq!(a, run("m2.csv", "5"));
    assert_ne!(a, run("m3.csv", "6"));
    assert_eq!(a.lines().next(), Some("step,loss,grad_norm"));
    assert_eq!(a.lines().count(), 31);

    let o = forge(&[
        "spike",
        "--csv",
        s(&dir.path().join("m1.csv")),
        "--window",
        "10",
        "--sigma",
        "7",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["series_name"], "grad_norm");
    assert_eq!(report["n_values"], 30);

    let o = forge(&[
        "spike",
        "--csv",
        s(&dir.path().join("m1.csv")),
        "--column",
        "nope",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_toy_from_jsonl() {
    let dir = TempDir::new().unwrap();
    let cfg = small_model(dir.path());
    let sched = write(
        dir.path(),
        "sched.json",
        &json!({"peak_lr": 1e-3, "warmup_steps": 2, "cosine_horizon_tokens": 500, "tokens_per_step": 32}).to_string(),
    );
    let data = write(
        dir.path(),
        "data.jsonl",
        &(0..4).map(|i| json!({"id": format!("d{i}"), "tokens": (0..20).map(|k| (k + i) % 32).collect::<Vec<u32>>()}).to_string() + "\n").collect::<String>(),
    );
    let metrics = dir.path().join("m.csv");
    let ckpt = dir.path().join("final.ckpt");
    let o = forge(&[
        "train-toy",
        "--config",
        s(&cfg),
        "--sched",
        s(&sched),
        "--steps",
        "12",
        "--metrics",
        s(&metrics),
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&metrics).unwrap().lines().count(), 13);
    assert_eq!(read_checkpoint(&ckpt).unwrap().meta.d_model, 16);

    let bad = write(
        dir.path(),
        "bad.jsonl",
        "{\"id\":\"x\",\"tokens\":[1,2,3]}\nnot json\n",
    );
    let o = forge(&[
        "train-toy",
        "--config",
        s(&cfg),
        "--sched",
        s(&sched),
        "--steps",
        "12",
        "--metrics",
        s(&metrics),
        "--data",
        s(&bad),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.jsonl:2:"), "{}", stderr(&o));
}

#[test]
fn gradcheck_and_diagnose() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        &json!({"d_model": 8, "n_layers": 2, "n_heads": 2, "n_kv_heads": 1, "vocab_size": 11, "max_seq_len": 5}).to_string(),
    );
    let o = forge(&["gradcheck", "--config", s(&cfg), "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);

    let run = |init: &str| -> Value {
        let o = forge(&[
            "diagnose-init",
            "--config",
            s(&cfg),
            "--init",
            init,
            "--docs",
            "5",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        serde_json::from_str(&stdout(&o)).unwrap()
    };
    let a = run("standard");
    assert_eq!(a, run("standard"));
    assert_ne!(a["lambda_act"], run("scaled")["lambda_act"]);
    assert_eq!(
        code(&forge(&[
            "diagnose-init",
            "--config",
            s(&cfg),
            "--init",
            "fancy"
        ])),
        1
    );
}

#[test]
fn footprint_json() {
    let dir = TempDir::new().unwrap();
    let input = write(
        dir.path(),
        "fp.json",
        &json!({"gpu_power_mwh": 100.0, "pue": 1.2, "carbon_intensity_kg_per_kwh": 0.5, "wue_onsite_l_per_kwh": 1.0}).to_string(),
    );
    let manifest = dir.path().join("run.json");
    let o = forge(&["footprint", "--json", s(&input), "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fp: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((fp["co2_tonnes"].as_f64().unwrap() - 60.0).abs() < 1e-9);
    assert!((fp["water_kl"].as_f64().unwrap() - 120.0).abs() < 1e-9);
    assert!(manifest.exists());

    let bad = write(
        dir.path(),
        "bad.json",
        &json!({"gpu_power_mwh": 1.0, "pue": 0.5, "carbon_intensity_kg_per_kwh": 0.5}).to_string(),
    );
    assert_eq!(code(&forge(&["footprint", "--json", s(&bad)])), 1);
}
