use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_absgrad"))
        .args(args)
        .current_dir(manifest_dir())
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const GOLDEN: &[(&str, &[&str])] = &[
    (
        "eval_phimu",
        &["eval", "--problem", "data/phimu.json", "--x", "0.5,-0.25"],
    ),
    (
        "grad_phimu_xi0",
        &[
            "grad",
            "--problem",
            "data/phimu.json",
            "--mu",
            "1",
            "--x",
            "0,0",
            "--xi",
            "0,0,0",
        ],
    ),
    (
        "grad_phimu_jax",
        &[
            "grad",
            "--problem",
            "data/phimu.json",
            "--mu",
            "0.5",
            "--x",
            "0,0",
            "--preset",
            "jax",
            "--format",
            "json",
        ],
    ),
    (
        "likq_phimu",
        &["likq", "--problem", "data/phimu.json", "--x", "0,0"],
    ),
    (
        "limiting_phimu_m1_csv",
        &[
            "limiting",
            "--problem",
            "builtin:phimu",
            "--mu",
            "-1",
            "--format",
            "csv",
        ],
    ),
    (
        "limiting_phimu_1_json",
        &["limiting", "--problem", "builtin:phimu", "--mu", "1"],
    ),
    (
        "figure_phimu_m1",
        &["figure", "--problem", "data/phimu.json", "--mu", "-1"],
    ),
    (
        "figure_levels",
        &[
            "figure",
            "--problem",
            "builtin:phimu",
            "--levels",
            "--grid",
            "3",
        ],
    ),
    (
        "sample_phimu_m1",
        &[
            "sample",
            "--problem",
            "builtin:phimu",
            "--mu",
            "-1",
            "--at-anchor",
            "--count",
            "2000",
            "--format",
            "csv",
        ],
    ),
    ("train_short", &["train", "--iterations", "20"]),
];

#[test]
fn golden_outputs() {
    let dir = manifest_dir().join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (name, args) in GOLDEN {
        let got = stdout(args);
        let path = dir.join(format!("{name}.txt"));
        if update {
            fs::write(&path, &got).unwrap();
            continue;
        }
        let want = fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
        assert_eq!(got, want, "golden mismatch for {name}");
    }
}

#[test]
fn outputs_are_byte_stable() {
    for (_, args) in GOLDEN {
        assert_eq!(stdout(args), stdout(args));
    }
}

#[test]
fn figure_rows_follow_the_piece_formula() {
    for mu in [1.0f64, 0.0, -1.0] {
        let mu_s = mu.to_string();
        let csv = stdout(&["figure", "--problem", "builtin:phimu", "--mu", &mu_s]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("sigma_1,sigma_2,sigma_3,g_1,g_2,sampled")
        );
        let mut count = 0;
        for line in lines {
            let f: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
            let (s1, s2, s3) = (f[0], f[1], f[2]);
            assert_eq!(f[3], s1 - s2);
            assert_eq!(f[4], s2 - mu * s3);
            count += 1;
        }
        assert_eq!(count, 8);
    }
}

#[test]
fn spurious_rows_are_not_sampled() {
    let csv = stdout(&["figure", "--problem", "builtin:phimu", "--mu", "-1"]);
    let unsampled: Vec<&str> = csv.lines().filter(|l| l.ends_with(",0")).collect();
    assert_eq!(unsampled, vec!["-1,-1,-1,0.0,-2.0,0", "1,1,1,0.0,2.0,0"]);
}

#[test]
fn presets_follow_the_tool_table() {
    // at the origin with mu = 0.5, xi = 1 gives (0, 0.5) and xi = 0 gives (0, 0)
    for (preset, want) in [
        ("jax", "0.0,0.5"),
        ("tensorflow", "0.0,0.0"),
        ("pytorch", "0.0,0.0"),
        ("reversediff", "0.0,0.5"),
        ("adolc", "0.0,0.0"),
        ("codipack", "0.0,0.0"),
    ] {
        let got = stdout(&[
            "grad",
            "--problem",
            "builtin:phimu",
            "--mu",
            "0.5",
            "--x",
            "0,0",
            "--preset",
            preset,
        ]);
        assert_eq!(got.trim(), want, "preset {preset}");
    }
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn validation_errors_exit_with_one() {
    let cases: &[&[&str]] = &[
        &[
            "grad",
            "--problem",
            "builtin:phimu",
            "--x",
            "0,0",
            "--xi",
            "2,0,0",
        ],
        &[
            "grad",
            "--problem",
            "builtin:phimu",
            "--x",
            "1,0.5",
            "--xi",
            "0,0,0",
        ],
        &[
            "grad",
            "--problem",
            "builtin:phimu",
            "--x",
            "0,0",
            "--preset",
            "theano",
        ],
        &["grad", "--problem", "builtin:phimu", "--x", "0,0"],
        &["eval", "--problem", "missing.json"],
        &["eval", "--problem", "builtin:nothing"],
        &["eval", "--problem", "builtin:phimu", "--x", "1,2,3"],
        &[
            "likq",
            "--problem",
            "builtin:phimu",
            "--x",
            "0,0",
            "--cap",
            "10",
        ],
        &[
            "sample",
            "--problem",
            "builtin:phimu",
            "--x",
            "0,0",
            "--radius",
            "0",
        ],
        &["train", "--zeta", "1.5"],
        &["train", "--step", "-1"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let e = error_json(&out);
        assert_eq!(e["exit_code"], 1);
        assert!(e["error"].is_string() && e["message"].is_string());
    }
}

#[test]
fn divergence_exits_with_two() {
    let out = run(&["train", "--step", "1000", "--iterations", "50"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "divergence");
}

#[test]
fn verify_suites_pass() {
    let out = stdout(&["verify", "--instances", "5"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["combination"]["passed"], true);
    assert_eq!(v["batch"]["passed"], true);
}

#[test]
fn mu_requires_a_tagged_constant() {
    let dir = std::env::temp_dir().join(format!("absgrad-cli-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join("abs.json");
    fs::write(
        &path,
        r#"{"n_inputs":1,"nodes":[{"op":"input","value":0},{"op":"abs","args":[0]}],"output":1}"#,
    )
    .unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(
        stdout(&["grad", "--problem", p, "--x", "0", "--kink-value", "0.25"]).trim(),
        "0.25"
    );
    let out = run(&["eval", "--problem", p, "--x", "1", "--mu", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_artifacts() {
    let dir = std::env::temp_dir().join(format!("absgrad-train-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let traj = dir.join("traj.csv");
    let ckpt = dir.join("net.json");
    stdout(&[
        "train",
        "--iterations",
        "5",
        "--batch-size",
        "4",
        "--trajectory",
        traj.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(&traj).unwrap();
    assert!(csv.starts_with("iteration,loss,grad_norm\n"));
    assert_eq!(csv.lines().count(), 6);
    let net: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(net["layer_dims"], serde_json::json!([1, 1, 1]));
    // the checkpoint resumes training
    let resumed = stdout(&[
        "train",
        "--network",
        ckpt.to_str().unwrap(),
        "--iterations",
        "1",
    ]);
    assert!(resumed.contains("\"final_loss\""));
}

#[test]
fn sample_dump_has_one_row_per_kept_sample() {
    let dir = std::env::temp_dir().join(format!("absgrad-dump-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let dump = dir.join("samples.csv");
    stdout(&[
        "sample",
        "--problem",
        "builtin:phimu",
        "--x",
        "0,0",
        "--count",
        "100",
        "--dump",
        dump.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&dump).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("x_1,x_2,sigma_1,sigma_2,sigma_3,g_1,g_2")
    );
    assert_eq!(lines.count(), 100);
}
