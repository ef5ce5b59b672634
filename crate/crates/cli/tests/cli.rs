use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nhmart(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhmart"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn nhmart")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn lattice_json(children_measures: &[f64]) -> String {
    let mut nodes = vec![r#"{"id":0,"parent":null,"measure":1.0,"generation":0}"#.to_string()];
    for (k, m) in children_measures.iter().enumerate() {
        nodes.push(format!(r#"{{"id":{},"parent":0,"measure":{m},"generation":1}}"#, k + 1));
    }
    format!(r#"{{"nodes":[{}]}}"#, nodes.join(","))
}

#[test]
fn validate_ok_and_violation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("good.json"), lattice_json(&[0.25, 0.75])).unwrap();
    fs::write(dir.path().join("bad.json"), lattice_json(&[0.25, 0.5])).unwrap();

    let o = nhmart(&["validate", "good.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok: 3 nodes, 2 leaves, 1 roots"));

    let o = nhmart(&["validate", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!stdout(&o).is_empty());
}

#[test]
fn missing_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nhmart(&["validate", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn decompose_and_norm_of_a_saved_function() {
    let dir = tempfile::tempdir().unwrap();
    let o = nhmart(&["counterexample", "avg", "--n", "8", "--p", "4", "--save", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let o = nhmart(&["decompose", "out/avg_n8_f.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let root = &v["differences"]["0"];
    assert!((root[0].as_f64().unwrap() + 1.0 / 7.0).abs() < 1e-12);
    assert!((root[1].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let o = nhmart(&["norm", "out/avg_n8_f.json", "--p", "4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p,q,extended,norm"));
    let norm: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();

    // the same value appears as the rhs column of the experiment
    let o = nhmart(&["counterexample", "avg", "--n", "8", "--p", "4"], dir.path());
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let rhs: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!((norm - rhs).abs() < 1e-12 * rhs, "{norm} vs {rhs}");
}

#[test]
fn counterexample_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 5] = [
        &["counterexample", "avg", "--n", "4,8,16", "--p", "4"],
        &["counterexample", "basis", "--n", "4", "--levels", "4", "--p", "3"],
        &["counterexample", "mixing", "--delta", "0.25,0.05", "--p", "4"],
        &["counterexample", "bmo-div", "--N", "4,8", "--q", "4", "--r", "2"],
        &["commutator-exp", "--deltas", "0.25,0.1", "--p", "3"],
    ];
    for args in runs {
        let a = nhmart(args, dir.path());
        let b = nhmart(args, dir.path());
        assert!(a.status.success(), "{args:?}: {}", stderr(&a));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        let text = stdout(&a);
        let header = text.lines().next().unwrap();
        let cols = header.split(',').count();
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').count(), cols, "{args:?}: {line}");
        }
    }
}

#[test]
fn avg_json_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = nhmart(&["counterexample", "avg", "--n", "4,8", "--p", "4", "--out", "json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(stderr(&o).contains("convention"));
}

#[test]
fn avg_rejects_p_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = nhmart(&["counterexample", "avg", "--n", "8", "--p", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error:"));
    assert!(o.stdout.is_empty());
}

#[test]
fn saved_mixing_files_feed_mixing_cert_and_para_norm() {
    let dir = tempfile::tempdir().unwrap();
    let o = nhmart(&["counterexample", "mixing", "--delta", "0.25", "--p", "4", "--save", "mx"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let o = nhmart(&["mixing-cert", "mx/mixing_blocks.json", "--p", "4", "--K", "10"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("strong: true"));
    let text = stdout(&o);
    assert!(text.starts_with("node,parent,eps_nocap,eps_cap"));
    let eps: f64 = text.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!((eps - 0.5f64.powf(0.25)).abs() < 1e-9, "{eps}");

    let o = nhmart(
        &["para-norm", "mx/mixing_b.json", "--kind", "pi", "--p", "4", "--q", "2", "--restarts", "4", "--seed", "1", "--dump", "m.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let f: Vec<&str> = row.split(',').collect();
    let lower: f64 = f[3].parse().unwrap();
    let estimate: f64 = f[4].parse().unwrap();
    assert!(lower <= estimate * (1.0 + 1e-12));

    // the dumped matrix goes back through opnorm on the same lattice
    let o = nhmart(
        &["opnorm", "m.csv", "--lattice", "mx/mixing_lattice.json", "--p", "4", "--restarts", "4", "--seed", "1"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let again: f64 = stdout(&o).lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((again - lower).abs() < 1e-9 * lower.max(1.0), "{again} vs {lower}");
}

#[test]
fn opnorm_counting_measure_p2_is_the_largest_singular_value() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.csv"), "3,0\n4,5\n").unwrap();
    let o = nhmart(&["opnorm", "m.csv", "--p", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let est: f64 = stdout(&o).lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((est - 45f64.sqrt()).abs() < 1e-9, "{est}");
}

#[test]
fn stopping_rejects_signed_input_and_accepts_nonnegative() {
    let dir = tempfile::tempdir().unwrap();
    let o = nhmart(&["counterexample", "avg", "--n", "8", "--p", "4", "--save", "out"], dir.path());
    assert!(o.status.success());
    let o = nhmart(&["stopping", "out/avg_n8_f.json", "--k0", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    fs::write(dir.path().join("l.json"), lattice_json(&[0.25, 0.75])).unwrap();
    fs::write(dir.path().join("f.json"), r#"{"lattice":"l.json","leaf_values":[4.0,0.0]}"#).unwrap();
    let o = nhmart(&["stopping", "f.json", "--k0", "0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["violations"], 0);
    assert_eq!(v["generations"][0][0]["id"], 1);
}
