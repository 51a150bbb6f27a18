use std::path::Path;
use std::process::Command;

fn rrl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rrl"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("spawn rrl")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn small_pipeline_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("arch");
    let a = s(&arch);
    let out = rrl(&["synth", "--out", &a, "--images", "12", "--size", "8x8", "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.tsv", "train_ids.txt", "query_ids.txt", "test_ids.txt"] {
        assert!(arch.join(f).exists(), "missing {f}");
    }

    let model = s(&dir.path().join("m.rrlm"));
    let out = rrl(&[
        "train", "--archive", &a, "--ids", &format!("{a}/train_ids.txt"), "--epochs", "2", "--gamma", "8",
        "--blocks", "4", "--out", &model,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&format!("{model}.manifest.json")).exists());

    let store = s(&dir.path().join("test.tsv"));
    let queries = s(&dir.path().join("query.tsv"));
    for (ids, path) in [("test_ids.txt", &store), ("query_ids.txt", &queries)] {
        let out = rrl(&["extract", "--archive", &a, "--ids", &format!("{a}/{ids}"), "--model", &model, "--out", path]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }

    let first_test = std::fs::read_to_string(arch.join("test_ids.txt")).unwrap();
    let first_test = first_test.lines().next().unwrap().to_string();
    let out = rrl(&["query", "--store", &store, "--query", &first_test, "--k", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,id,distance");
    assert_eq!(lines.len(), 3);
    assert!(!text.contains(&format!(",{first_test},")));

    let eval_out = s(&dir.path().join("eval.csv"));
    let ok = rrl(&[
        "eval", "--store", &store, "--query-store", &queries, "--queries", &format!("{a}/query_ids.txt"),
        "--k-max", "2", "--out", &eval_out,
    ]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let csv = std::fs::read_to_string(&eval_out).unwrap();
    assert!(csv.starts_with("k,map,acg,ndcg\n"));
    assert_eq!(csv.lines().count(), 3);

    // k_max larger than the test set is a data error.
    let too_big = rrl(&[
        "eval", "--store", &store, "--query-store", &queries, "--queries", &format!("{a}/query_ids.txt"),
        "--k-max", "1000", "--out", &eval_out,
    ]);
    assert_eq!(too_big.status.code(), Some(2));

    let missing = rrl(&["extract", "--archive", &a, "--model", &s(&dir.path().join("nope.rrlm")), "--out", &store]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.rrlm"));

    assert_eq!(rrl(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(rrl(&["--help"]).status.code(), Some(0));
}

#[test]
fn corrupt_label_map_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("arch");
    let a = s(&arch);
    assert!(rrl(&["synth", "--out", &a, "--images", "4", "--size", "4x4"]).status.success());
    let manifest = std::fs::read_to_string(arch.join("manifest.tsv")).unwrap();
    let map_file = manifest.lines().nth(1).unwrap().split('\t').nth(2).unwrap().to_string();
    let path = arch.join(&map_file);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = "0 0".into();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = rrl(&["graph", "--archive", &a, "--out", &s(&dir.path().join("g.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&map_file) && err.contains("line 3"), "{err}");
}
