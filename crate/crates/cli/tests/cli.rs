use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use xling::align::AlignmentMap;
use xling::corpus::{read_conllu, Split};
use xling::numerics::{procrustes, rng, Matrix};

const TINY: &str = r#"out = "out"

[languages.a]
corpus = "a.txt"
train = "a-train.conllu"
dev = "a-dev.conllu"
test = "a-test.conllu"

[languages.b]
corpus = "b.txt"
train = "b-train.conllu"
dev = "b-dev.conllu"
test = "b-test.conllu"

[lm]
char_dim = 4
filters = [[1, 4], [2, 4]]
lstm_size = 8
projection = 4
batch_size = 8
epochs = 1

[parser]
lstm_size = 4
lstm_layers = 1
arc_mlp = 6
label_mlp = 4
batch_size = 8
epochs = 2
patience = 2

[align]
dictionary_train = "dict-train.txt"
dictionary_test = "dict-test.txt"
"#;

fn xling(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xling"))
        .current_dir(dir)
        .env_remove("XLING_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = xling(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A small synthetic pair with a config sized for seconds-long runs.
fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--dir", ".", "--tokens", "1500", "--trees", "30"],
    );
    fs::write(dir.path().join("config.toml"), TINY).unwrap();
    dir
}

fn vec_file(words: &[String], m: &Matrix) -> String {
    let mut s = format!("{} {}\n", m.rows(), m.cols());
    for (i, w) in words.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{w} {}", row.join(" "));
    }
    s
}

fn write_layers(prefix: &Path, words: &[String], layers: &[Matrix]) {
    for (j, m) in layers.iter().enumerate() {
        fs::write(format!("{}.{j}.vec", prefix.display()), vec_file(words, m)).unwrap();
    }
}

fn write_pairs(path: &Path, pairs: impl Iterator<Item = (String, String)>) {
    let body: String = pairs.map(|(s, t)| format!("{s} {t}\n")).collect();
    fs::write(path, body).unwrap();
}

#[test]
fn trains_monolingual_and_polyglot_models() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &["-c", "config.toml", "train-lm", "--languages", "a"]);
    ok(d, &["-c", "config.toml", "train-lm", "--languages", "a,b"]);
    for name in ["lm-a.json", "lm-a-b.json"] {
        assert!(d.join("out").join(name).is_file());
    }
    let log = fs::read_to_string(d.join("out/lm-a-b.json.epochs.tsv")).unwrap();
    let mut lines = log.lines();
    assert!(lines.next().unwrap().starts_with("# config-hash: "));
    assert_eq!(lines.next(), Some("epoch\tmean_loss\tbatches"));
    assert_eq!(lines.count(), 2);

    // Same inputs and seed, same bytes.
    let first = fs::read(d.join("out/lm-a.json")).unwrap();
    ok(
        d,
        &[
            "-c",
            "config.toml",
            "train-lm",
            "--languages",
            "a",
            "--out",
            "again.json",
        ],
    );
    assert_eq!(first, fs::read(d.join("again.json")).unwrap());
}

#[test]
fn missing_corpus_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("config.toml"),
        "[languages.x]\ncorpus = \"nowhere/x.txt\"\n",
    )
    .unwrap();
    let out = xling(
        dir.path(),
        &["-c", "config.toml", "train-lm", "--languages", "x"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere/x.txt"), "{err}");

    let out = xling(dir.path(), &["train-lm", "--languages", "x=missing.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        xling(dir.path(), &["no-such-command"]).status.code(),
        Some(1)
    );
    assert_eq!(xling(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn translation_recovers_a_planted_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (n, dim) = (200, 8);
    let mut r = rng::seeded(5);
    let rotation = procrustes(
        &Matrix::randn(dim, dim, 1.0, &mut r),
        &Matrix::identity(dim),
    )
    .unwrap();
    let src_words: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let tgt_words: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let src: Vec<Matrix> = (0..3).map(|_| Matrix::randn(n, dim, 1.0, &mut r)).collect();
    let tgt: Vec<Matrix> = src
        .iter()
        .map(|m| {
            m.matmul_t(&rotation)
                .add(&Matrix::uniform(n, dim, 5e-4, &mut r))
        })
        .collect();
    write_layers(&d.join("src"), &src_words, &src);
    write_layers(&d.join("tgt"), &tgt_words, &tgt);
    let pair = |i: usize| (format!("s{i}"), format!("t{i}"));
    write_pairs(&d.join("train.txt"), (0..100).map(pair));
    write_pairs(&d.join("test.txt"), (100..n).map(pair));

    ok(
        d,
        &[
            "align",
            "--source",
            "src",
            "--target",
            "tgt",
            "--dictionary",
            "train.txt",
            "--out",
            "map.txt",
        ],
    );
    let report = ok(
        d,
        &[
            "translate-eval",
            "--source",
            "src",
            "--target",
            "tgt",
            "--map",
            "map.txt",
            "--dictionary",
            "test.txt",
        ],
    );
    let mut lines = report.lines();
    assert!(lines.next().unwrap().starts_with("# config-hash: "));
    assert_eq!(
        lines.next(),
        Some("layer\tmethod\tk\tevaluated\tskipped\tp_at_1")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let p: f64 = row.rsplit('\t').next().unwrap().parse().unwrap();
        assert!(p >= 0.95, "{row}");
    }
}

#[test]
fn identical_tables_align_to_identity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut r = rng::seeded(9);
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let layers: Vec<Matrix> = (0..3).map(|_| Matrix::randn(30, 5, 1.0, &mut r)).collect();
    write_layers(&d.join("x"), &words, &layers);
    write_pairs(
        &d.join("dict.txt"),
        words.iter().map(|w| (w.clone(), w.clone())),
    );
    for method in ["procrustes", "least-squares"] {
        ok(
            d,
            &[
                "align",
                "--source",
                "x",
                "--target",
                "x",
                "--dictionary",
                "dict.txt",
                "--method",
                method,
                "--out",
                "map.txt",
            ],
        );
        let map = AlignmentMap::from_text(&fs::read_to_string(d.join("map.txt")).unwrap()).unwrap();
        for w in &map.maps {
            assert!(w.max_abs_diff(&Matrix::identity(5)) <= 1e-10, "{method}");
        }
    }
}

#[test]
fn empty_test_dictionary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let words = vec!["w0".to_string(), "w1".to_string()];
    let layers: Vec<Matrix> = (0..3).map(|_| Matrix::identity(2)).collect();
    write_layers(&d.join("x"), &words, &layers);
    fs::write(d.join("empty.txt"), "").unwrap();
    let out = xling(
        d,
        &[
            "translate-eval",
            "--source",
            "x",
            "--target",
            "x",
            "--dictionary",
            "empty.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn eval_parse_of_gold_against_itself() {
    let dir = fixture();
    let out = ok(
        dir.path(),
        &[
            "eval-parse",
            "--pred",
            "a-test.conllu",
            "--gold",
            "a-test.conllu",
        ],
    );
    assert_eq!(out.trim(), "UAS 100.00 LAS 100.00");
}

#[test]
fn zero_target_parser_over_two_sources() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &["-c", "config.toml", "train-lm", "--languages", "a,b"]);
    let lm = "out/lm-a-b.json";
    ok(
        d,
        &[
            "-c",
            "config.toml",
            "train-parser",
            "--lm",
            lm,
            "--source",
            "a",
            "--source",
            "b=b-dev.conllu",
            "--dev",
            "a",
        ],
    );
    let log = fs::read_to_string(d.join("out/parser.json.epochs.tsv")).unwrap();
    assert_eq!(
        log.lines().nth(1),
        Some("epoch\tmean_loss\tdev_uas\tdev_las")
    );

    ok(
        d,
        &[
            "-c",
            "config.toml",
            "parse",
            "--lm",
            lm,
            "--model",
            "out/parser.json",
            "--input",
            "b",
            "--out",
            "pred.conllu",
        ],
    );
    let pred = read_conllu(&fs::read(d.join("pred.conllu")).unwrap(), "b", Split::Test).unwrap();
    let gold = read_conllu(
        &fs::read(d.join("b-test.conllu")).unwrap(),
        "b",
        Split::Test,
    )
    .unwrap();
    assert_eq!(pred.len(), gold.len());
    for (p, g) in pred.sentences.iter().zip(&gold.sentences) {
        assert_eq!(p.tokens, g.tokens);
    }
    let scores = ok(
        d,
        &[
            "eval-parse",
            "--pred",
            "pred.conllu",
            "--gold",
            "b-test.conllu",
        ],
    );
    assert!(scores.starts_with("UAS "), "{scores}");

    // A model trained on LM layers refuses other representations.
    fs::write(d.join("v.vec"), "1 2\nx 0.5 0.5\n").unwrap();
    let out = xling(
        d,
        &[
            "-c",
            "config.toml",
            "parse",
            "--vectors",
            "v.vec",
            "--model",
            "out/parser.json",
            "--input",
            "b",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_rows_skip_and_determinism() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &["-c", "config.toml", "train-lm", "--languages", "b"]);
    ok(d, &["-c", "config.toml", "train-lm", "--languages", "a,b"]);
    let mut cfg = TINY.to_string();
    cfg.push_str(
        "\n[simulate]\ntarget = \"b\"\nhub = \"a\"\nsweep = [0, 5]\nseeds = [1, 2]\n\
         mono_lm = \"out/lm-b.json\"\nhub_lm = \"out/lm-a-b.json\"\nplot_data = true\n",
    );
    fs::write(d.join("config.toml"), cfg).unwrap();

    let run = |out: &str| -> String {
        ok(d, &["-c", "config.toml", "simulate", "--out", out]);
        fs::read_to_string(d.join(out)).unwrap()
    };
    let first = run("s1.tsv");
    let lines: Vec<&str> = first.lines().collect();
    assert!(lines[0].starts_with("# config-hash: "));
    assert_eq!(lines[1], "condition\tD_tau\tseed\tUAS\tLAS");
    assert!(lines
        .iter()
        .any(|l| l.starts_with("# skipped: mono at D_tau=0")));
    let rows: Vec<Vec<&str>> = lines
        .iter()
        .skip(2)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').collect())
        .collect();
    // +hub at both sizes, mono only with target trees; two seeds each.
    assert_eq!(rows.len(), 6);
    assert!(!rows.iter().any(|r| r[0] == "mono" && r[1] == "0"));
    assert_eq!(rows.iter().filter(|r| r[0] == "+hub").count(), 4);
    assert!(d.join("s1.plot.tsv").is_file());

    let second = run("s2.tsv");
    let body = |s: &str| s.lines().skip(1).map(String::from).collect::<Vec<_>>();
    assert_eq!(body(&first), body(&second));
}

#[test]
fn simulate_needs_enough_target_trees() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &["-c", "config.toml", "train-lm", "--languages", "b"]);
    let mut cfg = TINY.to_string();
    cfg.push_str("\n[simulate]\ntarget = \"b\"\nsweep = [1000]\nmono_lm = \"out/lm-b.json\"\n");
    fs::write(d.join("config.toml"), cfg).unwrap();
    let out = xling(d, &["-c", "config.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1000"));
}
