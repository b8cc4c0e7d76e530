mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use common::mock::{self, MockServer};
use common::*;
use qiguard::cli::{dispatch, manifest_key, manifest_path, sha256_file, EvalDocument, RunManifest};
use qiguard::config::Config;
use qiguard::record::{read_records, serialize_record, write_records, Domain, Label, Record};
use serde_json::Value;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn qiguard(args: &[&str], stdin: &str) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("qiguard").chain(args.iter().copied());
    let code = dispatch(argv, &mut stdin.as_bytes(), &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> Run {
    let r = qiguard(args, "");
    assert_eq!(r.code, 0, "{args:?}\n{}", r.err);
    r
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn safe_record(id: String, i: usize) -> Record {
    Record {
        id,
        domain: Domain::Medical,
        question: format!("What is a sensible routine number {i} for staying active?"),
        answer: format!("Gentle walking and stretching on most days, variant {i}, is a reasonable start."),
        label: Label::Safe,
        generator: None,
        axes: None,
        subtype: None,
        source: "hand".into(),
        extra: BTreeMap::new(),
    }
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let r = qiguard(&[], "");
    assert_eq!(r.code, 1);
    assert!(r.err.contains("Usage"), "{}", r.err);
}

#[test]
fn unknown_subcommand_fails() {
    let r = qiguard(&["frobnicate"], "");
    assert_eq!(r.code, 1);
    assert!(!r.err.is_empty());
}

#[test]
fn help_goes_to_stdout() {
    let r = qiguard(&["--help"], "");
    assert_eq!(r.code, 0);
    for cmd in [
        "embed",
        "train",
        "calibrate",
        "score",
        "eval",
        "gen",
        "validate",
        "stress-test",
    ] {
        assert!(r.out.contains(cmd), "{cmd}");
    }
}

#[test]
fn missing_profile_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.profile");
    let r = qiguard(
        &[
            "score",
            "--profile",
            s(&missing),
            "--cache",
            s(&dir.path().join("c.bin")),
        ],
        "",
    );
    assert_eq!(r.code, 2);
    assert!(r.err.contains("nope.profile"), "{}", r.err);
}

#[test]
fn bad_config_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[detector]\nbogus = 1\n").unwrap();
    let r = qiguard(&["--config-file", s(&cfg), "default-config"], "");
    assert_eq!(r.code, 1);
    assert!(r.err.contains("bogus"), "{}", r.err);
}

#[test]
fn default_config_parses_back() {
    let r = ok(&["default-config"]);
    let cfg: Config = toml::from_str(&r.out).unwrap();
    assert_eq!(cfg, Config::default());
}

#[test]
fn validate_emits_one_verdict_per_line() {
    let clean = serialize_record(&safe_record("a".into(), 1));
    let mut leaky = safe_record("b".into(), 2);
    leaky.answer = "Call the clinic at 555-867-5309 to book.".into();
    let input = format!("{clean}\n\n{}\n", serialize_record(&leaky));
    let r = qiguard(&["validate"], &input);
    assert_eq!(r.code, 0, "{}", r.err);
    let lines: Vec<Value> = r.out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["id"], "a");
    assert_eq!(lines[0]["accepted"], true);
    assert_eq!(lines[1]["accepted"], false);
    assert_eq!(lines[1]["violations"][0]["rule_id"], "phone");

    let r = qiguard(&["validate"], "{\"id\": 3}\n");
    assert_eq!(r.code, 1);
}

fn write_config(dir: &Path, base_url: &str) -> PathBuf {
    let mut text = String::from("[embedding]\nretry_attempts = 2\nretry_base_delay_ms = 1\n");
    for name in ["enc_a", "enc_b", "enc_c"] {
        text.push_str(&format!(
            "[[embedding.stack]]\nname = \"{name}\"\nbase_url = \"{base_url}\"\nmodel_id = \"{name}\"\nexpected_dim = 8\ntimeout_secs = 10\nmax_in_flight = 2\n"
        ));
    }
    text.push_str(
        "[density]\npca_dim = 6\ngmm_components = 2\nnu_candidates = [0.05, 0.1]\nnu_folds = 3\n\
         [eval]\nmin_stratum_n = 3\n\
         [synth]\nnetwork_attempts = 1\nnetwork_backoff_ms = 1\n\
         [synth.batches]\nbaseline = 20\nindirect_qi = 10\nmixed = 10\nheld_out_baseline = 15\nborderline_aug = 20\nborderline_eval = 15\n",
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn write_plan(dir: &Path, base_url: &str) -> PathBuf {
    std::fs::copy(fixture_path("seeds/medical.jsonl"), dir.join("seeds.jsonl")).unwrap();
    let mut text = String::from("domain = \"medical\"\nseed = 3\nseed_corpus = \"seeds.jsonl\"\n");
    for name in ["qwen", "mistral", "phi3", "yi"] {
        text.push_str(&format!(
            "[[generators]]\nname = \"{name}\"\nbase_url = \"{base_url}\"\nmodel_id = \"{name}\"\nmax_in_flight = 2\n"
        ));
    }
    text.push_str("[roles]\ntraining = [\"qwen\", \"mistral\"]\nheld_out = \"phi3\"\nborderline_aug = \"phi3\"\nborderline_eval = \"yi\"\n");
    let path = dir.join("plan.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Digest recorded for `file` among a manifest's outputs.
fn output_digest(m: &RunManifest, file: &Path) -> String {
    m.outputs[&manifest_key(file)].clone()
}

fn input_digest(m: &RunManifest, file: &Path) -> String {
    m.inputs
        .get(&manifest_key(file))
        .unwrap_or_else(|| panic!("{} not among inputs {:?}", file.display(), m.inputs.keys()))
        .clone()
}

#[test]
fn offline_pipeline_chains_manifests() {
    let server = MockServer::start(mock::standard_handler(8));
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &server.base_url);
    let plan = write_plan(d, &server.base_url);
    let c = s(&cfg);

    // Generation.
    let gen_dir = d.join("gen");
    ok(&["--config-file", c, "gen", "--plan", s(&plan), "--out", s(&gen_dir)]);
    let gen_manifest = RunManifest::load(&gen_dir.join("manifest.json")).unwrap();
    let rec = |batch: &str| gen_dir.join("records").join(format!("{batch}.jsonl"));
    let train_unsafe: Vec<PathBuf> = ["qwen", "mistral"]
        .iter()
        .flat_map(|g| ["baseline", "indirect_qi", "mixed"].map(|m| rec(&format!("{g}.{m}"))))
        .collect();
    let (held_out, aug, border_eval) = (
        rec("phi3.held_out_baseline"),
        rec("phi3.borderline_aug"),
        rec("yi.borderline_eval"),
    );
    for f in train_unsafe.iter().chain([&held_out, &aug, &border_eval]) {
        assert!(!read_records(f).unwrap().is_empty(), "{}", f.display());
        assert_eq!(output_digest(&gen_manifest, f), sha256_file(f).unwrap());
    }
    let ledger: Value = serde_json::from_str(&std::fs::read_to_string(gen_dir.join("ledger.json")).unwrap()).unwrap();
    assert!(
        ledger["entries"]["qwen/none"]["rejects_by_rule"]["ssn"]
            .as_u64()
            .unwrap()
            > 0
    );

    // Hand-written safe records.
    let safe: Vec<Record> = (0..90).map(|i| safe_record(format!("safe-{i:03}"), i)).collect();
    let (safe_train, safe_hold, safe_test) = (
        d.join("safe_train.jsonl"),
        d.join("safe_hold.jsonl"),
        d.join("safe_test.jsonl"),
    );
    write_records(&safe_train, &safe[..50]).unwrap();
    write_records(&safe_hold, &safe[50..70]).unwrap();
    write_records(&safe_test, &safe[70..]).unwrap();

    // Embedding.
    let cache = d.join("vectors.bin");
    let mut embed_args = vec!["--config-file", c, "embed", "--cache", s(&cache), "--input"];
    let all_inputs: Vec<PathBuf> = train_unsafe
        .iter()
        .cloned()
        .chain([
            held_out.clone(),
            aug.clone(),
            border_eval.clone(),
            safe_train.clone(),
            safe_hold.clone(),
            safe_test.clone(),
        ])
        .collect();
    embed_args.extend(all_inputs.iter().map(|p| s(p)));
    ok(&embed_args);
    let embed_manifest = RunManifest::load(&manifest_path(&cache)).unwrap();
    for f in &train_unsafe {
        assert_eq!(input_digest(&embed_manifest, f), output_digest(&gen_manifest, f));
    }
    let requests = server.count("/embeddings");
    ok(&embed_args);
    assert_eq!(
        server.count("/embeddings"),
        requests,
        "warm cache must not call the encoders"
    );
    assert_eq!(
        RunManifest::load(&manifest_path(&cache)).unwrap().outputs,
        embed_manifest.outputs
    );

    // Training and calibration of all four configurations.
    let mut profiles = Vec::new();
    for estimator in ["gmm", "ocsvm"] {
        for v4 in [false, true] {
            let tag = format!("{estimator}_{}", if v4 { "v4" } else { "v3" });
            let raw = d.join(format!("{tag}.raw"));
            let mut args = vec![
                "--config-file",
                c,
                "train",
                "--cache",
                s(&cache),
                "--estimator",
                estimator,
                "--plan",
                s(&plan),
            ];
            args.extend(["--out", s(&raw), "--safe", s(&safe_train)]);
            if v4 {
                args.extend(["--aug", s(&aug)]);
            }
            args.push("--unsafe");
            args.extend(train_unsafe.iter().map(|p| s(p)));
            ok(&args);
            let train_manifest = RunManifest::load(&manifest_path(&raw)).unwrap();
            assert_eq!(
                input_digest(&train_manifest, &cache),
                output_digest(&embed_manifest, &cache)
            );

            // Same inputs, same bytes.
            let again = d.join(format!("{tag}.raw2"));
            let pos = args.iter().position(|a| *a == s(&raw)).unwrap();
            args[pos] = s(&again);
            ok(&args);
            assert_eq!(std::fs::read(&raw).unwrap(), std::fs::read(&again).unwrap(), "{tag}");

            let prof = d.join(format!("{tag}.profile"));
            ok(&[
                "--config-file",
                c,
                "calibrate",
                "--profile",
                s(&raw),
                "--cache",
                s(&cache),
                "--safe-holdout",
                s(&safe_hold),
                "--unsafe-holdout",
                s(&held_out),
                "--out",
                s(&prof),
            ]);
            let cal_manifest = RunManifest::load(&manifest_path(&prof)).unwrap();
            assert_eq!(input_digest(&cal_manifest, &raw), output_digest(&train_manifest, &raw));
            profiles.push((prof, cal_manifest));
        }
    }

    // Training on held-out records is refused.
    let r = qiguard(
        &[
            "--config-file",
            c,
            "train",
            "--cache",
            s(&cache),
            "--safe",
            s(&safe_train),
            "--unsafe",
            s(&held_out),
            "--out",
            s(&d.join("x")),
        ],
        "",
    );
    assert_eq!(r.code, 1, "{}", r.err);
    assert!(r.err.contains("held_out"), "{}", r.err);

    // Evaluation.
    let pairings = d.join("pairings.toml");
    std::fs::write(
        &pairings,
        format!(
            "[[pairing]]\nname = \"cross_generator\"\npositive = [\"{}\"]\nnegative = [\"safe_test.jsonl\"]\n\
             [[pairing]]\nname = \"borderline_stress\"\npositive = [\"{}\"]\nnegative = [\"{}\"]\n",
            s(&held_out),
            s(&held_out),
            s(&border_eval)
        ),
    )
    .unwrap();
    let report = d.join("eval.json");
    let mut eval_args = vec![
        "--config-file",
        c,
        "eval",
        "--cache",
        s(&cache),
        "--pairings",
        s(&pairings),
        "--grid",
        "--profile",
    ];
    eval_args.extend(profiles.iter().map(|(p, _)| s(p)));
    let mut first = eval_args.clone();
    first.extend(["--out", s(&report)]);
    let r = ok(&first);
    assert!(r.out.contains("gmm_v3") && r.out.contains("ocsvm_v4"), "{}", r.out);
    let doc: EvalDocument = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc.thresholds.len(), 4);
    assert_eq!(doc.grid.cells.len(), 4);
    for cell in &doc.grid.cells {
        assert_eq!(cell.reports.len(), 2);
        for rep in &cell.reports {
            assert!((0.0..=1.0).contains(&rep.auroc));
        }
    }
    let eval_manifest = RunManifest::load(&manifest_path(&report)).unwrap();
    for (prof, cal) in &profiles {
        assert_eq!(input_digest(&eval_manifest, prof), output_digest(cal, prof));
    }
    assert_eq!(eval_manifest.config_hash, embed_manifest.config_hash);

    // Stdout form equals the file form.
    let r = ok(&eval_args);
    assert_eq!(r.out, std::fs::read_to_string(&report).unwrap());

    // Missing grid cell.
    let mut partial = vec![
        "--config-file",
        c,
        "eval",
        "--cache",
        s(&cache),
        "--pairings",
        s(&pairings),
        "--grid",
        "--profile",
    ];
    partial.push(s(&profiles[0].0));
    assert_eq!(qiguard(&partial, "").code, 1);

    // Scoring from standard input.
    let lines: String = read_records(&held_out)
        .unwrap()
        .iter()
        .take(3)
        .chain(&safe[70..72])
        .map(|r| serialize_record(r) + "\n")
        .collect();
    let r = qiguard(
        &[
            "--config-file",
            c,
            "score",
            "--profile",
            s(&profiles[0].0),
            "--cache",
            s(&cache),
        ],
        &lines,
    );
    assert_eq!(r.code, 0, "{}", r.err);
    let out: Vec<Value> = r.out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(out.len(), 5);
    for v in &out {
        assert!(["flag", "safe", "abstain"].contains(&v["outcome"].as_str().unwrap()));
        let delta = v["sigma_u"].as_f64().unwrap() - v["sigma_s"].as_f64().unwrap();
        assert!((delta - v["delta"].as_f64().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn stress_test_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fixture.toml");
    let mut f = qiguard::confound::ConfoundFixture::default();
    f.n_safe = 300;
    f.n_unsafe = 300;
    f.n_borderline_train = 100;
    f.n_borderline_eval = 100;
    std::fs::write(&fixture, toml::to_string(&f).unwrap()).unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let ra = ok(&["stress-test", "--fixture", s(&fixture), "--seeds", "2", "--out", s(&a)]);
    ok(&["stress-test", "--fixture", s(&fixture), "--seeds", "2", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ra.out.lines().count(), 3);
    assert_eq!(qiguard(&["stress-test", "--seeds", "0"], "").code, 1);
}
