mod common;

use common::{desk_config, ok, run_pipeline, toolrec};
use toolrec_core::augment::{load_sample, LabelRow, SelectionReport};

#[test]
fn desk_pipeline_answers_yara_query() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    run_pipeline(&cfg);
    let out = ok(&cfg, &["query", "--text", "How to remove yara rule?", "--k", "3"]);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert!(rows[0].starts_with("1\t") && rows[0].contains("Yara.removeSource"), "{out}");
    assert!(rows[1].starts_with("2\t") && rows[2].starts_with("3\t"));
    let manifest = std::fs::read_to_string(dir.path().join("work/manifest.json")).unwrap();
    assert!(manifest.contains("model.bin") && manifest.contains("\"seed\": 42"));
}

#[test]
fn selection_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    for stage in ["ingest", "preprocess", "augment"] {
        ok(&cfg, &[stage]);
    }
    ok(&cfg, &["sample-selection", "--beta", "2"]);
    let work = dir.path().join("work");
    let sample = load_sample(&work.join("selection_sample.json")).unwrap();
    assert_eq!(sample.rows.len(), sample.n * sample.beta * sample.alpha);
    // keep swaps and spelling errors, reject everything else
    let labels: Vec<String> = sample
        .rows
        .iter()
        .map(|r| {
            let keep = r.technique == "dat01_swap" || r.technique == "dat03_spelling";
            serde_json::to_string(&LabelRow {
                technique: r.technique.clone(),
                record_id: r.record_id.clone(),
                s_v: keep as u8,
            })
            .unwrap()
        })
        .collect();
    let lp = dir.path().join("labels.jsonl");
    std::fs::write(&lp, labels.join("\n")).unwrap();
    let out = ok(&cfg, &["score-selection", "--labels", lp.to_str().unwrap()]);
    assert!(out.contains("dat01_swap\t100.00\tselected"), "{out}");
    let report = SelectionReport::load(&work.join("selection_report.jsonl")).unwrap();
    assert_eq!(report.selected().into_iter().collect::<Vec<_>>(), ["dat01_swap", "dat03_spelling"]);
    let kept = std::fs::read_to_string(work.join("selected.jsonl")).unwrap();
    assert_eq!(kept.lines().count(), 2 * 72);

    // a missing label is reported, not guessed
    let partial = labels[1..].join("\n");
    std::fs::write(&lp, partial).unwrap();
    let out = toolrec(&cfg, &["score-selection", "--labels", lp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing selection labels"));
}

#[test]
fn empty_adapter_dir_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = toolrec(&cfg, &["ingest", "--adapters", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn later_stage_without_inputs_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    let out = toolrec(&cfg, &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.toml", "seed = \n"),
        ("unknown.toml", "seed = 1\ncolour = \"red\"\n"),
        ("dim.toml", "[embedding]\ndim = 0\n"),
        ("technique.toml", "techniques = [\"dat99_nothing\"]\n"),
    ];
    for (name, text) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        let out = toolrec(&p, &["augment"]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = toolrec(&dir.path().join("absent.toml"), &["ingest"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_ablation_factor_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    ok(&cfg, &["ingest"]);
    ok(&cfg, &["preprocess"]);
    let out = toolrec(&cfg, &["eval", "--protocol", "ablation", "--factor", "gravity"]);
    assert_eq!(out.status.code(), Some(2));
}
