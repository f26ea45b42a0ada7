use std::fs;
use std::path::PathBuf;

use flames_core::campaign::{
    run_campaign, run_campaign_on, Algorithm, CampaignConfig, CampaignError, ModelSpec,
};
use flames_core::model::{TableModel, Vocab};
use flames_core::reward::{generate_bug_corpus, repair_vocab, write_corpus, BugInstance};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("flames-campaign-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(corpus: &[BugInstance], path: &PathBuf) {
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus).unwrap();
    fs::write(path, buf).unwrap();
}

fn quiet(algorithm: Algorithm) -> CampaignConfig {
    CampaignConfig {
        algorithm,
        record_timing: false,
        ..CampaignConfig::default()
    }
}

/// A table model that emits `tokens` with probability 1.
fn scripted(vocab: &Vocab, tokens: &[u32]) -> TableModel {
    let mut m = TableModel::new(vocab.clone());
    for i in 1..tokens.len() {
        m.insert_rule(tokens[..i].to_vec(), &[(tokens[i], 1.0)])
            .unwrap();
    }
    m
}

#[test]
fn runs_from_a_corpus_file() {
    let dir = scratch("file");
    let path = dir.join("corpus.jsonl");
    let corpus = generate_bug_corpus(7, 6, &repair_vocab()).unwrap();
    write(&corpus, &path);
    let report = run_campaign(&CampaignConfig {
        corpus: path,
        ..quiet(Algorithm::Flames)
    })
    .unwrap();
    let ids: Vec<_> = report.rows.iter().map(|r| r.bug_id.as_str()).collect();
    let want: Vec<_> = corpus.iter().map(|b| b.bug.id.as_str()).collect();
    assert_eq!(ids, want);
    assert_eq!(report.aggregates.bugs, 6);
}

#[test]
fn missing_corpus_is_io_error() {
    let config = CampaignConfig {
        corpus: "/nonexistent/corpus.jsonl".into(),
        ..quiet(Algorithm::Greedy)
    };
    assert!(matches!(run_campaign(&config), Err(CampaignError::Io(_))));
}

#[test]
fn greedy_hits_ground_truth_with_one_validation() {
    let dir = scratch("table");
    let vocab = repair_vocab();
    let corpus = generate_bug_corpus(2, 1, &vocab).unwrap();
    let table = dir.join("table.json");
    fs::write(&table, scripted(&vocab, &corpus[0].ground_truth).to_json()).unwrap();
    let config = CampaignConfig {
        model: ModelSpec::Table { path: table },
        ..quiet(Algorithm::Greedy)
    };
    let row = &run_campaign_on(&config, &corpus).unwrap().rows[0];
    assert!(row.plausible_found);
    assert_eq!(row.patches_validated, 1);
    assert_eq!(row.patches_to_plausible, Some(1));
}

#[test]
fn table_with_other_vocabulary_is_config_error() {
    let dir = scratch("badtable");
    let vocab = Vocab::from_surfaces(&["<s>", "end", "a"], &["end"], "<s>").unwrap();
    let table = dir.join("table.json");
    fs::write(&table, TableModel::new(vocab).to_json()).unwrap();
    let corpus = generate_bug_corpus(2, 1, &repair_vocab()).unwrap();
    let config = CampaignConfig {
        model: ModelSpec::Table { path: table },
        ..quiet(Algorithm::Greedy)
    };
    assert!(matches!(
        run_campaign_on(&config, &corpus),
        Err(CampaignError::Config(_))
    ));
}

#[cfg(feature = "remote")]
#[test]
fn unreachable_endpoint_is_recorded_per_bug() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let corpus = generate_bug_corpus(2, 3, &repair_vocab()).unwrap();
    let config = CampaignConfig {
        model: ModelSpec::Remote {
            url: format!("http://127.0.0.1:{port}"),
        },
        ..quiet(Algorithm::Greedy)
    };
    let report = run_campaign_on(&config, &corpus).unwrap();
    assert_eq!(report.aggregates.error_count, 3);
    assert!(report
        .rows
        .iter()
        .all(|r| r.error.as_deref().is_some_and(|e| e.contains("attempts"))));
}

#[test]
fn parallel_and_serial_reports_match() {
    let corpus = generate_bug_corpus(13, 10, &repair_vocab()).unwrap();
    for algorithm in Algorithm::ALL {
        let par = run_campaign_on(
            &CampaignConfig {
                parallel: true,
                ..quiet(algorithm)
            },
            &corpus,
        )
        .unwrap();
        let ser = run_campaign_on(
            &CampaignConfig {
                parallel: false,
                ..quiet(algorithm)
            },
            &corpus,
        )
        .unwrap();
        assert_eq!(par.rows, ser.rows, "{}", algorithm.name());
    }
}

#[test]
fn row_invariants_hold_across_algorithms_and_caps() {
    let corpus = generate_bug_corpus(21, 8, &repair_vocab()).unwrap();
    for algorithm in Algorithm::ALL {
        for (beam_size, max_patches, cap) in [
            (10, 200, None),
            (50, 7, Some(30_000_000)),
            (200, 3, Some(60_000_000)),
        ] {
            let config = CampaignConfig {
                beam_size,
                max_patches,
                memory_cap: cap,
                ..quiet(algorithm)
            };
            let report = run_campaign_on(&config, &corpus).unwrap();
            for row in &report.rows {
                assert!(row.patches_validated <= max_patches);
                assert_eq!(row.plausible_found, row.best_reward == 1.0);
                assert_eq!(
                    row.oom,
                    cap.is_some_and(|c| row.peak_bytes > c),
                    "{} {row:?}",
                    algorithm.name()
                );
                assert!((0.0..=1.0).contains(&row.best_reward));
            }
            let ooms = report.rows.iter().filter(|r| r.oom).count();
            assert_eq!(
                report.aggregates.oom_rate,
                ooms as f64 / report.rows.len() as f64
            );
        }
    }
}

#[test]
fn seeded_reports_are_byte_identical() {
    let corpus = generate_bug_corpus(4, 8, &repair_vocab()).unwrap();
    for algorithm in Algorithm::ALL {
        let config = CampaignConfig {
            seed: 17,
            ..quiet(algorithm)
        };
        assert_eq!(
            run_campaign_on(&config, &corpus).unwrap().to_json(),
            run_campaign_on(&config, &corpus).unwrap().to_json()
        );
    }
    let a = run_campaign_on(
        &CampaignConfig {
            seed: 1,
            ..quiet(Algorithm::Sample)
        },
        &corpus,
    )
    .unwrap();
    let b = run_campaign_on(
        &CampaignConfig {
            seed: 2,
            ..quiet(Algorithm::Sample)
        },
        &corpus,
    )
    .unwrap();
    assert_ne!(a.rows, b.rows);
}
