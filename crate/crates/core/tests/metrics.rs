use proptest::prelude::*;

use worldloop::metrics::{
    answering_score, format_table, mean_trajectory, report_rows, spearman, spl, spl_aeqa, success_rate, write_csv,
    MetricsError, ReportRow,
};
use worldloop::scenegen::{gen_suite, SceneParams};
use worldloop::tasks::{run_imagenav, EpisodeResult, TaskKind};
use worldloop::worldmodel::{ModelHandle, Variant, WorldModelConfig};

fn res(id: u64, task: TaskKind, success: bool, steps: usize, l: f64, ls: f64, sigma: Option<u8>) -> EpisodeResult {
    EpisodeResult {
        id,
        task,
        model: "m".into(),
        seed: 0,
        m: 3,
        success,
        answer: None,
        answer_score: sigma,
        steps_executed: steps,
        decision_steps: 1,
        path_length_m: l,
        shortest_m: ls,
        wm_inferences: 3,
        fallbacks: 0,
        trace: Vec::new(),
        error: None,
    }
}

#[test]
fn mean_trajectory_examples() {
    let one = [res(0, TaskKind::ImageNav, true, 7, 1.4, 1.0, None)];
    assert_eq!(mean_trajectory(&one).unwrap(), 7.0);
    let two = [res(0, TaskKind::Ar, true, 4, 0.8, 0.0, None), res(1, TaskKind::Ar, false, 6, 1.2, 0.0, None)];
    assert_eq!(mean_trajectory(&two).unwrap(), 5.0);
    // InfoSeek counts meters
    let is = [res(0, TaskKind::InfoSeek, true, 30, 2.5, 2.0, Some(5))];
    assert_eq!(mean_trajectory(&is).unwrap(), 2.5);
    assert!(matches!(mean_trajectory(&[]), Err(MetricsError::Empty)));
}

#[test]
fn answer_metric_examples() {
    let r = [
        res(0, TaskKind::InfoSeek, true, 10, 4.0, 2.0, Some(5)),
        res(1, TaskKind::InfoSeek, false, 10, 1.0, 1.0, Some(1)),
        res(2, TaskKind::InfoSeek, true, 10, 3.0, 3.0, Some(3)),
    ];
    assert_eq!(answering_score(&r).unwrap(), 50.0);
    // (1 · 0.5 + 0 + 0.5 · 1) / 3
    assert!((spl_aeqa(&r).unwrap() - 100.0 / 3.0).abs() < 1e-12);
    let mut bad = r.clone();
    bad[1].answer_score = Some(6);
    assert!(matches!(spl_aeqa(&bad), Err(MetricsError::SigmaOutOfRange { id: 1, sigma: 6 })));
    let mut neg = r.to_vec();
    neg[2].path_length_m = -1.0;
    assert!(matches!(spl(&neg), Err(MetricsError::NegativeLength { id: 2 })));
}

/// Textbook form valid when neither input has ties.
fn spearman_no_ties(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter().map(|x| v.iter().filter(|y| *y < x).count() as f64 + 1.0).collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn spearman_examples() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    assert_eq!(spearman(&[1.0], &[1.0]), None);
    assert_eq!(spearman(&[1.0, 2.0], &[1.0]), None);
}

fn results_strategy() -> impl Strategy<Value = Vec<EpisodeResult>> {
    prop::collection::vec((any::<bool>(), 0usize..60, 0.0f64..12.0, 0.0f64..8.0, 1u8..=5), 1..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (s, n, l, ls, sig))| res(i as u64, TaskKind::InfoSeek, s, n, l.max(ls), ls, Some(sig)))
            .collect()
    })
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(r in results_strategy(), rot in 0usize..30) {
        let mut p = r.clone();
        p.reverse();
        let k = rot % p.len();
        p.rotate_left(k);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        prop_assert_eq!(success_rate(&r).unwrap(), success_rate(&p).unwrap());
        prop_assert!(close(spl(&r).unwrap(), spl(&p).unwrap()));
        prop_assert!(close(spl_aeqa(&r).unwrap(), spl_aeqa(&p).unwrap()));
        prop_assert!(close(answering_score(&r).unwrap(), answering_score(&p).unwrap()));
        prop_assert!(close(mean_trajectory(&r).unwrap(), mean_trajectory(&p).unwrap()));
    }

    #[test]
    fn spl_bounded_by_success_rate(r in results_strategy()) {
        let (sr, s) = (success_rate(&r).unwrap(), spl(&r).unwrap());
        prop_assert!((0.0..=sr + 1e-9).contains(&s));
        prop_assert!((0.0..=100.0).contains(&answering_score(&r).unwrap()));
    }

    #[test]
    fn spearman_matches_textbook(pairs in prop::collection::btree_map(0u32..1000, 0u32..1000, 3..20)) {
        let a: Vec<f64> = pairs.keys().map(|&x| x as f64).collect();
        let mut b: Vec<f64> = pairs.values().map(|&y| y as f64).collect();
        // break ties in b deterministically
        for (i, y) in b.iter_mut().enumerate() {
            *y += i as f64 * 1e-6;
        }
        let got = spearman(&a, &b).unwrap();
        prop_assert!((got - spearman_no_ties(&a, &b)).abs() < 1e-9);
    }
}

fn real_results() -> Vec<EpisodeResult> {
    let suite = gen_suite(TaskKind::ImageNav, 2, 3, 17, &SceneParams::default()).unwrap();
    let m = ModelHandle::build(&WorldModelConfig::new(Variant::Oracle)).unwrap();
    let mut out = Vec::new();
    for seed in 0..2 {
        for spec in &suite.episodes {
            out.push(run_imagenav(suite.scene(spec), spec, Some(&m), seed).unwrap());
            out.push(run_imagenav(suite.scene(spec), spec, None, seed).unwrap());
        }
    }
    out
}

#[test]
fn serialized_results_recompute_bit_exact() {
    let results = real_results();
    let jsonl: String = results.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    let back: Vec<EpisodeResult> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, results);
    let rows = report_rows(&results).unwrap();
    assert_eq!(report_rows(&back).unwrap(), rows);
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let group: Vec<EpisodeResult> =
            results.iter().filter(|r| r.model == row.model && r.seed == row.seed).cloned().collect();
        assert_eq!(row.episodes, group.len());
        assert_eq!(row.sr, success_rate(&group).unwrap());
        let manual = 100.0
            * group
                .iter()
                .filter(|r| r.success)
                .map(|r| if r.path_length_m.max(r.shortest_m) == 0.0 { 1.0 } else { r.shortest_m / r.path_length_m.max(r.shortest_m) })
                .sum::<f64>()
            / group.len() as f64;
        assert!((row.spl - manual).abs() < 1e-9);
    }
}

#[test]
fn csv_and_table_output() {
    let rows = vec![ReportRow::from_results(&[res(0, TaskKind::ImageNav, true, 7, 2.0, 1.0, None)]).unwrap()];
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "task,model,M,SR,SPL,mean_traj,ans_score,spl_aeqa,wm_inferences_mean,seed,episodes,fallbacks"
    );
    assert_eq!(lines.next().unwrap(), "imagenav,m,3,100.0,50.0,7.0,0.0,0.0,3.0,0,1,0");
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let parsed: Vec<ReportRow> = rd.deserialize().map(Result::unwrap).collect();
    assert_eq!(parsed, rows);
    let table = format_table(&rows);
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("imagenav"));
}
