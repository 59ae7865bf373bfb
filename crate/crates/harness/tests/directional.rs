use std::cell::RefCell;
use std::rc::Rc;

use misac_chansim::ScenarioConfig;
use misac_core::ArchConfig;
use misac_harness::directional::{DirectionalSuite, SuiteSettings, DIRECTIONAL_IDS};
use misac_tasks::TrainConfig;

fn tiny(root: &std::path::Path) -> SuiteSettings {
    SuiteSettings {
        root: root.to_path_buf(),
        seeds: vec![0, 1, 2],
        scenario: ScenarioConfig { slots: 300, antennas: 8, codebook_size: 8, ..Default::default() },
        arch: ArchConfig { z_dim: 4, h_expert: 8, h_head: 8, gate_hidden: 8, experts_per_modality: 3 },
        train: TrainConfig { epochs: 2, batch_size: 32, ..Default::default() },
    }
}

#[test]
fn every_directional_criterion_evaluates_on_a_tiny_suite() {
    let root = tempfile::tempdir().unwrap();
    let mut suite = DirectionalSuite::new(tiny(root.path()), Box::new(|_: &str| {}));
    for id in DIRECTIONAL_IDS {
        let r = suite.run(id).unwrap();
        assert_eq!(r.id, id);
        assert!(!r.detail.starts_with("error"), "{r}");
    }
    let sparse = suite.run(8).unwrap();
    assert!(sparse.detail.contains("evaluations per sample sparse 5 5 5 dense 15 15 15"), "{sparse}");
    assert!(suite.run(13).is_none());
}

#[test]
fn a_second_suite_resumes_finished_runs() {
    let root = tempfile::tempdir().unwrap();
    let first = DirectionalSuite::new(tiny(root.path()), Box::new(|_: &str| {})).run(10).unwrap();
    let lines = Rc::new(RefCell::new(Vec::<String>::new()));
    let sink = lines.clone();
    let second = DirectionalSuite::new(tiny(root.path()), Box::new(move |l: &str| sink.borrow_mut().push(l.to_string()))).run(10).unwrap();
    assert_eq!(first.detail, second.detail);
    let log = lines.borrow();
    assert!(!log.iter().any(|l| l.contains("generating dataset")), "{log:?}");
    // Dense and concat, three seeds each.
    assert_eq!(log.len(), 6, "{log:?}");
}
