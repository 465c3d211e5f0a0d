mod common;

use dagprompt::encoder::{EncoderConfig, EncoderParams, GloraMode};
use dagprompt::graphstore::{generate, kshot_split, load_dataset, Dataset, Graph, SynthSpec};
use dagprompt::harness::{
    report_csv, report_json, run_experiment, run_supervised, Ablation, ExperimentConfig, Grid, GridPoint, Harness,
    Mode, PretrainSettings, ReportFile, Selection, SupervisedConfig, CSV_HEADER,
};
use dagprompt::numcore::{AdamConfig, Tensor};
use dagprompt::Error;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![0, 1],
        grid: Grid::single(GridPoint { lr: 1e-3, weight_decay: 0.0, hidden: 16, rank: 4, alpha: 0.5 }),
        allow_off_grid: true,
        epochs: 10,
        pretrain: PretrainSettings { epochs: 5, ..PretrainSettings::default() },
        workers: Some(1),
        ..ExperimentConfig::default()
    }
}

fn homophilous() -> Dataset {
    load_dataset(common::fixture("homophilous")).unwrap()
}

#[test]
fn numeric_payload_is_reproducible() {
    let data = homophilous();
    let cfg = small_config();
    let a = Harness::new().run_on(&data, &cfg, "homophilous").unwrap();
    let b = Harness::new().run_on(&data, &cfg, "homophilous").unwrap();
    assert_eq!(a.numeric_payload(), b.numeric_payload());
}

#[test]
fn worker_count_does_not_change_results() {
    let data = homophilous();
    let cfg = small_config();
    let one = Harness::new().run_on(&data, &cfg, "h").unwrap();
    let many = Harness::new().run_on(&data, &ExperimentConfig { workers: Some(3), ..cfg }, "h").unwrap();
    assert_eq!(one.numeric_payload(), many.numeric_payload());
}

#[test]
fn parameter_counts_add_up() {
    let data = homophilous();
    let g = data.as_graph().unwrap();
    let (n, f, c) = (g.num_nodes(), g.num_features(), g.num_classes());
    let (d, r, layers) = (16, 4, 2);
    let cfg = small_config();
    let h = Harness::new();

    let full = h.run_on(&data, &cfg, "h").unwrap();
    assert_eq!(full.pretrain_trainable, f * d + layers * d * d);
    assert_eq!(full.downstream_encoder_trainable, layers * (2 * d * r + 2 * n));
    assert_eq!(full.downstream_prompt_trainable, (layers + 1) * c * d + (layers + 1));
    assert_eq!(full.downstream_trainable, full.downstream_encoder_trainable + full.downstream_prompt_trainable);

    let scratch = h.run_on(&data, &ExperimentConfig { mode: Mode::ScratchGcn, ..cfg.clone() }, "h").unwrap();
    assert_eq!(scratch.pretrain_trainable, 0);
    assert_eq!(scratch.downstream_trainable, f * d + layers * d * d + d * c);

    let proto = h.run_on(&data, &ExperimentConfig { mode: Mode::Prototype, ..cfg.clone() }, "h").unwrap();
    assert_eq!(proto.downstream_encoder_trainable, 0);
}

#[test]
fn edge_subset_counts_match_incident_edges() {
    let data = homophilous();
    let g = data.as_graph().unwrap();
    let cfg = ExperimentConfig { glora: GloraMode::EdgeSubset, seeds: vec![3], ..small_config() };
    let report = Harness::new().run_on(&data, &cfg, "h").unwrap();
    let train = kshot_split(g, 5, 3).unwrap().train_ids;
    let incident = g.edges().iter().filter(|&&(u, v)| train.contains(&u) || train.contains(&v)).count();
    assert_eq!(report.downstream_encoder_trainable, 2 * (2 * 16 * 4 + incident));
}

#[test]
fn scratch_baseline_never_pretrains() {
    let data = homophilous();
    let h = Harness::new();
    let report = h.run_on(&data, &ExperimentConfig { mode: Mode::ScratchGcn, ..small_config() }, "h").unwrap();
    assert_eq!(h.cached_checkpoints(), 0);
    assert_eq!(report.timing.pretrain_seconds, 0.0);
    h.run_on(&data, &small_config(), "h").unwrap();
    assert_eq!(h.cached_checkpoints(), 2);
}

#[test]
fn pretrain_cache_is_shared_across_modes() {
    let data = homophilous();
    let h = Harness::new();
    let cfg = ExperimentConfig { pretrain: PretrainSettings { seed: Some(0), epochs: 5, ..PretrainSettings::default() }, ..small_config() };
    h.run_ablation(&data, &cfg, "h").unwrap();
    h.run_on(&data, &ExperimentConfig { mode: Mode::FinetuneLp, ..cfg }, "h").unwrap();
    assert_eq!(h.cached_checkpoints(), 1);
}

#[test]
fn finetuning_moves_the_base_weights() {
    let data = homophilous();
    let g = data.as_graph().unwrap();
    let cfg = EncoderConfig::new(g.num_features(), 16, 2);
    let init = EncoderParams::init(&cfg, 0).unwrap();
    let split = kshot_split(g, 5, 0).unwrap();
    let sc = SupervisedConfig { epochs: 5, adam: AdamConfig::with_lr(1e-2), seed: 0 };
    let out = run_supervised(&init, &cfg, &data, &split, &sc).unwrap();
    for (a, b) in init.layers.iter().zip(&out.params.layers) {
        assert!(a.w0.max_abs_diff(&b.w0).unwrap() > 0.0);
    }
    assert_eq!(out.head.shape(), (16, g.num_classes()));
}

#[test]
fn ablations_come_back_in_order() {
    let data = homophilous();
    let reports = Harness::new().run_ablation(&data, &small_config(), "h").unwrap();
    let modes: Vec<Mode> = reports.iter().map(|r| r.mode).collect();
    assert_eq!(
        modes,
        [
            Mode::Dagprompt,
            Mode::Ablation(Ablation::NoGlora),
            Mode::Ablation(Ablation::LastLayerOnly),
            Mode::Ablation(Ablation::FixedGamma)
        ]
    );
    assert_eq!(reports[1].downstream_encoder_trainable, 0);
}

#[test]
fn reports_round_trip_through_json_and_csv() {
    let data = homophilous();
    let reports = vec![Harness::new().run_on(&data, &small_config(), "homophilous").unwrap()];
    let json = report_json(&reports).unwrap();
    let back: ReportFile = serde_json::from_str(&json).unwrap();
    assert_eq!(back.reports, reports);
    let csv = report_csv(&reports);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), reports[0].seeds.len());
}

#[test]
fn transfer_produces_scratch_and_cross_reports() {
    let src = Dataset::Node(
        generate(&SynthSpec { nodes: 150, edges: 600, classes: 4, features: 32, seed: 3, ..SynthSpec::default() }).unwrap(),
    );
    let dst = homophilous();
    let h = Harness::new();
    let (scratch, cross) = h.run_transfer(&src, &dst, &small_config(), ("src", "homophilous")).unwrap();
    assert_eq!(scratch.label, "DAGPrompT-Scratch");
    assert_eq!(cross.label, "DAGPrompT-Cross");
    assert_eq!(scratch.pretrain_trainable, 0);
    assert!(cross.pretrain_trainable > 0);

    let narrow = Dataset::Node(generate(&SynthSpec { nodes: 50, edges: 100, features: 7, ..SynthSpec::default() }).unwrap());
    assert!(matches!(h.run_transfer(&narrow, &dst, &small_config(), ("a", "b")), Err(Error::Infeasible(_))));
}

#[test]
fn sweep_skips_unreachable_targets() {
    let base = generate(&SynthSpec { nodes: 200, edges: 600, classes: 4, features: 8, seed: 2, ..SynthSpec::default() }).unwrap();
    let cfg = ExperimentConfig { seeds: vec![0], ..small_config() };
    let out = Harness::new().run_heterophily_sweep(&base, &[0.3, 0.7, 1.5], &cfg, &[Mode::Dagprompt, Mode::Prototype], 0).unwrap();
    assert_eq!(out.points.len(), 2);
    assert_eq!(out.skipped.len(), 1);
    for p in &out.points {
        assert!((p.achieved_h - p.target_h).abs() <= 0.02);
    }
    assert_eq!(out.series(Mode::Prototype).len(), 2);
}

#[test]
fn train_loss_selection_does_not_use_test_labels() {
    let data = homophilous();
    let mut grid = small_config().grid;
    grid.lr = vec![1e-4, 1e-3];
    let cfg = ExperimentConfig { grid, selection: Selection::TrainLoss, seeds: vec![0], ..small_config() };
    let report = Harness::new().run_on(&data, &cfg, "h").unwrap();
    assert!(!report.selection_uses_test_labels);
    assert_eq!(report.grid_points_evaluated, 2);
}

#[test]
fn experiment_from_disk_config() {
    let cfg = ExperimentConfig { dataset: common::fixture("ego_graphs"), shots: Some(3), ..small_config() };
    let json = serde_json::to_string(&cfg).unwrap();
    let report = run_experiment(&ExperimentConfig::from_json(&json).unwrap()).unwrap();
    assert_eq!(report.dataset, "ego_graphs");
    assert!(report.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
}

#[test]
fn missing_dataset_is_a_config_or_io_error() {
    let cfg = ExperimentConfig { dataset: "/nonexistent/dataset".into(), ..small_config() };
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn numerically_failing_grid_points_are_dropped() {
    let data = Dataset::Node(generate(&SynthSpec { nodes: 60, edges: 150, classes: 3, features: 8, seed: 3, ..SynthSpec::default() }).unwrap());
    let grid = Grid { lr: vec![1e-3], weight_decay: vec![0.0], hidden: vec![1, 16], rank: vec![4], alpha: vec![0.5] };
    let cfg = ExperimentConfig { mode: Mode::Prototype, shots: None, train_fraction: Some(0.5), grid, ..small_config() };
    let report = Harness::new().run_on(&data, &cfg, "syn").unwrap();
    assert_eq!(report.grid_points_failed, 1);
    assert_eq!(report.grid_point.hidden, 16);
}

#[test]
fn all_points_failing_is_a_numeric_error() {
    let g = generate(&SynthSpec { nodes: 40, edges: 80, classes: 2, features: 4, seed: 1, ..SynthSpec::default() }).unwrap();
    let edges: Vec<(usize, usize)> = g.edges().iter().copied().filter(|&(u, v)| u != 0 && v != 0).collect();
    let mut x = g.features().clone().into_data();
    x[..4].fill(0.0);
    let features = Tensor::new(40, 4, x).unwrap();
    let labels = g.labels().unwrap().to_vec();
    let g = Graph::new(40, edges, features, Some(labels), 2).unwrap();
    let cfg = ExperimentConfig { mode: Mode::Prototype, shots: None, train_fraction: Some(0.5), ..small_config() };
    let err = Harness::new().run_on(&Dataset::Node(g), &cfg, "iso").unwrap_err();
    assert!(err.is_numeric(), "{err}");
}
