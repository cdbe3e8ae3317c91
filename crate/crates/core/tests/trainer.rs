use std::time::Instant;

use lanerl_core::config::{ExperimentConfig, Representation};
use lanerl_core::env::{Action, DoneReason};
use lanerl_core::noise::OuNoise;
use lanerl_core::trainer::{
    evaluate_baseline, random_policy, run_experiment, script_from_log, zero_policy, AutoOracle, Baseline,
    DriverContext, EpisodeLog, EpisodeRecord, NoObserver, Observer, PolicyKind, RunOptions, SafetyDriver,
    ScriptedDriver, StepTelemetry, Summary, TaskCommand, TaskKind, TaskOutcome, Trainer, TrainerState, LOG_SCHEMA,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use TaskCommand::{Done, Test, Train, Undo};

/// Scaled-down experiment that keeps every code path but runs in milliseconds.
fn small(representation: Representation, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.env.camera.width = 16;
    cfg.env.camera.height = 16;
    cfg.env.max_steps = 40;
    cfg.agent.conv_layers = 2;
    cfg.agent.conv_features = 3;
    cfg.agent.batch_size = 8;
    cfg.agent.opt_steps_per_episode = 3;
    cfg.agent.replay_capacity = 300;
    cfg.vae.conv_layers = 2;
    cfg.vae.conv_features = 3;
    cfg.vae.latent_dim = 4;
    cfg.trainer.representation = representation;
    cfg.trainer.exploration_episodes = 2;
    cfg.trainer.seed = seed;
    cfg
}

fn run_script(cfg: &ExperimentConfig, commands: &[TaskCommand]) -> (Trainer, Vec<TaskOutcome>) {
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let mut driver = ScriptedDriver::new(vec![]);
    let outcomes = commands
        .iter()
        .filter_map(|&c| trainer.run_task(c, &mut driver, &mut NoObserver).unwrap())
        .collect();
    (trainer, outcomes)
}

#[derive(Default)]
struct Recorder {
    steps: Vec<StepTelemetry>,
}

impl Observer for Recorder {
    fn step(&mut self, t: &StepTelemetry) {
        self.steps.push(t.clone());
    }
}

#[test]
fn done_alone_writes_an_empty_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { out_dir: Some(dir.path().to_owned()), dump_frames: false };
    let cfg = small(Representation::Vae, 0);
    let report = run_experiment(cfg.clone(), &mut ScriptedDriver::new(vec![Done]), &mut NoObserver, &opts).unwrap();
    assert!(report.log.records.is_empty());
    assert_eq!(std::fs::read_to_string(dir.path().join("episodes.jsonl")).unwrap(), "");
    assert_eq!(
        std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(),
        "episode_id,task,distance,steps,epsilon_decay,mean_td\n"
    );
    let copy = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(copy, cfg);
    assert_eq!(std::fs::read(dir.path().join("checkpoints/final.ckpt")).unwrap(), report.checkpoint);
    assert_eq!(report.checkpoint, TrainerState::new(&cfg).unwrap().to_bytes());
}

#[test]
fn train_then_undo_restores_the_initial_checkpoint() {
    for rep in [Representation::Vae, Representation::Pixels] {
        let cfg = small(rep, 3);
        cfg_with_exploration(&cfg, 0);
        let initial = TrainerState::new(&cfg).unwrap().to_bytes();
        let report =
            run_experiment(cfg, &mut ScriptedDriver::new(vec![Train, Undo, Done]), &mut NoObserver, &RunOptions::default())
                .unwrap();
        assert_eq!(report.checkpoint, initial);
        assert_eq!(report.log.records.len(), 1);
        assert!(report.log.records[0].reverted);
        assert_eq!(report.log.metrics_csv().lines().count(), 1);
    }
}

fn cfg_with_exploration(cfg: &ExperimentConfig, n: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.trainer.exploration_episodes = n;
    c
}

#[test]
fn undo_of_an_optimized_train_episode_restores_everything() {
    let cfg = cfg_with_exploration(&small(Representation::Vae, 4), 0);
    let (mut trainer, _) = run_script(&cfg, &[Train, Train]);
    let before = trainer.checkpoint();
    let replay_before = trainer.state().replay.snapshot();
    let mut d = ScriptedDriver::default();
    let Some(TaskOutcome::Episode(r)) = trainer.run_task(Train, &mut d, &mut NoObserver).unwrap() else { panic!() };
    assert_eq!(r.opt_steps, 3);
    assert_ne!(trainer.checkpoint(), before);
    assert!(matches!(trainer.undo(), TaskOutcome::Undone { .. }));
    assert_eq!(trainer.checkpoint(), before);
    assert_eq!(trainer.state().replay.snapshot(), replay_before);
}

#[test]
fn second_undo_is_rejected_and_the_loop_continues() {
    let cfg = small(Representation::Pixels, 1);
    let mut driver = ScriptedDriver::new(vec![Train, Undo, Undo, Train, Done]);
    let mut outcomes = Vec::new();
    struct Collect<'a>(&'a mut Vec<TaskOutcome>);
    impl Observer for Collect<'_> {
        fn task_finished(&mut self, o: &TaskOutcome) {
            self.0.push(o.clone());
        }
    }
    let report = run_experiment(cfg, &mut driver, &mut Collect(&mut outcomes), &RunOptions::default()).unwrap();
    assert_eq!(outcomes.len(), 4);
    assert!(matches!(outcomes[1], TaskOutcome::Undone { .. }));
    assert!(matches!(&outcomes[2], TaskOutcome::Rejected { command: Undo, reason } if reason.contains("nothing to undo")));
    assert!(matches!(outcomes[3], TaskOutcome::Episode(_)));
    assert_eq!(report.log.active().count(), 1);
    // Undo with no history at all.
    let mut fresh = Trainer::new(small(Representation::Pixels, 1)).unwrap();
    assert!(!fresh.can_undo());
    assert!(matches!(fresh.undo(), TaskOutcome::Rejected { .. }));
}

#[test]
fn undo_after_test_restores_the_counter_and_leaves_the_model() {
    let cfg = small(Representation::Vae, 2);
    let (mut trainer, _) = run_script(&cfg, &[Train, Train, Train]);
    let before = trainer.checkpoint();
    let agent = trainer.state().agent.clone();
    let counter = trainer.state().episode_counter;
    let mut d = ScriptedDriver::default();
    trainer.run_task(Test, &mut d, &mut NoObserver).unwrap();
    assert_eq!(trainer.state().agent, agent);
    assert_eq!(trainer.state().episode_counter, counter + 1);
    trainer.undo();
    assert_eq!(trainer.state().episode_counter, counter);
    assert_eq!(trainer.state().agent, agent);
    assert_eq!(trainer.checkpoint(), before);
}

#[test]
fn episode_ids_stay_monotone_across_undo_and_the_road_repeats() {
    let cfg = small(Representation::Pixels, 5);
    let (trainer, outcomes) = run_script(&cfg, &[Train, Undo, Train]);
    let ids: Vec<u64> = trainer.log().records.iter().map(|r| r.episode_id).collect();
    assert_eq!(ids, [0, 1]);
    let records: Vec<&EpisodeRecord> =
        outcomes.iter().filter_map(|o| if let TaskOutcome::Episode(r) = o { Some(r) } else { None }).collect();
    assert_eq!(records[0].road_seed, records[1].road_seed);
    assert_eq!(records[0].episode_index, records[1].episode_index);
    // The rerun replays identical randomness.
    assert_eq!(records[0].distance, records[1].distance);
}

#[test]
fn exploration_gate_holds_parameters_fixed() {
    let cfg = cfg_with_exploration(&small(Representation::Vae, 6), 3);
    let mut trainer = Trainer::new(cfg).unwrap();
    let agent = trainer.state().agent.clone();
    let vae = trainer.state().vae.clone();
    let mut d = ScriptedDriver::default();
    for i in 0..3 {
        let Some(TaskOutcome::Episode(r)) = trainer.run_task(Train, &mut d, &mut NoObserver).unwrap() else {
            panic!()
        };
        assert_eq!((r.policy, r.opt_steps, r.mean_td), (PolicyKind::Random, 0, None), "episode {i}");
        assert_eq!(trainer.state().agent, agent);
        assert_eq!(trainer.state().vae, vae);
    }
    let Some(TaskOutcome::Episode(r)) = trainer.run_task(Train, &mut d, &mut NoObserver).unwrap() else { panic!() };
    assert_eq!(r.policy, PolicyKind::Noisy);
    assert_eq!(r.opt_steps, 3);
    assert!(r.mean_td.is_some() && r.vae_loss.is_some());
    assert_ne!(trainer.state().agent, agent);
    assert_ne!(trainer.state().vae, vae);
}

#[test]
fn test_episodes_store_nothing_and_use_the_actor() {
    let cfg = small(Representation::Pixels, 7);
    let (mut trainer, _) = run_script(&cfg, &[Train]);
    let size = trainer.state().replay.len();
    let mut d = ScriptedDriver::default();
    let Some(TaskOutcome::Episode(r)) = trainer.run_task(Test, &mut d, &mut NoObserver).unwrap() else { panic!() };
    assert_eq!((r.policy, r.noisy, r.opt_steps), (PolicyKind::Optimal, false, 0));
    assert_eq!(trainer.state().replay.len(), size);
    assert_eq!(r.buffer_size, size);
}

#[test]
fn train_episodes_store_one_tuple_per_step() {
    let cfg = small(Representation::Pixels, 8);
    let (trainer, outcomes) = run_script(&cfg, &[Train, Train]);
    let steps: usize =
        outcomes.iter().map(|o| if let TaskOutcome::Episode(r) = o { r.steps } else { 0 }).sum();
    assert_eq!(trainer.state().replay.len(), steps);
    for r in &trainer.log().records {
        let tuples: Vec<_> = trainer.state().replay.iter().filter(|e| e.episode_id == r.episode_id).collect();
        assert_eq!(tuples.len(), r.steps);
        let last = tuples.last().unwrap();
        assert_eq!(last.done, r.done_reason.is_terminal());
        assert!(tuples[..tuples.len() - 1].iter().all(|e| !e.done));
        // Consecutive tuples chain through shared frames.
        for w in tuples.windows(2) {
            assert!(std::sync::Arc::ptr_eq(&w[0].next_state.frame, &w[1].state.frame));
        }
    }
}

#[test]
fn distance_is_the_sum_of_step_rewards() {
    let cfg = small(Representation::Vae, 9);
    let mut trainer = Trainer::new(cfg).unwrap();
    let mut d = ScriptedDriver::default();
    for task in [Train, Train, Train, Test] {
        let mut rec = Recorder::default();
        let Some(TaskOutcome::Episode(r)) = trainer.run_task(task, &mut d, &mut rec).unwrap() else { panic!() };
        let sum: f64 = rec.steps.iter().map(|s| s.reward).sum();
        assert_eq!(r.distance, sum);
        assert_eq!(rec.steps.len(), r.steps);
        assert!((rec.steps.last().unwrap().distance - r.distance).abs() < 1e-6);
        assert!((r.duration_s - r.steps as f64 * 0.1).abs() < 1e-9);
        let steps: Vec<usize> = rec.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, (1..=r.steps).collect::<Vec<_>>());
    }
    let log = trainer.log();
    let s = log.summary("vae");
    let train: f64 = log.records.iter().filter(|r| r.task == TaskKind::Train).map(|r| r.distance).sum();
    let test: f64 = log.records.iter().filter(|r| r.task == TaskKind::Test).map(|r| r.distance).sum();
    assert_eq!((s.training_distance_m, s.test_distance_m), (train, test));
    assert_eq!((s.training_episodes, s.test_episodes), (3, 1));
}

#[test]
fn noise_decay_follows_the_episode_counter() {
    let mut cfg = small(Representation::Pixels, 10);
    cfg.env.max_steps = 2;
    let (trainer, _) = run_script(&cfg, &[Train, Test, Train, Undo, Train]);
    let idx: Vec<u64> = trainer.log().records.iter().map(|r| r.episode_index).collect();
    assert_eq!(idx, [0, 1, 2, 2]);
    for r in &trainer.log().records {
        assert_eq!(r.noise_decay, 0.5f64.powf(r.episode_index as f64 / 250.0));
    }
}

#[test]
fn intervention_ends_the_episode_and_makes_the_last_tuple_terminal() {
    let cfg = small(Representation::Vae, 11);
    let mut driver = ScriptedDriver::new(vec![Train, Train, Test]).intervene_at(1, 5).intervene_at(2, 3);
    let mut trainer = Trainer::new(cfg).unwrap();
    let mut records = Vec::new();
    for _ in 0..3 {
        let cmd = driver.next_task(&trainer.context());
        let Some(TaskOutcome::Episode(r)) = trainer.run_task(cmd, &mut driver, &mut NoObserver).unwrap() else {
            panic!()
        };
        records.push(r);
    }
    assert_ne!(records[0].done_reason, DoneReason::Intervention);
    assert_eq!((records[1].done_reason, records[1].steps), (DoneReason::Intervention, 5));
    assert_eq!((records[2].done_reason, records[2].steps), (DoneReason::Intervention, 3));
    assert!(records[1].is_disengagement());
    let last = trainer.state().replay.iter().filter(|e| e.episode_id == 1).last().unwrap();
    assert!(last.done);
    assert_eq!(trainer.log().summary("vae").disengagements, 1);
}

#[test]
fn optimization_clears_new_markers() {
    let mut cfg = cfg_with_exploration(&small(Representation::Pixels, 12), 0);
    cfg.env.max_steps = 10;
    cfg.agent.opt_steps_per_episode = 2;
    let (trainer, _) = run_script(&cfg, &[Train]);
    assert_eq!(trainer.state().replay.len(), 10);
    assert_eq!(trainer.state().replay.fresh_count(), 0);
    assert_eq!(trainer.state().optimize_rounds, 1);
}

#[test]
fn frozen_vae_trains_only_in_the_first_round() {
    let mut cfg = cfg_with_exploration(&small(Representation::Vae, 13), 0);
    cfg.vae.train_online = false;
    let (mut trainer, _) = run_script(&cfg, &[Train]);
    let vae = trainer.state().vae.clone();
    assert!(trainer.log().records[0].vae_loss.is_some());
    let mut d = ScriptedDriver::default();
    let Some(TaskOutcome::Episode(r)) = trainer.run_task(Train, &mut d, &mut NoObserver).unwrap() else { panic!() };
    assert_eq!(r.vae_loss, None);
    assert!(r.mean_td.is_some());
    assert_eq!(trainer.state().vae, vae);
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let cfg = small(Representation::Vae, 14);
    let mut commands = vec![Train; 20];
    commands.extend([Test, Done]);
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: Some(dir.path().to_owned()), dump_frames: false };
        run_experiment(cfg.clone(), &mut ScriptedDriver::new(commands.clone()), &mut NoObserver, &opts).unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        outputs.push([read("metrics.csv"), read("episodes.jsonl"), read("summary.csv"), read("checkpoints/final.ckpt")]);
    }
    assert_eq!(outputs[0], outputs[1]);
    let log = EpisodeLog::from_jsonl(std::str::from_utf8(&outputs[0][1]).unwrap()).unwrap();
    assert_eq!(log.records.len(), 21);
    assert!(log.records.iter().all(|r| r.schema == LOG_SCHEMA));

    let other = run_experiment(
        small(Representation::Vae, 15),
        &mut ScriptedDriver::new(commands),
        &mut NoObserver,
        &RunOptions::default(),
    )
    .unwrap();
    assert_ne!(other.log.metrics_csv().into_bytes(), outputs[0][0]);
}

#[test]
fn checkpoint_restore_is_observationally_exact() {
    let cfg = small(Representation::Vae, 16);
    let (mut a, _) = run_script(&cfg, &[Train, Train, Train, Test]);
    let bytes = a.checkpoint();
    let mut b = Trainer::new(cfg.clone()).unwrap();
    b.restore(&bytes).unwrap();
    assert_eq!(b.checkpoint(), bytes);
    let mut d = ScriptedDriver::default();
    for cmd in [Train, Test, Train] {
        let ra = a.run_task(cmd, &mut d, &mut NoObserver).unwrap().unwrap();
        let rb = b.run_task(cmd, &mut d, &mut NoObserver).unwrap().unwrap();
        let (TaskOutcome::Episode(ra), TaskOutcome::Episode(rb)) = (ra, rb) else { panic!() };
        assert_eq!((ra.distance, ra.steps, ra.mean_td), (rb.distance, rb.steps, rb.mean_td));
    }
    assert_eq!(a.checkpoint(), b.checkpoint());

    let mut truncated = bytes.clone();
    truncated.pop();
    assert!(b.restore(&truncated).is_err());
    let pixels = small(Representation::Pixels, 16);
    assert!(TrainerState::from_bytes(&pixels, &bytes).is_err());
}

#[test]
fn resumed_runs_continue_ids_and_the_log() {
    let cfg = small(Representation::Pixels, 22);
    let (mut a, _) = run_script(&cfg, &[Train, Undo, Train, Test]);
    let mut b = Trainer::resume(cfg, &a.checkpoint(), a.log().clone()).unwrap();
    assert!(!b.can_undo());
    let mut d = ScriptedDriver::default();
    for cmd in [Train, Train] {
        a.run_task(cmd, &mut d, &mut NoObserver).unwrap();
        b.run_task(cmd, &mut d, &mut NoObserver).unwrap();
    }
    assert_eq!(b.log(), a.log());
    assert_eq!(b.log().records.last().unwrap().episode_id, 4);
    assert_eq!(b.checkpoint(), a.checkpoint());
}

#[test]
fn logged_runs_replay_from_their_log() {
    let cfg = small(Representation::Pixels, 17);
    let driver = ScriptedDriver::new(vec![Train, Train, Undo, Train, Test, Train, Undo, Undo, Test]).intervene_at(3, 4);
    let first = run_experiment(cfg.clone(), &mut driver.clone(), &mut NoObserver, &RunOptions::default()).unwrap();
    let mut script = script_from_log(&first.log);
    let second = run_experiment(cfg, &mut script, &mut NoObserver, &RunOptions::default()).unwrap();
    assert_eq!(second.log, first.log);
    assert_eq!(second.checkpoint, first.checkpoint);
}

#[test]
fn auto_oracle_follows_the_schedule() {
    let mut cfg = small(Representation::Pixels, 18);
    cfg.env.max_steps = 3;
    cfg.trainer.exploration_episodes = 2;
    cfg.trainer.train_episodes = 6;
    cfg.trainer.test_every = 2;
    let report = run_experiment(cfg.clone(), &mut AutoOracle::new(&cfg.trainer), &mut NoObserver, &RunOptions::default())
        .unwrap();
    let tasks: String =
        report.log.records.iter().map(|r| if r.task == TaskKind::Train { 'T' } else { 't' }).collect();
    assert_eq!(tasks, "TTTTtTTt");

    // Stops at the first test reaching the target distance (every test does here).
    cfg.trainer.stop_at_test_m = Some(0.0);
    let report = run_experiment(cfg.clone(), &mut AutoOracle::new(&cfg.trainer), &mut NoObserver, &RunOptions::default())
        .unwrap();
    assert_eq!(report.log.records.len(), 5);

    let mut oracle = AutoOracle::new(&cfg.trainer);
    let ctx = DriverContext { can_undo: false, train_episodes: 0, episodes: 0 };
    assert!(!oracle.intervene(0));
    assert_eq!(oracle.next_task(&ctx), Train);
}

#[test]
fn auto_stop_after_stale_tests() {
    let cfg = small(Representation::Pixels, 19);
    let mut oracle = AutoOracle::new(&lanerl_core::config::TrainerConfig {
        exploration_episodes: 0,
        auto_stop_patience: Some(2),
        ..cfg.trainer.clone()
    });
    let ctx = DriverContext { can_undo: false, train_episodes: 0, episodes: 0 };
    let test = |d: f64| {
        TaskOutcome::Episode(EpisodeRecord { task: TaskKind::Test, distance: d, ..record_template() })
    };
    let train = TaskOutcome::Episode(record_template());
    let mut seen = Vec::new();
    for d in [5.0, 7.0, 6.0, 7.0, 1.0] {
        assert_eq!(oracle.next_task(&ctx), Train);
        oracle.task_finished(&train);
        assert_eq!(oracle.next_task(&ctx), Test);
        oracle.task_finished(&test(d));
        seen.push(oracle.next_task(&ctx));
        if seen.last() == Some(&Done) {
            break;
        }
    }
    assert_eq!(seen, [Train, Train, Train, Done]);
}

fn record_template() -> EpisodeRecord {
    EpisodeRecord {
        schema: LOG_SCHEMA,
        episode_id: 0,
        task: TaskKind::Train,
        policy: PolicyKind::Noisy,
        noisy: true,
        episode_index: 0,
        noise_decay: 1.0,
        road_seed: 0,
        distance: 1.0,
        steps: 10,
        duration_s: 1.0,
        done_reason: DoneReason::LaneDeparture,
        opt_steps: 0,
        mean_td: None,
        vae_loss: None,
        buffer_size: 0,
        reverted: false,
    }
}

#[test]
fn metrics_rows_match_active_episodes_and_summary_uses_a_sentinel() {
    let mut log = EpisodeLog::default();
    log.push(EpisodeRecord { episode_id: 0, distance: 12.5, ..record_template() });
    log.push(EpisodeRecord { episode_id: 1, distance: 4.0, ..record_template() });
    log.push(EpisodeRecord {
        episode_id: 2,
        task: TaskKind::Test,
        policy: PolicyKind::Optimal,
        distance: 195.5,
        done_reason: DoneReason::RouteComplete,
        ..record_template()
    });
    log.mark_reverted(1);
    let csv = log.metrics_csv();
    assert_eq!(csv.lines().count(), 1 + log.active().count());
    assert_eq!(csv.lines().nth(2).unwrap(), "2,test,195.5,10,1,");
    let s = log.summary("vae");
    assert_eq!(s.meters_per_disengagement(), None);
    assert_eq!(s.csv_row(), "vae,1,12.5,1,-,0\n");
    assert_eq!(Summary::CSV_HEADER.split(',').count(), s.csv_row().split(',').count());
    assert_eq!(EpisodeLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    assert!(EpisodeLog::from_jsonl(&log.to_jsonl().replace("\"schema\":1", "\"schema\":9")).is_err());

    log.push(EpisodeRecord { episode_id: 3, task: TaskKind::Test, distance: 30.0, ..record_template() });
    assert_eq!(log.summary("vae").meters_per_disengagement(), Some(225.5));
}

#[test]
fn zero_policy_drives_straight() {
    assert_eq!(zero_policy(7.0), Action::new(0.0, 7.0));
}

proptest! {
    #[test]
    fn random_policy_stays_in_the_action_box(seed in any::<u64>(), episode in 0u64..2000, sigma in 0.0f64..5.0) {
        let mut ou = OuNoise::new(vec![0.0, 0.0], 0.6, sigma, 250.0);
        ou.episode_index = episode;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let a = random_policy(&mut ou, &mut rng, 10.0, 3.0, 10.0);
            prop_assert!((-1.0..=1.0).contains(&a.steering));
            prop_assert!((0.0..=10.0).contains(&a.speed_kmh));
        }
    }

    // Replay compares parsed logs, so every float must survive the text form.
    #[test]
    fn episode_log_round_trips_arbitrary_floats(
        values in prop::collection::vec((0.0f64..1e4, any::<f64>().prop_filter("finite", |v| v.is_finite())), 1..20)
    ) {
        let mut log = EpisodeLog::default();
        for (i, &(distance, td)) in values.iter().enumerate() {
            log.push(EpisodeRecord { episode_id: i as u64, distance, mean_td: Some(td), noise_decay: 0.5f64.powf(distance / 250.0), ..record_template() });
        }
        prop_assert_eq!(EpisodeLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    }
}

#[test]
fn random_policy_is_worse_than_zero_on_straight_roads() {
    let mut cfg = ExperimentConfig::default();
    cfg.env.road.straight_probability = 1.0;
    let zero = evaluate_baseline(&cfg, Baseline::Zero, 0, 50).unwrap();
    let random = evaluate_baseline(&cfg, Baseline::Random, 0, 50).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(zero.iter().all(|&d| d > 249.0), "{zero:?}");
    assert!(mean(&random) < mean(&zero), "{} vs {}", mean(&random), mean(&zero));
}

#[test]
fn undo_is_exact_over_random_task_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for seq in 0..12 {
        let rep = if seq % 2 == 0 { Representation::Vae } else { Representation::Pixels };
        let mut cfg = small(rep, seq);
        cfg.env.max_steps = 12;
        cfg.trainer.exploration_episodes = rng.random_range(0..3);
        let mut trainer = Trainer::new(cfg).unwrap();
        let mut d = ScriptedDriver::default();
        for _ in 0..6 {
            let cmd = if rng.random_bool(0.7) { Train } else { Test };
            let before = trainer.checkpoint();
            trainer.run_task(cmd, &mut d, &mut NoObserver).unwrap();
            if rng.random_bool(0.5) {
                trainer.undo();
                assert_eq!(trainer.checkpoint(), before, "sequence {seq}");
            }
        }
    }
}

#[test]
fn full_size_optimization_round_is_finite_and_fast() {
    let mut cfg = ExperimentConfig::preset("paper-sim").unwrap();
    cfg.trainer.exploration_episodes = 1;
    let (mut trainer, _) = run_script(&cfg, &[Train]);
    let start = Instant::now();
    let stats = trainer.optimize().unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(stats.steps, 250);
    assert!(stats.mean_td.unwrap().is_finite() && stats.vae_loss.unwrap().is_finite());
    assert!(trainer.state().agent.online.is_finite());
    assert!(elapsed < 60.0, "{elapsed:.1} s");
}

#[test]
fn frame_dumps_cover_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Representation::Vae, 21);
    cfg.env.max_steps = 4;
    let opts = RunOptions { out_dir: Some(dir.path().to_owned()), dump_frames: true };
    let report =
        run_experiment(cfg, &mut ScriptedDriver::new(vec![Train, Done]), &mut NoObserver, &opts).unwrap();
    let ep = dir.path().join("frames/episode_00000");
    let pngs = std::fs::read_dir(&ep).unwrap().count();
    assert_eq!(pngs, report.log.records[0].steps + 2);
    assert!(ep.join("reconstruction.png").exists());
}
