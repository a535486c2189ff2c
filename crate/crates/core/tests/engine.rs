use std::collections::BTreeMap;

use llcsnap_core::cache::{CacheGeometry, ReplacementPolicy};
use llcsnap_core::shutter::{ShutterConfig, Trigger};
use llcsnap_core::vm::Pid;
use llcsnap_core::workload::{
    build_benchmark, measure_slowdown, run, Activation, Benchmark, EventKind, Instruction, NoTrigger, Program,
    RunOptions, RunResult, SchedPolicy, Scheduler, StopWhen, TaskSpec, TimingModel, WorkloadError, WorldSetup,
};
use proptest::prelude::*;

const KB: u64 = 1024;

fn setup(policy: ReplacementPolicy) -> WorldSetup {
    WorldSetup {
        policy,
        ..WorldSetup::default()
    }
}

fn scan(name: &str, size: u64, passes: u64) -> Program {
    Program::new(
        name,
        vec![
            Instruction::alloc("buf", size, false),
            Instruction::Loop {
                count: passes,
                body: vec![Instruction::read("buf", 0, size)],
            },
        ],
    )
}

fn run_tasks(tasks: Vec<TaskSpec>, sched: Scheduler, trace: bool) -> RunResult {
    let mut world = setup(ReplacementPolicy::TrueRandom { seed: 3 }).build().unwrap();
    let opts = RunOptions {
        record_trace: trace,
        ..RunOptions::default()
    };
    run(&mut world, tasks, &sched, &mut NoTrigger, &opts).unwrap()
}

#[test]
fn fixed_priority_runs_in_strict_order() {
    let tasks: Vec<TaskSpec> = (1..=4)
        .map(|i| TaskSpec::new(Pid(i), scan("s", 16 * KB * i, 3), 0, 10 - i as i64))
        .collect();
    let r = run_tasks(tasks, Scheduler::single_core(SchedPolicy::FixedPriority), true);
    assert_eq!(r.preemptions(), 0);
    assert_eq!(r.completion_order, vec![Pid(1), Pid(2), Pid(3), Pid(4)]);
    // no interleaving: the trace is four contiguous blocks
    let mut blocks: Vec<Pid> = r.trace.iter().map(|t| t.pid).collect();
    blocks.dedup();
    assert_eq!(blocks, vec![Pid(1), Pid(2), Pid(3), Pid(4)]);
}

#[test]
fn cfs_switches_every_quantum() {
    let quantum = 100;
    let tasks: Vec<TaskSpec> = (1..=4).map(|i| TaskSpec::new(Pid(i), scan("s", 64 * KB, 2), 0, 0)).collect();
    let r = run_tasks(tasks, Scheduler::single_core(SchedPolicy::CfsLike { quantum }), false);
    let windows = r.total_accesses / quantum;
    assert!(r.context_switches() as u64 >= windows - 4, "{} switches", r.context_switches());
    assert!(r.preemptions() > 0);
}

#[test]
fn cfs_is_fair_at_every_instant() {
    let quantum = 37;
    let tasks: Vec<TaskSpec> = (1..=3).map(|i| TaskSpec::new(Pid(i), scan("s", 32 * KB, 1), 0, 0)).collect();
    let r = run_tasks(tasks, Scheduler::single_core(SchedPolicy::CfsLike { quantum }), true);
    let mut counts: BTreeMap<Pid, u64> = BTreeMap::new();
    for t in &r.trace {
        *counts.entry(t.pid).or_default() += 1;
        let lo = (1..=3).map(|i| counts.get(&Pid(i)).copied().unwrap_or(0)).min().unwrap();
        let hi = counts.values().copied().max().unwrap();
        assert!(hi - lo <= quantum, "{counts:?}");
    }
}

#[test]
fn multi_core_interleaves_one_access_per_core() {
    let tasks = vec![
        TaskSpec::new(Pid(1), scan("a", 4 * KB, 1), 0, 0),
        TaskSpec::new(Pid(2), scan("b", 4 * KB, 1), 1, 0),
    ];
    let sched = Scheduler {
        policy: SchedPolicy::FixedPriority,
        cores: 2,
    };
    let r = run_tasks(tasks, sched, true);
    let pids: Vec<u64> = r.trace.iter().map(|t| t.pid.0).collect();
    assert_eq!(&pids[..6], &[1, 2, 1, 2, 1, 2]);
    assert_eq!(r.rounds, 64);
}

#[test]
fn runs_are_deterministic() {
    let make = || {
        let geom = CacheGeometry::default();
        vec![
            TaskSpec::new(Pid(1), build_benchmark(&Benchmark::Synth { buffer: 64 * KB, iterations: 2 }, &geom).unwrap(), 0, 0),
            TaskSpec::new(Pid(2), scan("s", 128 * KB, 2), 0, 0),
        ]
    };
    let sched = Scheduler::single_core(SchedPolicy::CfsLike { quantum: 50 });
    assert_eq!(run_tasks(make(), sched, true), run_tasks(make(), sched, true));
}

#[test]
fn cycles_follow_the_timing_model() {
    let mut s = setup(ReplacementPolicy::Lru);
    s.timing = TimingModel { hit_cost: 2, miss_cost: 45 };
    let mut world = s.build().unwrap();
    let r = run(
        &mut world,
        vec![TaskSpec::new(Pid(1), scan("s", 8 * KB, 3), 0, 0)],
        &Scheduler::single_core(SchedPolicy::FixedPriority),
        &mut NoTrigger,
        &RunOptions::default(),
    )
    .unwrap();
    let st = r.per_pid[&Pid(1)];
    assert_eq!(st.misses, 128);
    assert_eq!(st.hits, 256);
    assert_eq!(st.cycles, 2 * 256 + 45 * 128);
    assert_eq!(st.page_faults, 2);
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut world = WorldSetup::default().build().unwrap();
    let p = scan("s", 4 * KB, 1);
    let fp = Scheduler::single_core(SchedPolicy::FixedPriority);
    let run1 = |world: &mut _, tasks, sched: &Scheduler| run(world, tasks, sched, &mut NoTrigger, &RunOptions::default());
    assert!(matches!(
        run1(&mut world, vec![TaskSpec::new(Pid(1), p.clone(), 3, 0)], &fp),
        Err(WorkloadError::Config(_))
    ));
    let mut world = WorldSetup::default().build().unwrap();
    let dup = vec![TaskSpec::new(Pid(1), p.clone(), 0, 1), TaskSpec::new(Pid(1), p.clone(), 0, 2)];
    assert!(matches!(run1(&mut world, dup, &fp), Err(WorkloadError::Config(_))));
    let mut world = WorldSetup::default().build().unwrap();
    let same_prio = vec![TaskSpec::new(Pid(1), p.clone(), 0, 1), TaskSpec::new(Pid(2), p.clone(), 0, 1)];
    assert!(matches!(run1(&mut world, same_prio, &fp), Err(WorkloadError::Config(_))));
    let mut world = WorldSetup::default().build().unwrap();
    let q0 = Scheduler::single_core(SchedPolicy::CfsLike { quantum: 0 });
    assert!(matches!(run1(&mut world, vec![TaskSpec::new(Pid(1), p, 0, 0)], &q0), Err(WorkloadError::Config(_))));
    assert!(TimingModel { hit_cost: 5, miss_cost: 5 }.validate().is_err());
    assert!(TimingModel { hit_cost: 0, miss_cost: 5 }.validate().is_err());
}

#[test]
fn overrunning_programs_are_rejected_before_running() {
    let bad = Program::new(
        "bad",
        vec![
            Instruction::alloc("buf", 4 * KB, false),
            Instruction::read("buf", 0, 8 * KB),
        ],
    );
    let mut world = WorldSetup::default().build().unwrap();
    let r = run(
        &mut world,
        vec![TaskSpec::new(Pid(1), bad, 0, 0)],
        &Scheduler::single_core(SchedPolicy::FixedPriority),
        &mut NoTrigger,
        &RunOptions::default(),
    );
    assert!(matches!(r, Err(WorkloadError::Program(_))));
}

#[test]
fn slowdown_against_idle_is_exactly_one() {
    let s = setup(ReplacementPolicy::TrueRandom { seed: 1 });
    let obs = scan("o", 256 * KB, 4);
    assert_eq!(measure_slowdown(&s, &obs, &Program::idle()).unwrap(), 1.0);
}

#[test]
fn small_footprints_barely_interfere() {
    // 256 KB each, far below the 2 MB cache
    let s = setup(ReplacementPolicy::Lru);
    let r = measure_slowdown(&s, &scan("o", 256 * KB, 8), &scan("i", 256 * KB, 1)).unwrap();
    assert!((1.0..1.02).contains(&r), "{r}");
}

#[test]
fn bomb_always_slows_down() {
    let geom = CacheGeometry::default();
    let bomb = build_benchmark(&Benchmark::Bomb { size: 2560 * KB, passes: 1 }, &geom).unwrap();
    for policy in [ReplacementPolicy::TrueRandom { seed: 2 }, ReplacementPolicy::Lru, ReplacementPolicy::Fifo] {
        let r = measure_slowdown(&setup(policy), &scan("o", 512 * KB, 6), &bomb).unwrap();
        assert!(r > 1.0, "{r}");
    }
}

fn program_strategy() -> impl Strategy<Value = Program> {
    (1u64..=64, 1u64..=4, any::<bool>()).prop_map(|(kb, passes, write)| {
        let size = kb * KB;
        let body = if write {
            Instruction::write("buf", 0, size)
        } else {
            Instruction::read("buf", 0, size)
        };
        Program::new(
            "p",
            vec![
                Instruction::alloc("buf", size, false),
                Instruction::Loop { count: passes, body: vec![body] },
            ],
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn access_count_is_scheduler_independent(
        progs in prop::collection::vec(program_strategy(), 1..4),
        quantum in 1u64..500,
    ) {
        let expected: u64 = progs.iter().map(|p| p.access_count(64)).sum();
        let tasks = |progs: &[Program]| -> Vec<TaskSpec> {
            progs.iter().enumerate().map(|(i, p)| TaskSpec::new(Pid(i as u64 + 1), p.clone(), 0, i as i64)).collect()
        };
        for policy in [SchedPolicy::FixedPriority, SchedPolicy::CfsLike { quantum }] {
            let r = run_tasks(tasks(&progs), Scheduler::single_core(policy), false);
            prop_assert_eq!(r.total_accesses, expected);
            prop_assert_eq!(r.per_pid.values().map(|s| s.accesses).sum::<u64>(), expected);
            for s in r.per_pid.values() {
                prop_assert_eq!(s.hits + s.misses, s.accesses);
            }
        }
    }

    /// LRU keeps the stack property per set, so extra traffic from another
    /// core can only turn hits into misses.
    #[test]
    fn lru_slowdown_is_at_least_one(obs in program_strategy(), intf in program_strategy()) {
        let r = measure_slowdown(&setup(ReplacementPolicy::Lru), &obs, &intf).unwrap();
        prop_assert!(r >= 1.0, "{}", r);
    }
}

fn trigger(sync: bool, period: u64) -> Trigger<Vec<llcsnap_core::shutter::Snapshot>> {
    let cfg = ShutterConfig {
        sync,
        ..ShutterConfig::transparent()
    };
    let mut t = Trigger::new(
        ShutterConfig {
            reserved_snapshots: Some(1000),
            ..cfg
        },
        Activation::Periodic { period },
        Vec::new(),
    );
    t.trigger_core = 0;
    t.quiesce_delay = 10;
    t
}

fn two_core_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::new(Pid(1), scan("a", 64 * KB, 2), 0, 0),
        TaskSpec::new(Pid(2), scan("b", 64 * KB, 2), 1, 0),
    ]
}

fn event_times(r: &RunResult, pred: impl Fn(&EventKind) -> bool) -> Vec<u64> {
    r.events.iter().filter(|e| pred(&e.kind)).map(|e| e.time).collect()
}

#[test]
fn sync_mode_freezes_everyone_through_post_processing() {
    let mut world = WorldSetup::default().build().unwrap();
    let sched = Scheduler { policy: SchedPolicy::FixedPriority, cores: 2 };
    let mut t = trigger(true, 200);
    let r = run(&mut world, two_core_tasks(), &sched, &mut t, &RunOptions::default()).unwrap();
    let paused = event_times(&r, |k| matches!(k, EventKind::Paused));
    let resumed = event_times(&r, |k| matches!(k, EventKind::Resumed));
    assert!(!paused.is_empty());
    assert_eq!(paused, resumed);
    assert_eq!(t.taken(), paused.len() as u64);
}

#[test]
fn async_mode_only_preempts_the_trigger_core() {
    let mut world = WorldSetup::default().build().unwrap();
    let sched = Scheduler { policy: SchedPolicy::FixedPriority, cores: 2 };
    let mut t = trigger(false, 200);
    let r = run(&mut world, two_core_tasks(), &sched, &mut t, &RunOptions { record_trace: true, ..RunOptions::default() }).unwrap();
    let activated = event_times(&r, |k| matches!(k, EventKind::TriggerActivated));
    let quiesced = event_times(&r, |k| matches!(k, EventKind::Quiesced));
    let captured = event_times(&r, |k| matches!(k, EventKind::Captured));
    assert!(!activated.is_empty());
    assert_eq!(quiesced, captured, "nothing runs during the sweep");
    for (a, q) in activated.iter().zip(&quiesced) {
        // the other core keeps running while the trigger arms
        assert!(q > a);
    }
    assert!(r.count(|k| matches!(k, EventKind::TriggerPreemption { core: 0, .. })) > 0);
    assert_eq!(r.count(|k| matches!(k, EventKind::TriggerPreemption { core: 1, .. })), 0);
    // during arming only pid 2 executes
    let (a, q) = (activated[0], quiesced[0]);
    assert!(r.trace.iter().filter(|e| e.time >= a && e.time < q).all(|e| e.pid == Pid(2)));
}

#[test]
fn event_mode_captures_each_signal() {
    let geom = CacheGeometry::default();
    let p = build_benchmark(&Benchmark::SynthStep { buffer: 16 * KB, iterations: 3 }, &geom).unwrap();
    let mut world = WorldSetup::default().build().unwrap();
    let mut t = Trigger::new(ShutterConfig::default(), Activation::Event, Vec::new());
    let r = run(
        &mut world,
        vec![TaskSpec::new(Pid(1), p, 0, 0)],
        &Scheduler::single_core(SchedPolicy::FixedPriority),
        &mut t,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(r.count(|k| matches!(k, EventKind::Signal { .. })), 12);
    assert_eq!(t.taken(), 12);
}

#[test]
fn partial_stop_leaves_others_running() {
    let mut world = WorldSetup::default().build().unwrap();
    let tasks = vec![
        TaskSpec::new(Pid(1), scan("a", 16 * KB, 1), 0, 0),
        TaskSpec::new(Pid(2), scan("b", 16 * KB, 1).repeat_forever(), 1, 0),
    ];
    let opts = RunOptions {
        stop: StopWhen::Finished(vec![Pid(1)]),
        max_rounds: Some(10_000),
        ..RunOptions::default()
    };
    let sched = Scheduler { policy: SchedPolicy::FixedPriority, cores: 2 };
    let r = run(&mut world, tasks, &sched, &mut NoTrigger, &opts).unwrap();
    assert_eq!(r.completion_order, vec![Pid(1)]);
    assert_eq!(r.per_pid[&Pid(1)].accesses, 256);
}
