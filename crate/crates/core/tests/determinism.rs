use drbayes::simulation::{run_mc, Design, DesignSpec, McConfig};
use drbayes::{run_variants, Dataset, ProcedureConfig, SplitMode, StreamKey, Purpose, Variant};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn small_config() -> McConfig {
    let mut c = McConfig {
        replications: 6,
        ..Default::default()
    };
    c.procedure.draws = 60;
    c
}

#[test]
fn monte_carlo_report_does_not_depend_on_worker_count() {
    let spec = DesignSpec::new(Design::I, 40, 5, 17).unwrap();
    let one = in_pool(1, || run_mc(&spec, &small_config()).unwrap());
    let eight = in_pool(8, || run_mc(&spec, &small_config()).unwrap());
    assert_eq!(one, eight);
}

#[test]
fn split_runs_are_reproducible() {
    let spec = DesignSpec::new(Design::II, 30, 3, 5).unwrap();
    let mut c = small_config();
    c.replications = 3;
    c.procedure.split_mode = SplitMode::HalfSplit;
    let a = in_pool(2, || run_mc(&spec, &c).unwrap());
    let b = in_pool(1, || run_mc(&spec, &c).unwrap());
    assert_eq!(a, b);
    assert!(a.rows.iter().all(|r| r.method.ends_with("-S")));
}

#[test]
fn full_run_is_seed_deterministic() {
    let spec = DesignSpec::new(Design::I, 60, 5, 8).unwrap();
    let data: Dataset = drbayes::simulation::generate(&spec, &mut StreamKey::new(8).stream(Purpose::Data, 0)).unwrap();
    let config = ProcedureConfig {
        draws: 100,
        seed: 99,
        ..Default::default()
    };
    let variants = [Variant::Uncorrected, Variant::PriorCorrected, Variant::DoublyRobust];
    let a = in_pool(1, || run_variants(&data, &config, &variants).unwrap());
    let b = in_pool(8, || run_variants(&data, &config, &variants).unwrap());
    for v in variants {
        assert_eq!(a.get(v).unwrap().draws.values, b.get(v).unwrap().draws.values);
    }
    let other = run_variants(&data, &ProcedureConfig { seed: 100, ..config.clone() }, &variants).unwrap();
    assert_ne!(a.get(Variant::DoublyRobust).unwrap().draws.values, other.get(Variant::DoublyRobust).unwrap().draws.values);
}
