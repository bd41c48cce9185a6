use bbgky_cli::config::{DressingChoice, ExperimentConfig, KernelSource, Scenario, SweepConfig};
use proptest::prelude::*;

fn base() -> ExperimentConfig {
    ExperimentConfig::bundled_default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_serialize_parse_is_identity(
        scenario in 0usize..6,
        seed in 0..=i64::MAX as u64,
        grid_len in 1usize..5,
        eps in 0.01f64..2.0,
        times in prop::collection::vec(0.0f64..2.0, 1..5),
        truncation in 2usize..6,
        amplitude in 0.0f64..0.9,
        dressing in 0usize..3,
        source in 0usize..4,
        sweep in any::<bool>(),
    ) {
        let mut cfg = base();
        cfg.scenario = Scenario::ALL[scenario];
        cfg.seed = seed;
        cfg.space.grid_len = grid_len;
        cfg.run.epsilon = eps;
        let mut times = times;
        times.sort_by(f64::total_cmp);
        cfg.run.times = times;
        cfg.run.truncation = truncation;
        cfg.initial.pair_amplitude = amplitude;
        cfg.initial.dressing = [DressingChoice::Auto, DressingChoice::LiteralForward, DressingChoice::InverseDressed][dressing];
        cfg.kernels.source = [
            KernelSource::UniformRedistribution,
            KernelSource::LocalDiffusion,
            KernelSource::Alignment,
            KernelSource::Random,
        ][source];
        if sweep {
            cfg.sweep = Some(SweepConfig { epsilons: Some(vec![eps, eps / 2.0]), times: None, truncations: Some(vec![truncation]) });
        }
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let again = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_toml(), text);
    }
}

#[test]
fn seeds_beyond_the_toml_integer_range_are_rejected() {
    let mut cfg = base();
    cfg.seed = u64::MAX;
    assert!(cfg.validate().unwrap_err().to_string().contains("seed"));
}
