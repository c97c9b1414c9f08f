use trajcon::mtcl::UpdateStrategy;
use trajcon::BetaMode;
use trajcon_cli::config::RunConfig;

#[test]
fn defaults_carry_training_and_tracking_constants() {
    let c = RunConfig::default();
    assert_eq!((c.train.tau, c.train.alpha, c.train.n_k), (0.05, 0.2, 9));
    assert_eq!(c.train.learning_rate, 1e-4);
    assert_eq!((c.tracker.kappa1, c.tracker.kappa2, c.tracker.kappa3), (0.3, 0.5, 0.7));
    assert_eq!((c.tracker.lambda, c.tracker.q), (15, 30));
}

#[test]
fn unknown_and_malformed_keys_fail() {
    assert!(RunConfig::parse("tua=0.1").is_err());
    assert!(RunConfig::parse("tau").is_err());
    assert!(RunConfig::parse("tau=abc").is_err());
    assert!(RunConfig::parse("strategy=hardest").is_err());
}

#[test]
fn comments_blanks_and_values() {
    let c = RunConfig::parse("# run\n\ntau = 0.1  # warmer\nstrategy=average\nbeta=fixed:0.9\nseed=4\n").unwrap();
    assert_eq!(c.train.tau, 0.1);
    assert_eq!(c.train.strategy, UpdateStrategy::Average);
    assert_eq!(c.tracker.beta_mode, BetaMode::Fixed(0.9));
    assert_eq!((c.scenario.seed, c.train.seed), (4, 4));
}

#[test]
fn rendered_config_reproduces_itself() {
    let mut c = RunConfig::parse("seed=9\ntrain_seed=2\nsigma_emb=0.07\nkappa1=0.25\nocclusion=false").unwrap();
    c.finalize().unwrap();
    let again = RunConfig::parse(&c.render()).unwrap();
    assert_eq!(again, c);
    assert_eq!(again.train.seed, 2);
}

#[test]
fn finalize_validates_sections() {
    let mut c = RunConfig::parse("p_drop=1.5").unwrap();
    assert!(c.finalize().is_err());
    let mut c = RunConfig::parse("kappa2=2").unwrap();
    assert!(c.finalize().is_err());
    let mut c = RunConfig::parse("fmap_channels=5").unwrap();
    c.finalize().unwrap();
    assert_eq!(c.train.dims.input, 5);
}
