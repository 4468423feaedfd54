//! Trust-region smoke run on the 1-D point mass with the true performance reward.
//!
//! Runs in force space: the untrained gain policy already plays midpoint
//! gains that sit within a fifth of the best constant-gain score.

use impedance_irl::action::{ActionKind, ActionSpace};
use impedance_irl::envsim::{EnvConfig, EnvSpec, TaskKind};
use impedance_irl::evalharness::scores::ScoreWeights;
use impedance_irl::rollout::ObsMode;
use impedance_irl::trpo::{trpo_iteration, Learner, RewardSource, TrustRegionConfig};

#[test]
fn performance_improves_by_half_within_fifty_iterations() {
    let spec = EnvSpec::from_config(&EnvConfig::for_task(TaskKind::PointReach)).unwrap();
    let space = ActionSpace::standard(ActionKind::Force, &spec, false);
    let weights = ScoreWeights::default();
    let cfg = TrustRegionConfig {
        batch_size: 2000,
        traj_len: spec.horizon,
        ..TrustRegionConfig::default()
    };
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..3u64 {
        let mut learner = Learner::new(2, space.raw_dim(), &[32, 32], &cfg, seed).unwrap();
        let mut scores = Vec::new();
        for it in 0..=50u64 {
            let log = trpo_iteration(
                &spec,
                &mut learner,
                &space,
                ObsMode::Plain,
                RewardSource::Performance,
                &weights,
                &cfg,
                seed,
                it,
            )
            .unwrap();
            assert!(log.kl <= 1.5 * cfg.max_kl || !log.accepted, "iteration {it}: kl {}", log.kl);
            if log.accepted {
                assert!(log.surrogate_improvement > 0.0);
            }
            scores.push(log.mean_score);
        }
        eprintln!("seed {seed}: {:.4} -> {:.4}", scores[0], scores[50]);
        first += scores[0] / 3.0;
        last += scores[50] / 3.0;
    }
    assert!(first < 0.0);
    let gain = (last - first) / first.abs();
    assert!(gain >= 0.5, "mean score {first:.4} -> {last:.4}, improvement {gain:.3}");
}
