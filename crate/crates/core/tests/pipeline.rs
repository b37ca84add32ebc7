use monotest_core::io::{load_csv_from, write_sample_csv};
use monotest_core::montecarlo::{Dgp, SimDesign};
use monotest_core::{
    run_test, run_test_semi, ActionSample, ColumnMapping, GameRecord, MomentKernel, TestConfig, ThetaMode,
};

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn csv_round_trip_is_exact() {
    let sample = SimDesign::new(Dgp::Covariate { case: 3 }, 50).sample(4).unwrap();
    let mapping = ColumnMapping {
        covariates: vec!["x".into()],
        ..ColumnMapping::default()
    };
    let mut buf = Vec::new();
    write_sample_csv(&sample, &mapping, &mut buf).unwrap();
    let back = load_csv_from(buf.as_slice(), &mapping).unwrap();
    assert_eq!(back.dropped_games, 0);
    assert_eq!(back.sample.num_games(), sample.num_games());
    for (a, b) in sample.games().iter().zip(back.sample.games()) {
        assert_eq!(a.id, b.id);
        assert_eq!(sorted(a.actions.clone()), sorted(b.actions.clone()));
        assert_eq!(a.covariates, b.covariates);
    }
}

#[test]
fn mixed_sizes_round_trip_into_groups() {
    let sample = SimDesign::new(Dgp::HeteroN { k: 2.0, a: 1 }, 2).sample(1).unwrap();
    let mut buf = Vec::new();
    write_sample_csv(&sample, &ColumnMapping::default(), &mut buf).unwrap();
    let back = load_csv_from(buf.as_slice(), &ColumnMapping::default()).unwrap().sample;
    let sizes: Vec<(usize, usize)> = back.split_groups().iter().map(|(_, g)| (g[0].n_agents(), g.len())).collect();
    assert_eq!(sizes, vec![(2, 60), (3, 40), (4, 20)]);
}

fn config(seed: u64) -> TestConfig {
    TestConfig {
        n_boot: 300,
        seed,
        ..TestConfig::default()
    }
}

/// Intercept-only homogenization rescales every action by one constant. With
/// the coefficients held at their full-sample values the bootstrap sees the
/// plain data up to scale, so decisions agree; refitting agrees under the null.
#[test]
fn intercept_only_semi_matches_plain_test() {
    for (k, expect) in [(0.5, false), (20.0, true)] {
        let sample = SimDesign::new(Dgp::NoCovariate { k }, 500).sample(2).unwrap();
        let scaled = sample.map_actions(|b| 3.0 * b).unwrap();
        let plain = run_test(&sample, &MomentKernel::AuctionHigh, &config(5)).unwrap();
        let fixed = run_test_semi(&scaled, &MomentKernel::AuctionHigh, &config(5), 300, ThetaMode::Fixed).unwrap();
        assert_eq!(plain.reject, expect, "plain k={k}");
        assert_eq!(fixed.reject, expect, "fixed k={k}");
        if !expect {
            let refit = run_test_semi(&scaled, &MomentKernel::AuctionHigh, &config(5), 300, ThetaMode::Refit).unwrap();
            assert!(!refit.reject);
        }
        let theta = fixed.theta_hat.unwrap();
        assert_eq!(theta.len(), 1);
        let mean_log = scaled.actions().map(f64::ln).sum::<f64>() / scaled.num_obs() as f64;
        assert!((theta[0] - mean_log).abs() < 1e-12);
        // rescaled actions are the plain ones times r, and auction moments scale with them
        let r = fixed.groups[0].support.hi / plain.groups[0].support.hi;
        for (a, b) in plain.groups[0].cells.iter().zip(&fixed.groups[0].cells) {
            assert!((a.b1 * r - b.b1).abs() < 1e-12 * b.b1.abs().max(1.0));
            assert!((a.nu_hat * r - b.nu_hat).abs() < 1e-12 * r.max(1.0));
        }
    }
}

#[test]
fn game_order_does_not_matter_for_point_estimates() {
    let sample = SimDesign::new(Dgp::NoCovariate { k: 5.0 }, 120).sample(3).unwrap();
    let mut games: Vec<GameRecord> = sample.games().to_vec();
    games.reverse();
    let reversed = ActionSample::new(games).unwrap();
    let (a, b) = (
        run_test(&sample, &MomentKernel::Contest, &config(1)).unwrap(),
        run_test(&reversed, &MomentKernel::Contest, &config(1)).unwrap(),
    );
    for (x, y) in a.groups[0].cells.iter().zip(&b.groups[0].cells) {
        assert!((x.nu_hat - y.nu_hat).abs() < 1e-15);
        assert!((x.sigma_hat - y.sigma_hat).abs() < 1e-12);
    }
    assert!((a.statistic - b.statistic).abs() <= 1e-12 * a.statistic.max(1.0));
}
