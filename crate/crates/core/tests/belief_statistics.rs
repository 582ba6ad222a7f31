//! Statistical regression of the belief recursion on the bundled two-channel
//! game. Trajectories are rolled by hand (no library sampling code), the
//! conditional mean is formed from its published composite, and the sampled
//! filter-error moments are compared with the recursion's covariances.

use cimpe_core::belief::propagate_belief;
use cimpe_core::examples::two_channel_spec;
use cimpe_core::info::build_info_maps;
use cimpe_testkit::{rng, RunningMoments};
use rand_distr::{Distribution, StandardNormal};

struct Sampled {
    common_2: [f64; 4],
    error_x2: f64,
    error_y22: f64,
}

/// One equilibrium trajectory of the bundled game, rolled from scratch: all
/// primitives are unit normals, the first-stage gains are -5/59 and -9/59,
/// and the conditional mean of the second-stage state is the published
/// composite (y11 + y21)/3 + u11 + u21.
fn roll(rng: &mut rand_chacha::ChaCha8Rng) -> Sampled {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    let x1 = n();
    let y11 = x1 + n();
    let y21 = x1 + n();
    let u11 = -5.0 / 59.0 * y11;
    let u21 = -9.0 / 59.0 * y21;
    let x2 = x1 + u11 + u21 + n();
    let y22 = x2 + n();
    let m02 = (y11 + y21) / 3.0 + u11 + u21;
    Sampled {
        common_2: [y11, y21, u11, u21],
        error_x2: x2 - m02,
        error_y22: y22 - m02,
    }
}

#[test]
fn filter_errors_match_recursion_covariance_and_are_orthogonal() {
    let spec = two_channel_spec();
    let maps = build_info_maps(&spec).unwrap();
    let chain = propagate_belief(&spec, &maps).unwrap();
    let sigma2 = &chain.sigma[1];

    let samples = 200_000;
    let mut r = rng(314159);
    let mut var_x = RunningMoments::default();
    let mut var_y = RunningMoments::default();
    let mut cross = RunningMoments::default();
    let mut mean_x = RunningMoments::default();
    let mut orth = [(); 4].map(|_| RunningMoments::default());
    for _ in 0..samples {
        let s = roll(&mut r);
        mean_x.push(s.error_x2);
        var_x.push(s.error_x2 * s.error_x2);
        var_y.push(s.error_y22 * s.error_y22);
        cross.push(s.error_x2 * s.error_y22);
        for (acc, &c) in orth.iter_mut().zip(&s.common_2) {
            acc.push(s.error_x2 * c);
        }
    }

    // The filter error is unbiased and orthogonal to every component of the
    // common information it conditioned on.
    assert!(mean_x.mean().abs() <= 4.0 * mean_x.std_error(), "bias {}", mean_x.mean());
    for (k, acc) in orth.iter().enumerate() {
        assert!(
            acc.mean().abs() <= 4.0 * acc.std_error(),
            "component {k}: correlation {}",
            acc.mean()
        );
    }

    // Second moments of the filter error reproduce the recursion covariance
    // (4/3, 7/3 and 4/3 for this game).
    for (acc, exact) in [(&var_x, sigma2[(0, 0)]), (&var_y, sigma2[(1, 1)]), (&cross, sigma2[(0, 1)])] {
        let gap = (acc.mean() - exact).abs();
        assert!(gap <= 4.0 * acc.std_error(), "gap {gap} vs exact {exact}");
    }
    assert!((sigma2[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    assert!((sigma2[(1, 1)] - 7.0 / 3.0).abs() < 1e-12);
}

#[test]
fn filter_error_looks_gaussian_by_standardized_moments() {
    // Skewness of the x-filter error should vanish and excess kurtosis should
    // be near zero: the error is a linear image of the Gaussian primitives.
    let samples = 200_000;
    let mut r = rng(2718);
    let mut third = RunningMoments::default();
    let mut fourth = RunningMoments::default();
    let mut second = RunningMoments::default();
    for _ in 0..samples {
        let s = roll(&mut r);
        second.push(s.error_x2 * s.error_x2);
        third.push(s.error_x2.powi(3));
        fourth.push(s.error_x2.powi(4));
    }
    let variance = second.mean();
    let skew = third.mean() / variance.powf(1.5);
    let kurt = fourth.mean() / (variance * variance) - 3.0;
    assert!(skew.abs() < 0.05, "skewness {skew}");
    assert!(kurt.abs() < 0.1, "excess kurtosis {kurt}");
}

#[test]
fn equilibrium_actions_keep_filter_errors_centered_conditionally() {
    // Split trajectories by the sign of y11 - y21 (information not contained
    // in the conditional mean composite) and check the filter error stays
    // unbiased within each group: the belief does not secretly depend on it.
    let samples = 200_000;
    let mut r = rng(9001);
    let mut groups = [RunningMoments::default(), RunningMoments::default()];
    for _ in 0..samples {
        let s = roll(&mut r);
        let which = usize::from(s.common_2[0] > s.common_2[1]);
        groups[which].push(s.error_x2);
    }
    for (k, acc) in groups.iter().enumerate() {
        assert!(
            acc.mean().abs() <= 4.0 * acc.std_error(),
            "group {k}: conditional bias {}",
            acc.mean()
        );
    }
}
