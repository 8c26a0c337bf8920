import math

import numpy as np
import pytest
from scipy.special import gammaln

from npmc.pmc import NpmcConfig
from npmc.sampling import RngStream
from npmc.skm import (
    GammaPrior,
    PfDiagnostics,
    PopulationExplosionError,
    SkmObservations,
    SkmTrajectory,
    complete_data_loglik,
    gamma_posterior_complete,
    gillespie_simulate,
    observe,
    pf_loglik,
    pf_loglik_batch,
    prior_from_spec,
    skm_npmc_run,
)
from npmc.weights import WeightTransform

THETA_TRUE = np.array([0.5, 0.0025, 0.3])
X0 = np.array([71, 79])


def gaussian2_logpdf(y, x, sigma2):
    d = np.asarray(y, float) - np.asarray(x, float)
    return -math.log(2 * math.pi * sigma2) - 0.5 * float(d @ d) / sigma2


# ---------------------------------------------------------------------------
# Gillespie simulator


def test_frozen_dynamics_zero_events():
    eps = 1e-12
    traj = gillespie_simulate([eps, eps, eps], X0, 40.0, RngStream(1))
    assert traj.n_events == 0
    assert np.array_equal(traj.reaction_counts, [0, 0, 0])
    g = np.array([71.0, 71.0 * 79.0, 79.0])
    assert np.allclose(traj.integrated_hazards, g * 40.0, rtol=1e-12)


def test_empty_population_is_absorbing():
    traj = gillespie_simulate(THETA_TRUE, [0, 0], 25.0, RngStream(2))
    assert traj.n_events == 0
    assert np.array_equal(traj.integrated_hazards, np.zeros(3))
    assert np.array_equal(traj.state_at(12.5), [0, 0])


def test_pure_birth_mean_population():
    theta1, horizon, runs = 0.5, 2.0, 10_000
    finals = np.empty(runs)
    root = RngStream(3)
    for r in range(runs):
        traj = gillespie_simulate([theta1, 0.0, 0.0], [10, 0], horizon, root.substream(r))
        finals[r] = traj.state_at(horizon)[0]
    expected = 10.0 * math.exp(theta1 * horizon)
    se = finals.std(ddof=1) / math.sqrt(runs)
    assert abs(finals.mean() - expected) <= 4 * se


def test_trajectory_consistency_and_hazard_integrals():
    traj = gillespie_simulate(THETA_TRUE, X0, 10.0, RngStream(4))
    assert traj.n_events > 0
    # re-integrate the piecewise-constant hazard factors independently
    ts = np.concatenate([[0.0], traj.times, [traj.horizon]])
    xs = np.vstack([traj.initial_state, traj.states])
    expected = np.zeros(3)
    for i in range(len(ts) - 1):
        dt = ts[i + 1] - ts[i]
        x1, x2 = float(xs[i][0]), float(xs[i][1])
        expected += dt * np.array([x1, x1 * x2, x2])
    assert np.allclose(traj.integrated_hazards, expected, rtol=1e-9)


def test_explosion_raises():
    with pytest.raises(PopulationExplosionError, match="population explosion"):
        gillespie_simulate([5.0, 0.0, 0.0], [100, 0], 10.0, RngStream(5), max_events=500)


def test_simulator_rejects_negative_rates_and_bad_state():
    with pytest.raises(ValueError):
        gillespie_simulate([-0.1, 0.1, 0.1], X0, 1.0, RngStream(0))
    with pytest.raises(ValueError):
        gillespie_simulate(THETA_TRUE, [-1, 3], 1.0, RngStream(0))


# ---------------------------------------------------------------------------
# complete-data likelihood and conjugacy


def test_complete_loglik_zero_event_trajectory():
    eps = 1e-12
    traj = gillespie_simulate([eps, eps, eps], X0, 40.0, RngStream(6))
    theta = np.array([0.4, 0.003, 0.2])
    g = np.array([71.0, 71.0 * 79.0, 79.0])
    assert complete_data_loglik(traj, theta) == pytest.approx(
        -float(theta @ (g * 40.0)), rel=1e-12
    )


def test_complete_loglik_additive_over_time_split():
    traj = gillespie_simulate(THETA_TRUE, X0, 8.0, RngStream(7))
    half = 4.0
    head = traj.times <= half
    t_head = traj.times[head]
    s_head = traj.states[head]
    k_head = traj.reaction_types[head]

    def hazards_between(t0, t1):
        ts = np.concatenate([[0.0], traj.times, [traj.horizon]])
        xs = np.vstack([traj.initial_state, traj.states])
        acc = np.zeros(3)
        for i in range(len(ts) - 1):
            lo, hi = max(ts[i], t0), min(ts[i + 1], t1)
            if hi > lo:
                x1, x2 = float(xs[i][0]), float(xs[i][1])
                acc += (hi - lo) * np.array([x1, x1 * x2, x2])
        return acc

    first = SkmTrajectory(
        times=t_head,
        states=s_head,
        reaction_types=k_head,
        initial_state=traj.initial_state,
        horizon=half,
        reaction_counts=np.array([(k_head == r).sum() for r in (1, 2, 3)]),
        integrated_hazards=hazards_between(0.0, half),
    )
    t_tail = traj.times[~head] - half
    s_tail = traj.states[~head]
    k_tail = traj.reaction_types[~head]
    second = SkmTrajectory(
        times=t_tail,
        states=s_tail,
        reaction_types=k_tail,
        initial_state=traj.state_at(half),
        horizon=traj.horizon - half,
        reaction_counts=np.array([(k_tail == r).sum() for r in (1, 2, 3)]),
        integrated_hazards=hazards_between(half, traj.horizon),
    )
    theta = np.array([0.6, 0.002, 0.25])
    total = complete_data_loglik(traj, theta)
    assert total == pytest.approx(
        complete_data_loglik(first, theta) + complete_data_loglik(second, theta),
        rel=1e-9,
    )


def test_complete_loglik_maximized_at_rate_ratio():
    traj = gillespie_simulate(THETA_TRUE, X0, 10.0, RngStream(8))
    mle = traj.reaction_counts / traj.integrated_hazards
    best = complete_data_loglik(traj, mle)
    for bump in (0.99, 1.01):
        for k in range(3):
            perturbed = mle.copy()
            perturbed[k] *= bump
            assert complete_data_loglik(traj, perturbed) <= best


def test_complete_loglik_nonpositive_rate_is_minus_inf():
    traj = gillespie_simulate(THETA_TRUE, X0, 2.0, RngStream(9))
    assert complete_data_loglik(traj, [0.0, 0.1, 0.1]) == -math.inf
    assert complete_data_loglik(traj, [0.5, -1.0, 0.1]) == -math.inf


def test_gamma_posterior_plugin_values():
    traj = SkmTrajectory(
        times=np.array([0.5, 1.0, 1.5]),
        states=np.array([[2, 0], [3, 0], [4, 0]]),
        reaction_types=np.array([1, 1, 1]),
        initial_state=np.array([1, 0]),
        horizon=2.0,
        reaction_counts=np.array([3, 0, 0]),
        integrated_hazards=np.array([2.0, 5.0, 7.0]),
    )
    prior = GammaPrior(np.ones(3), np.ones(3))
    post = gamma_posterior_complete(traj, prior)
    assert np.array_equal(post.a, [4.0, 1.0, 1.0])
    assert np.array_equal(post.b, [3.0, 6.0, 8.0])


def test_gamma_posterior_empty_trajectory_is_prior():
    traj = gillespie_simulate(THETA_TRUE, [0, 0], 5.0, RngStream(10))
    prior = GammaPrior([0.2, 0.3, 0.4], [1.0, 2.0, 3.0])
    post = gamma_posterior_complete(traj, prior)
    assert np.array_equal(post.a, prior.a)
    assert np.array_equal(post.b, prior.b)


def test_gamma_posterior_mean_approaches_mle_for_vague_prior():
    traj = gillespie_simulate(THETA_TRUE, X0, 10.0, RngStream(11))
    mle = traj.reaction_counts / traj.integrated_hazards
    post = gamma_posterior_complete(traj, GammaPrior(np.full(3, 1e-8), np.full(3, 1e-8)))
    assert np.allclose(post.mean, mle, rtol=1e-6)


def test_gamma_posterior_normalizer_matches_closed_form():
    traj = gillespie_simulate(THETA_TRUE, X0, 5.0, RngStream(12))
    prior = GammaPrior([2.0, 1.5, 3.0], [1.0, 2.0, 0.5])
    post = gamma_posterior_complete(traj, prior)
    for k in range(3):
        a, b = prior.a[k], prior.b[k]
        r, g = traj.reaction_counts[k], traj.integrated_hazards[k]
        # closed form: integral of theta^(a+r-1) exp(-(b+g) theta) * b^a/Gamma(a)
        log_closed = (
            gammaln(a + r) + a * math.log(b) - gammaln(a) - (a + r) * math.log(b + g)
        )
        mean_k = post.a[k] / post.b[k]
        std_k = math.sqrt(post.a[k]) / post.b[k]
        grid = np.linspace(max(mean_k - 14 * std_k, 1e-12), mean_k + 14 * std_k, 400_001)
        log_f = (
            r * np.log(grid)
            - g * grid
            + a * math.log(b)
            - gammaln(a)
            + (a - 1.0) * np.log(grid)
            - b * grid
        )
        c = log_f.max()
        log_quad = c + math.log(np.trapezoid(np.exp(log_f - c), grid))
        assert abs(log_quad - log_closed) <= 1e-6


# ---------------------------------------------------------------------------
# observation model


def test_observe_noise_free_matches_path():
    traj = gillespie_simulate(THETA_TRUE, X0, 10.0, RngStream(13))
    obs = observe(traj, 1.0, 1e-20, RngStream(14))
    assert obs.n == 10
    for i in range(1, 11):
        assert np.allclose(obs.y[i - 1], traj.state_at(float(i)), atol=1e-8)


def test_observe_constant_path_noise_averages_out():
    eps = 1e-12
    traj = gillespie_simulate([eps, eps, eps], X0, 10_000.0, RngStream(15))
    sigma2 = 100.0
    obs = observe(traj, 1.0, sigma2, RngStream(16))
    n = obs.n
    tol = 4.0 * math.sqrt(sigma2 / n)
    assert abs(obs.y[:, 0].mean() - 71.0) <= tol
    assert abs(obs.y[:, 1].mean() - 79.0) <= tol


def test_observe_event_on_sampling_instant_uses_post_event_state():
    traj = SkmTrajectory(
        times=np.array([1.0]),
        states=np.array([[72, 79]]),
        reaction_types=np.array([1]),
        initial_state=X0,
        horizon=2.0,
        reaction_counts=np.array([1, 0, 0]),
        integrated_hazards=np.array([1.0, 1.0, 1.0]),
    )
    obs = observe(traj, 1.0, 1e-20, RngStream(17))
    assert np.allclose(obs.y[0], [72.0, 79.0], atol=1e-8)


# ---------------------------------------------------------------------------
# particle-filter likelihood


def test_pf_frozen_dynamics_matches_closed_form():
    eps = 1e-12
    rates = np.array([eps, eps, eps])
    traj = gillespie_simulate(rates, X0, 10.0, RngStream(18))
    obs = observe(traj, 1.0, 100.0, RngStream(19))
    expected = sum(gaussian2_logpdf(obs.y[i], X0, 100.0) for i in range(obs.n))
    for j in (1, 7, 40):
        est = pf_loglik(rates, obs, X0, j, RngStream(20))
        assert est == pytest.approx(expected, rel=1e-12)


def test_pf_single_particle_reduction():
    traj = gillespie_simulate(THETA_TRUE, X0, 5.0, RngStream(21))
    obs = observe(traj, 1.0, 100.0, RngStream(22))
    trace: list = []
    est = pf_loglik_batch(
        THETA_TRUE[None, :], obs, X0, 1, RngStream(23), state_trace=trace
    )[0]
    # with one particle, resampling is the identity and the estimate is the
    # log observation density along the single realized path
    expected = sum(
        gaussian2_logpdf(obs.y[i], trace[i][0, 0], 100.0) for i in range(obs.n)
    )
    assert est == pytest.approx(expected, rel=1e-12)


def test_pf_single_observation_matches_prior_monte_carlo():
    traj = gillespie_simulate(THETA_TRUE, X0, 1.0, RngStream(24))
    obs = observe(traj, 1.0, 100.0, RngStream(25))
    assert obs.n == 1
    j = 2000
    pf_est = math.exp(pf_loglik(THETA_TRUE, obs, X0, j, RngStream(26)))
    # independent route: scalar simulator draws, then average the densities
    draws = np.empty(j)
    root = RngStream(27)
    for i in range(j):
        path = gillespie_simulate(THETA_TRUE, X0, 1.0, root.substream(i))
        draws[i] = math.exp(gaussian2_logpdf(obs.y[0], path.state_at(1.0), 100.0))
    mc = draws.mean()
    se = draws.std(ddof=1) / math.sqrt(j)
    assert abs(pf_est - mc) <= 4.0 * math.sqrt(2.0) * se


def test_pf_estimates_tighten_with_more_particles():
    traj = gillespie_simulate(THETA_TRUE, X0, 5.0, RngStream(28))
    obs = observe(traj, 1.0, 100.0, RngStream(29))
    reps = 50
    spreads = []
    for idx, j in enumerate((100, 1000, 10_000)):
        tiled = np.tile(THETA_TRUE, (reps, 1))
        ests = pf_loglik_batch(tiled, obs, X0, j, RngStream(30).substream(idx))
        spreads.append(ests.var(ddof=1))
    assert spreads[0] > spreads[1] > spreads[2]


def test_pf_discriminates_true_rates_from_inflated():
    reps = 50
    wins = 0
    for r in range(reps):
        stream = RngStream(31).substream(r)
        traj = gillespie_simulate(THETA_TRUE, X0, 40.0, stream.substream(0))
        obs = observe(traj, 1.0, 100.0, stream.substream(1))
        pair = np.vstack([THETA_TRUE, 10.0 * THETA_TRUE])
        ests = pf_loglik_batch(
            pair, obs, X0, 100, stream.substream(2), max_events=5_000
        )
        if ests[0] > ests[1]:
            wins += 1
    assert wins >= 0.9 * reps


def test_pf_invalid_rates_give_minus_inf():
    traj = gillespie_simulate(THETA_TRUE, X0, 3.0, RngStream(32))
    obs = observe(traj, 1.0, 100.0, RngStream(33))
    diag = PfDiagnostics()
    ests = pf_loglik_batch(
        np.array([[0.5, -0.1, 0.3], [0.5, 0.0025, 0.3]]),
        obs,
        X0,
        20,
        RngStream(34),
        diagnostics=diag,
    )
    assert np.isneginf(ests[0])
    assert np.isfinite(ests[1])
    assert diag.failed_parameters >= 1


def test_pf_explosion_maps_to_minus_inf_with_counter():
    traj = gillespie_simulate(THETA_TRUE, X0, 3.0, RngStream(35))
    obs = observe(traj, 1.0, 100.0, RngStream(36))
    diag = PfDiagnostics()
    est = pf_loglik(
        [20.0, 1e-9, 1e-9], obs, X0, 10, RngStream(37),
        max_events=200, diagnostics=diag,
    )
    assert est == -math.inf
    assert diag.exploded_particles > 0


def test_pf_deterministic_given_stream():
    traj = gillespie_simulate(THETA_TRUE, X0, 4.0, RngStream(38))
    obs = observe(traj, 1.0, 100.0, RngStream(39))
    a = pf_loglik(THETA_TRUE, obs, X0, 50, RngStream(40))
    b = pf_loglik(THETA_TRUE, obs, X0, 50, RngStream(40))
    assert a == b


# ---------------------------------------------------------------------------
# priors


def test_prior_from_spec_plugin_values():
    p = prior_from_spec([0.5], [1.25])
    assert p.a[0] == pytest.approx(0.16)
    assert p.b[0] == pytest.approx(0.32)
    q = prior_from_spec([0.0025], [0.0065])
    assert q.a[0] == pytest.approx(0.14793, rel=1e-4)
    assert q.b[0] == pytest.approx(59.17, rel=1e-3)


def test_prior_from_spec_relative_spread():
    prior = prior_from_spec(THETA_TRUE, [1.25, 0.0065, 0.77])
    spread = (np.array([1.25, 0.0065, 0.77]) / THETA_TRUE) ** 2
    assert np.allclose(spread, [6.25, 6.76, 6.588], rtol=1e-3)
    # moment matching must reproduce exactly these means and variances
    assert np.allclose(prior.mean, THETA_TRUE, rtol=1e-12)
    assert np.allclose(prior.a / prior.b**2, np.array([1.25, 0.0065, 0.77]) ** 2)


def test_gamma_prior_log_density_support():
    prior = GammaPrior([2.0, 3.0, 1.0], [1.0, 1.0, 1.0])
    assert prior.log_density([1.0, 1.0, -0.5]) == -math.inf
    assert np.isfinite(prior.log_density([1.0, 1.0, 0.5]))


# ---------------------------------------------------------------------------
# full inference wiring


def test_skm_npmc_uninformative_data_recovers_prior():
    prior = prior_from_spec(THETA_TRUE, [1.25, 0.0065, 0.77])
    traj = gillespie_simulate(THETA_TRUE, X0, 10.0, RngStream(41))
    obs = observe(traj, 1.0, 1e6, RngStream(42))
    cfg = NpmcConfig(m=150, l=2, transform=WeightTransform.hard_clip(30), seed=0)
    result = skm_npmc_run(
        prior, obs, X0, cfg, j_particles=20, max_events=10_000, rng=RngStream(43)
    )
    prior_std = np.sqrt(prior.a) / prior.b
    final_mean = result.final_record.mean_estimate
    assert np.all(np.abs(final_mean - prior.mean) <= 3.0 * prior_std)


def test_skm_npmc_bitwise_deterministic():
    prior = prior_from_spec(THETA_TRUE, [1.25, 0.0065, 0.77])
    traj = gillespie_simulate(THETA_TRUE, X0, 5.0, RngStream(44))
    obs = observe(traj, 1.0, 100.0, RngStream(45))
    cfg = NpmcConfig(m=60, l=2, transform=WeightTransform.hard_clip(12), seed=0)
    r1 = skm_npmc_run(
        prior, obs, X0, cfg, j_particles=15, max_events=10_000, rng=RngStream(46)
    )
    r2 = skm_npmc_run(
        prior, obs, X0, cfg, j_particles=15, max_events=10_000, rng=RngStream(46)
    )
    for a, b in zip(r1.records, r2.records):
        assert a.ness_transformed == b.ness_transformed
        assert np.array_equal(a.mean_estimate, b.mean_estimate)
    assert np.array_equal(
        r1.final_particles.positions, r2.final_particles.positions
    )
