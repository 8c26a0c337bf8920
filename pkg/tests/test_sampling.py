import math

import numpy as np
import pytest

from npmc.sampling import (
    GaussianProposal,
    ParticleSet,
    RngStream,
    fit_gaussian_proposal,
    log_mvn_density,
    multinomial_resample,
    sample_proposal,
)


def test_rng_stream_reproducible_and_distinct():
    a = RngStream(123, 5).generator().standard_normal(8)
    b = RngStream(123, 5).generator().standard_normal(8)
    c = RngStream(123, 6).generator().standard_normal(8)
    d = RngStream(124, 5).generator().standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_rng_substreams_do_not_collide_across_depths():
    root = RngStream(0)
    seen = set()
    frontier = [root]
    for _ in range(3):
        nxt = []
        for s in frontier:
            for k in range(4):
                child = s.substream(k)
                assert child.stream_id not in seen
                seen.add(child.stream_id)
                nxt.append(child)
        frontier = nxt
    assert len(seen) == 4 + 16 + 64


def test_rng_stream_rejects_negative_ids():
    with pytest.raises(ValueError):
        RngStream(1, -1)
    with pytest.raises(ValueError):
        RngStream(1).substream(-2)


def test_particle_set_validation():
    with pytest.raises(ValueError):
        ParticleSet(np.array([[1.0, np.inf]]))
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((3, 2)), np.array([0.5, 0.5, 0.5]))


# ---------------------------------------------------------------------------
# multinomial resampling


def test_resample_one_hot_copies_single_position():
    pos = np.array([[0.0], [1.0], [2.0]])
    w = np.array([0.0, 1.0, 0.0])
    out = multinomial_resample(ParticleSet(pos, w), RngStream(1))
    assert np.array_equal(out.positions, np.ones((3, 1)))
    assert not out.is_weighted


def test_resample_uniform_counts_within_four_sigma():
    m = 100_000
    pos = np.arange(4.0)[:, None]
    base = ParticleSet(np.repeat(pos, 1, axis=1), np.full(4, 0.25))
    # resample m draws by tiling the 4-point set into an m-point set
    gen = RngStream(42).generator()
    idx = gen.choice(4, size=m, p=np.full(4, 0.25))
    counts = np.bincount(idx, minlength=4)
    sigma = math.sqrt(m * 0.25 * 0.75)
    assert np.abs(counts - m / 4).max() <= 4 * sigma
    del base


def test_resample_three_to_one_frequency():
    m = 100_000
    gen = RngStream(7).generator()
    idx = gen.choice(2, size=m, p=np.array([0.75, 0.25]))
    freq = np.mean(idx == 0)
    assert freq == pytest.approx(0.75, abs=0.006)


def test_resample_requires_weights():
    with pytest.raises(ValueError):
        multinomial_resample(ParticleSet(np.zeros((3, 1))), RngStream(0))


def test_resample_output_positions_subset_of_input():
    gen_pos = np.arange(10.0)[:, None]
    w = np.full(10, 0.1)
    out = multinomial_resample(ParticleSet(gen_pos, w), RngStream(3))
    assert set(out.positions.ravel()).issubset(set(gen_pos.ravel()))


def test_resample_unbiased_for_test_function():
    # mean of f over resampled set is an unbiased estimate of sum w_i f(x_i)
    pos = np.array([[0.0], [1.0], [2.0], [3.0]])
    w = np.array([0.1, 0.2, 0.3, 0.4])
    target = float(w @ pos.ravel() ** 2)
    reps = 1000
    ps = ParticleSet(pos, w)
    means = np.empty(reps)
    for r in range(reps):
        out = multinomial_resample(ps, RngStream(99).substream(r))
        means[r] = np.mean(out.positions.ravel() ** 2)
    per_draw_var = float(w @ (pos.ravel() ** 2 - target) ** 2) / pos.shape[0]
    se = math.sqrt(per_draw_var / reps)
    assert abs(means.mean() - target) <= 4 * se


# ---------------------------------------------------------------------------
# Gaussian proposal


def test_fit_identical_positions_gives_jittered_identity():
    v = np.array([2.0, -1.0])
    ps = ParticleSet(np.tile(v, (50, 1)))
    prop = fit_gaussian_proposal(ps)
    assert np.allclose(prop.mean, v)
    assert np.allclose(prop.covariance, 1e-9 * np.eye(2))
    assert np.allclose(prop.cholesky_factor, math.sqrt(1e-9) * np.eye(2))


def test_fit_hand_computed_moments():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    prop = fit_gaussian_proposal(ParticleSet(pts))
    assert np.allclose(prop.mean, [1.0, 1.0])
    assert np.allclose(prop.covariance, np.eye(2))


def test_fit_uses_population_not_sample_covariance():
    pts = np.array([[0.0], [1.0]])
    prop = fit_gaussian_proposal(ParticleSet(pts))
    assert prop.covariance[0, 0] == pytest.approx(0.25)


def test_fit_rejects_weighted_set():
    with pytest.raises(ValueError):
        fit_gaussian_proposal(ParticleSet(np.zeros((3, 1)), np.full(3, 1 / 3)))


def test_fit_large_sample_recovers_standard_normal():
    gen = RngStream(11).generator()
    pts = gen.standard_normal((100_000, 2))
    prop = fit_gaussian_proposal(ParticleSet(pts))
    assert np.abs(prop.mean).max() < 0.02
    assert np.abs(prop.covariance - np.eye(2)).max() < 0.03


def test_sample_from_degenerate_covariance_stays_near_mean():
    prop = fit_gaussian_proposal(ParticleSet(np.tile([4.0, 5.0], (20, 1))))
    out = sample_proposal(prop, 100, RngStream(5))
    assert np.abs(out.positions - [4.0, 5.0]).max() < 10 * math.sqrt(1e-9)


def test_sample_moments_match_clt():
    prop = GaussianProposal(np.zeros(2), np.eye(2))
    out = sample_proposal(prop, 100_000, RngStream(8))
    refit = fit_gaussian_proposal(out)
    assert np.abs(refit.mean).max() < 0.02
    assert np.abs(refit.covariance - np.eye(2)).max() < 0.03


def test_sample_deterministic_given_stream():
    prop = GaussianProposal(np.zeros(2), np.array([[2.0, 0.3], [0.3, 1.0]]))
    a = sample_proposal(prop, 16, RngStream(77, 3)).positions
    b = sample_proposal(prop, 16, RngStream(77, 3)).positions
    assert np.array_equal(a, b)


def test_proposal_rejects_asymmetric_covariance():
    with pytest.raises(ValueError):
        GaussianProposal(np.zeros(2), np.array([[1.0, 0.5], [0.1, 1.0]]))


# ---------------------------------------------------------------------------
# MVN log-density


def test_log_density_standard_normal_at_zero():
    prop = GaussianProposal(np.zeros(1), np.eye(1))
    assert log_mvn_density(prop, np.zeros(1)) == pytest.approx(
        -0.5 * math.log(2 * math.pi)
    )


def test_log_density_symmetric_about_mean():
    prop = GaussianProposal(np.array([1.0, -2.0]), np.array([[2.0, 0.4], [0.4, 1.0]]))
    d = np.array([0.3, -0.7])
    assert log_mvn_density(prop, prop.mean + d) == pytest.approx(
        log_mvn_density(prop, prop.mean - d)
    )


def test_log_density_2d_at_mean():
    prop = GaussianProposal(np.array([3.0, 4.0]), np.eye(2))
    assert log_mvn_density(prop, prop.mean) == pytest.approx(-math.log(2 * math.pi))


def test_log_density_integrates_to_one_on_grid():
    prop = GaussianProposal(np.array([0.5, -0.25]), np.array([[1.5, 0.6], [0.6, 0.8]]))
    xs = np.linspace(-8, 9, 401)
    ys = np.linspace(-9, 8, 401)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    dens = np.exp(log_mvn_density(prop, pts)).reshape(gx.shape)
    total = np.trapezoid(np.trapezoid(dens, ys, axis=1), xs)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_log_density_batch_matches_single():
    prop = GaussianProposal(np.array([1.0, 2.0]), np.array([[2.0, -0.3], [-0.3, 0.5]]))
    pts = RngStream(2).generator().standard_normal((5, 2))
    batch = log_mvn_density(prop, pts)
    singles = [log_mvn_density(prop, p) for p in pts]
    assert np.allclose(batch, singles)


def test_log_density_dimension_mismatch():
    prop = GaussianProposal(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        log_mvn_density(prop, np.zeros(3))
