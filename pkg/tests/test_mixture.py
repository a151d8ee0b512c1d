import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from ray_mixtures import tape as tp
from ray_mixtures.errors import DomainError
from ray_mixtures.mixture import (
    color_mixture_log_pdf,
    depth_mixture_log_pdf,
    depth_scale,
    laplace_log_pdf,
    mixing_coefficients,
    regen_color_mixture_log_pdf,
    regenerate_weights,
)
from ray_mixtures.render import compute_blend_weights
from ray_mixtures.tape import Tape, backward


def test_laplace_at_its_location():
    assert laplace_log_pdf(np.array([0.3]), np.array([0.3]), np.array([0.5])) == 0.0


def test_laplace_one_scale_away():
    got = laplace_log_pdf(np.array([0.5]), np.array([0.0]), np.array([0.5]))
    assert np.isclose(got, -1.0)


def test_laplace_rejects_non_positive_scale():
    with pytest.raises(DomainError):
        laplace_log_pdf(np.zeros(3), np.zeros(3), np.array([0.1, 0.0, 0.1]))


@pytest.mark.parametrize(
    "w, expected",
    [
        ([1.0, 1.0], [0.5, 0.5]),
        ([0.3, 0.1], [0.75, 0.25]),
        ([0.0, 0.0], [0.5, 0.5]),
    ],
)
def test_mixing_coefficients(w, expected):
    np.testing.assert_allclose(mixing_coefficients(np.array(w)).pi, expected)


def test_mixing_coefficients_reject_negative_weights():
    with pytest.raises(DomainError):
        mixing_coefficients(np.array([0.5, -0.1]))


def test_duplicate_components_collapse(rng):
    mu = rng.uniform(size=3)
    beta = rng.uniform(0.05, 0.5, size=3)
    c = rng.uniform(size=3)
    single = laplace_log_pdf(c, mu, beta)
    mixed = color_mixture_log_pdf(np.array([0.3, 0.7]), np.stack([mu, mu]), np.stack([beta, beta]), c)
    assert np.isclose(mixed, single, rtol=1e-12)


def test_color_mixture_matches_brute_force(rng):
    m = 6
    pi = rng.dirichlet(np.ones(m), size=4)
    mu = rng.uniform(size=(4, m, 3))
    beta = rng.uniform(0.05, 0.5, size=(4, m, 3))
    c = rng.uniform(size=(4, 3))
    dens = np.prod(np.exp(-np.abs(c[:, None, :] - mu) / beta) / (2 * beta), axis=-1)
    expected = np.log(np.sum(pi * dens, axis=-1))
    np.testing.assert_allclose(color_mixture_log_pdf(pi, mu, beta, c), expected, rtol=1e-10)


SCALES = st.floats(1e-3, 1.0)


@given(
    beta=st.lists(SCALES, min_size=3, max_size=3),
    offset=st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
    w=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8),
)
def test_mixture_log_pdf_stays_finite_at_the_scale_floor(beta, offset, w):
    m = len(w)
    mu = np.full((m, 3), 0.5)
    got = color_mixture_log_pdf(mixing_coefficients(np.array(w)), mu, np.tile(beta, (m, 1)), 0.5 + np.array(offset))
    assert np.isfinite(got)


@given(beta=SCALES, near=st.floats(0.0, 1.0), gap=st.floats(1e-6, 1.0))
def test_single_component_nll_grows_with_distance(beta, near, gap):
    mu, b = np.zeros((1, 3)), np.full((1, 3), beta)
    close = -color_mixture_log_pdf(np.ones(1), mu, b, np.full(3, near))
    far = -color_mixture_log_pdf(np.ones(1), mu, b, np.full(3, near + gap))
    assert close < far


@given(
    st.lists(
        st.tuples(st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.02, 0.3)),
        min_size=1,
        max_size=6,
    )
)
def test_per_channel_mixture_density_integrates_to_one(components):
    w, mu, beta = (np.array(v) for v in zip(*components))
    x = np.linspace(-12.0, 13.0, 200_001)
    log_pdf = color_mixture_log_pdf(mixing_coefficients(w), mu[:, None], beta[:, None], x[:, None])
    assert abs(trapezoid(np.exp(log_pdf), x) - 1.0) <= 1e-3


def test_color_mixture_length_mismatch():
    with pytest.raises(DomainError):
        color_mixture_log_pdf(np.array([0.5, 0.5]), np.zeros((3, 3)), np.ones((3, 3)), np.zeros(3))


def test_depth_mixture_single_component():
    beta = np.array([[0.1, 0.2, 0.3]])
    at_mode = depth_mixture_log_pdf(np.array([1.0]), np.array([2.0]), beta, np.array(2.0))
    assert np.isclose(at_mode, -np.log(0.4))
    off = depth_mixture_log_pdf(np.array([1.0]), np.array([2.0]), beta, np.array(2.2))
    assert np.isclose(off, -np.log(0.4) - 1.0)


def test_depth_mixture_requires_positive_depth():
    with pytest.raises(DomainError):
        depth_mixture_log_pdf(np.array([1.0]), np.array([1.0]), np.ones((1, 3)), np.array(0.0))


@pytest.mark.parametrize("reduction, expected", [("mean", 0.2), ("min", 0.1), ("max", 0.3)])
def test_depth_scale_reductions(reduction, expected):
    assert np.isclose(depth_scale(np.array([0.1, 0.2, 0.3]), reduction), expected)


def test_unknown_depth_scale_reduction():
    with pytest.raises(DomainError):
        depth_scale(np.ones(3), "median")


def test_regenerated_weights_use_estimated_depth():
    regen = regenerate_weights(np.array([1.0, 1.0]), np.array([2.0, 1.0]), np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(regen.delta_hat, [2.0, 1.0])
    np.testing.assert_allclose(regen.trans_hat, [1.0, np.exp(-2.0)])
    w = [1.0 - np.exp(-2.0), np.exp(-2.0) * (1.0 - np.exp(-1.0))]
    np.testing.assert_allclose(regen.w_hat, w)
    np.testing.assert_allclose(regen.pi_hat, np.array(w) / np.sum(w))


def test_zero_depth_estimate_falls_back_to_uniform():
    regen = regenerate_weights(np.array([3.0, 3.0, 3.0]), np.zeros(3), np.array([0.0, 1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(regen.w_hat, 0.0)
    np.testing.assert_allclose(regen.pi_hat, 1.0 / 3.0)


def test_regeneration_with_true_depth_reproduces_blend_weights(rng):
    sigma = rng.uniform(0, 3, size=(4, 8))
    edges = np.sort(rng.uniform(2, 6, size=(4, 9)), axis=-1)
    norm = 1.7
    regen = regenerate_weights(sigma, np.full((4, 8), norm), edges)
    bw = compute_blend_weights(sigma, norm * np.diff(edges, axis=-1))
    np.testing.assert_allclose(regen.w_hat, bw.w, rtol=1e-12)


def test_regeneration_rejects_unsorted_edges():
    with pytest.raises(DomainError):
        regenerate_weights(np.ones(2), np.ones(2), np.array([0.0, 1.0, 1.0]))


def test_stop_depth_gradient():
    tape = Tape()
    sigma = tape.param("sigma", np.array([1.0, 2.0]))
    mu_d = tape.param("mu_d", np.array([1.5, 0.5]))
    regen = regenerate_weights(sigma, mu_d, np.array([0.0, 1.0, 2.0]), stop_depth_grad=True)
    grads = backward(tape, tp.reduce_sum(regen.w_hat))
    np.testing.assert_array_equal(grads["mu_d"], 0.0)
    assert np.any(grads["sigma"] != 0.0)


def test_regenerated_color_mixture_uses_regenerated_coefficients(rng):
    sigma = np.array([0.5, 4.0])
    regen = regenerate_weights(sigma, np.array([1.0, 1.0]), np.array([0.0, 1.0, 2.0]))
    mu = rng.uniform(size=(2, 3))
    beta = np.full((2, 3), 0.2)
    c = rng.uniform(size=3)
    assert np.isclose(
        regen_color_mixture_log_pdf(regen, mu, beta, c),
        color_mixture_log_pdf(regen.pi_hat, mu, beta, c),
    )
