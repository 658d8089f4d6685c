import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from satfed.errors import ConfigurationError, DegenerateInputError
from satfed.params import (
    SOFTMAX, ModelSpec, accuracy, axpy_combine, cosine_similarity, init_params, l2_distance,
    loss_and_grad, safe_cosine,
)

from conftest import make_batch


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(spec, seed):
    batch = make_batch(spec, 7, seed)
    theta = np.random.default_rng(100 + seed).normal(scale=0.5, size=spec.dim)
    _, g = loss_and_grad(theta, spec, batch)
    num = numeric_grad(lambda p: loss_and_grad(p, spec, batch)[0], theta)
    rel = np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12)
    assert rel < 1e-6


def test_uniform_softmax_loss_is_log_c():
    spec = ModelSpec(SOFTMAX, 3, 4)
    loss, _ = loss_and_grad(np.zeros(spec.dim), spec, make_batch(spec, 10, 0))
    assert loss == pytest.approx(np.log(4), abs=1e-12)


def test_dimension_mismatch_rejected(spec):
    batch = make_batch(spec, 3, 0)
    with pytest.raises(ConfigurationError):
        loss_and_grad(np.zeros(spec.dim + 1), spec, batch)
    bad = ModelSpec(spec.kind, spec.n_features + 1, spec.n_classes, spec.hidden_width)
    with pytest.raises(ConfigurationError):
        loss_and_grad(np.zeros(spec.dim), spec, make_batch(bad, 3, 0))


def test_label_out_of_range(spec):
    batch = make_batch(spec, 3, 0)
    batch.labels[0] = spec.n_classes
    with pytest.raises(ConfigurationError):
        loss_and_grad(np.zeros(spec.dim), spec, batch)


def test_init_is_deterministic(spec):
    assert np.array_equal(init_params(spec, 3), init_params(spec, 3))
    assert not np.array_equal(init_params(spec, 3), init_params(spec, 4))


def test_separable_data_is_learned():
    spec = ModelSpec(SOFTMAX, 2, 2)
    batch = make_batch(spec, 200, 1)
    batch.labels[:] = (batch.features[:, 0] > 0).astype(int)
    theta = np.zeros(spec.dim)
    for _ in range(300):
        theta -= 0.5 * loss_and_grad(theta, spec, batch)[1]
    assert accuracy(theta, spec, batch) > 0.97


vec = arrays(np.float64, 6, elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(vec, vec)
def test_cosine_bounded_and_symmetric(a, b):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    c = cosine_similarity(a, b)
    assert -1.0 <= c <= 1.0
    assert c == pytest.approx(cosine_similarity(b, a), abs=1e-12)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [2, 0]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 3]) == pytest.approx(0.0)
    assert cosine_similarity([1, 1], [-1, -1]) == pytest.approx(-1.0)
    with pytest.raises(DegenerateInputError):
        cosine_similarity([0, 0], [1, 0])
    assert safe_cosine([0, 0], [1, 0]) == (0.0, False)
    with pytest.raises(ConfigurationError):
        cosine_similarity([1, 0], [1, 0, 0])


def test_l2_and_axpy():
    assert l2_distance([0, 0], [3, 4]) == pytest.approx(5.0)
    out = axpy_combine([(2.0, [1, 1]), (-1.0, [0, 2])])
    assert np.array_equal(out, [2.0, 0.0])
    with pytest.raises(DegenerateInputError):
        axpy_combine([])
    with pytest.raises(ConfigurationError):
        axpy_combine([(1.0, [1, 2]), (1.0, [1, 2, 3])])
