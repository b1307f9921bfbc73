import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clepcast.ensemble import (
    LossHistory,
    WeightConfig,
    clep_predict,
    clep_weights,
    forecast_loss,
    softmax_weights,
    weight_exponents,
)

# frozen oracle: A has zero loss, B loses 1 on each of 7 days, mu = 0.5, c = 1
GEOMETRIC = sum(0.5 ** (6 - i) for i in range(7))  # 1.984375
A_WEIGHT = 1.0 / (1.0 + math.exp(-0.5 * GEOMETRIC))  # 0.7295197779697509


def history(losses_by_member):
    return LossHistory.from_arrays({m: np.atleast_2d(v) for m, v in losses_by_member.items()})


def test_oracle_constants_frozen():
    assert GEOMETRIC == 1.984375
    assert abs(A_WEIGHT - 0.7295197779697509) < 1e-15


def test_derived_two_member_weights():
    h = history({"A": np.zeros(7), "B": np.ones(7)})
    w = clep_weights(h, 6, WeightConfig())
    assert abs(w[0, 0] - A_WEIGHT) < 1e-9
    assert abs(w[0, 1] - (1 - A_WEIGHT)) < 1e-9


def test_clep_forecast_example():
    out = clep_predict([np.array([[10.0]]), np.array([[20.0]])], np.array([[0.7296, 0.2704]]))
    assert abs(out[0, 0] - 12.704) < 1e-12


def test_identical_losses_give_equal_weights():
    h = history({"A": np.full(7, 0.3), "B": np.full(7, 0.3), "C": np.full(7, 0.3)})
    np.testing.assert_allclose(clep_weights(h, 6), 1 / 3, atol=1e-15)


@given(st.lists(st.floats(0, 50), min_size=7, max_size=7), st.lists(st.floats(0, 50), min_size=7, max_size=7))
def test_member_order_symmetry(a, b):
    w1 = clep_weights(history({"A": a, "B": b}), 6)
    w2 = clep_weights(history({"B": b, "A": a}), 6)
    np.testing.assert_allclose(w1[:, ::-1], w2, rtol=1e-12)


@given(st.lists(st.floats(0, 50), min_size=7, max_size=7), st.lists(st.floats(0, 5), min_size=7, max_size=7))
def test_dominance(a, extra):
    b = np.asarray(a) + np.asarray(extra)
    w = clep_weights(history({"A": a, "B": b}), 6)
    assert w[0, 0] >= w[0, 1] - 1e-15


@given(
    st.lists(st.floats(0, 20), min_size=7, max_size=7),
    st.lists(st.floats(0, 20), min_size=7, max_size=7),
    st.lists(st.floats(0, 20), min_size=7, max_size=7),
)
def test_common_shift_does_not_change_weights(a, b, shift):
    s = np.asarray(shift)
    w1 = clep_weights(history({"A": a, "B": b}), 6)
    w2 = clep_weights(history({"A": np.asarray(a) + s, "B": np.asarray(b) + s}), 6)
    np.testing.assert_allclose(w1, w2, atol=1e-9)


def test_tiny_mu_ranks_by_latest_loss():
    h = history({"A": [0, 0, 0, 0, 0, 0, 2.0], "B": [9, 9, 9, 9, 9, 9, 1.0]})
    w = clep_weights(h, 6, WeightConfig(mu=1e-6))
    assert w[0, 1] > w[0, 0]


def test_missing_days_count_as_zero_loss():
    h = history({"A": [np.nan, np.nan, 1, 1, 1, 1, 1], "B": [0, 0, 1, 1, 1, 1, 1]})
    w = clep_weights(h, 6)
    np.testing.assert_allclose(w, 0.5)


def test_early_history_uses_available_days():
    # as-of day 2 with a 7-day window: only days 0..2 exist
    h = history({"A": [0, 0, 0, 5, 5], "B": [1, 1, 1, 0, 0]})
    w = clep_weights(h, 2)
    expo = -0.5 * (0.25 + 0.5 + 1.0)
    assert abs(w[0, 1] - math.exp(expo) / (1 + math.exp(expo))) < 1e-12


def test_window_excludes_older_days():
    a = [100, 0, 0, 0, 0, 0, 0, 0]
    b = [0, 0, 0, 0, 0, 0, 0, 0]
    w = clep_weights(history({"A": a, "B": b}), 7)
    np.testing.assert_allclose(w, 0.5)


def test_softmax_is_stable_for_huge_exponents():
    w = softmax_weights(np.array([[-1e6, -1e6 - 1.0]]))
    assert np.isfinite(w).all()
    assert abs(w[0, 0] - 1 / (1 + math.exp(-1))) < 1e-12


def test_all_nonfinite_exponents_fall_back_to_uniform():
    w = softmax_weights(np.array([[np.nan, np.nan]]))
    np.testing.assert_array_equal(w, [[0.5, 0.5]])


def test_loss_transforms():
    assert forecast_loss(16, 9) == 1.0
    assert abs(forecast_loss(math.e - 1, 0, "log1p") - 1.0) < 1e-12
    with pytest.raises(ValueError):
        forecast_loss(1, 1, "abs")


def test_negative_losses_rejected():
    h = LossHistory(1, 3, ["A"])
    with pytest.raises(ValueError):
        h.record("A", 0, [-1.0])


@pytest.mark.parametrize("kw", [dict(mu=0), dict(mu=1), dict(c=0), dict(window=0), dict(transform="x")])
def test_weight_config_validation(kw):
    with pytest.raises(ValueError):
        WeightConfig(**kw)


@given(st.integers(0, 10_000))
def test_weights_are_a_distribution(seed):
    rng = np.random.default_rng(seed)
    losses = rng.exponential(5, size=(10, 4, 7))
    w = softmax_weights(weight_exponents(losses, WeightConfig()))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_clep_forecast_between_members(seed):
    rng = np.random.default_rng(seed)
    F = [rng.uniform(0, 1e4, size=(5, 3)) for _ in range(3)]
    w = rng.dirichlet(np.ones(3), size=5)
    out = clep_predict(F, w)
    stack = np.stack(F)
    assert np.all(out >= stack.min(axis=0) - 1e-9)
    assert np.all(out <= stack.max(axis=0) + 1e-9)


def test_missing_member_forecast_renormalises():
    out = clep_predict([np.array([[10.0]]), np.array([[np.nan]]), np.array([[40.0]])], np.array([[0.5, 0.3, 0.2]]))
    assert abs(out[0, 0] - (0.5 * 10 + 0.2 * 40) / 0.7) < 1e-12


def test_three_members_strict_winner():
    h = history({"A": [1, 2, 1, 2, 1, 2, 1], "B": [0.5, 1.5, 0.5, 1.5, 0.5, 1.5, 0.5], "C": [3] * 7})
    w = clep_weights(h, 6)[0]
    assert w[1] > w[0] and w[1] > w[2]


def test_clep_combination_examples():
    f1, f2 = np.array([[10.0]]), np.array([[20.0]])
    assert clep_predict([f1, f2], np.array([[1.0, 0.0]]))[0, 0] == 10.0
    assert clep_predict([f1, f2], np.array([[0.5, 0.5]]))[0, 0] == 15.0


@given(st.integers(0, 10_000))
def test_tiny_mu_ranking_follows_last_day(seed):
    rng = np.random.default_rng(seed)
    losses = rng.uniform(0, 10, size=(4, 7))
    losses[:, -1] = rng.permutation(4) + rng.uniform(0, 0.5, 4)
    h = LossHistory.from_arrays({f"m{j}": losses[j][None, :] for j in range(4)})
    w = clep_weights(h, 6, WeightConfig(mu=1e-6))[0]
    assert np.argsort(-w).tolist() == np.argsort(losses[:, -1]).tolist()
