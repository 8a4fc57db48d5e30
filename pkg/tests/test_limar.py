import logging

import numpy as np
import pytest

from dualmar.errors import BaselineDegenerateError, ConfigurationError
from dualmar.limar import degenerate_rows, limar_inpaint


def row(values):
    v = np.array([[np.nan if x is None else x for x in values]], dtype=float)
    t = np.isnan(v)
    return np.where(t, 99.0, v), t


def test_empty_trace_is_identity(rng):
    s = rng.standard_normal((5, 9))
    np.testing.assert_array_equal(limar_inpaint(s, np.zeros_like(s, bool)), s)


def test_midpoint_fill():
    s, t = row([1, None, 3])
    np.testing.assert_allclose(limar_inpaint(s, t), [[1, 2, 3]])


def test_exact_linear_run():
    s, t = row([0, None, None, None, 4])
    np.testing.assert_allclose(limar_inpaint(s, t), [[0, 1, 2, 3, 4]])


def test_boundary_runs_use_constant_extension():
    s, t = row([None, None, 5, 7, None])
    np.testing.assert_allclose(limar_inpaint(s, t), [[5, 5, 5, 7, 7]])


@pytest.mark.parametrize("seed", range(10))
def test_piecewise_linear_rows_recovered(seed):
    rng = np.random.default_rng(seed)
    n_angles, n = 6, 60
    sino = np.empty((n_angles, n))
    trace = np.zeros((n_angles, n), dtype=bool)
    for a in range(n_angles):
        knots = np.sort(rng.choice(np.arange(5, n - 5), 4, replace=False))
        knots = np.concatenate([[0], knots, [n - 1]])
        vals = rng.normal(size=len(knots))
        sino[a] = np.interp(np.arange(n), knots, vals)
        for lo, hi in zip(knots[:-1], knots[1:]):
            if hi - lo > 2:
                i = rng.integers(lo + 1, hi - 1)
                j = rng.integers(i, hi)
                trace[a, i:j] = True
    out = limar_inpaint(np.where(trace, 1e3, sino), trace)
    np.testing.assert_allclose(out, sino, atol=1e-12)


def test_properties_on_random_rows(rng):
    s = rng.standard_normal((20, 40))
    t = rng.random(s.shape) < 0.4
    t[:, 0] = False
    t[:, -1] = False
    out = limar_inpaint(s, t)
    np.testing.assert_array_equal(out[~t], s[~t])
    for a in range(20):
        known = np.flatnonzero(~t[a])
        for j in np.flatnonzero(t[a]):
            lo = known[known < j].max()
            hi = known[known > j].min()
            assert min(s[a, lo], s[a, hi]) - 1e-12 <= out[a, j] <= max(s[a, lo], s[a, hi]) + 1e-12
    perm = rng.permutation(20)
    np.testing.assert_array_equal(limar_inpaint(s[perm], t[perm]), out[perm])


def test_fully_masked_row_is_flagged(caplog):
    s = np.ones((3, 5))
    t = np.zeros((3, 5), dtype=bool)
    t[1] = True
    np.testing.assert_array_equal(degenerate_rows(t), [False, True, False])
    with caplog.at_level(logging.WARNING):
        out = limar_inpaint(s, t)
    assert not out[1].any() and np.all(out[[0, 2]] == 1)
    assert "fully masked" in caplog.text
    with pytest.raises(BaselineDegenerateError):
        limar_inpaint(s, t, strict=True)


def test_shape_mismatch():
    with pytest.raises(ConfigurationError):
        limar_inpaint(np.zeros((3, 4)), np.zeros((3, 5), bool))
