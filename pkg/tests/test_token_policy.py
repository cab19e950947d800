import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cachelab.errors import ShapeMismatch
from cachelab.tensorlab import make_rng, seeded_init
from cachelab.token_policy import n_active, select_tokens, token_diffs, token_mask


def test_diffs_identity():
    x = seeded_init((5, 4), 1)
    assert np.array_equal(token_diffs(x, x), np.zeros(5))


def test_diffs_unit_shift():
    ref = seeded_init((4, 6), 2)
    x = ref.copy()
    x[0] += 1.0
    d = token_diffs(x, ref)
    assert d[0] == pytest.approx(1.0, abs=1e-15)
    assert np.all(d[1:] == 0)


def test_diffs_seed31_oracle():
    x, ref = seeded_init((10, 7), 31), seeded_init((10, 7), 310)
    np.testing.assert_allclose(token_diffs(x, ref), oracles.token_diffs(x, ref), rtol=0, atol=1e-12)


def test_diffs_shape():
    with pytest.raises(ShapeMismatch):
        token_diffs(np.ones((3, 2)), np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        token_diffs(np.ones(3), np.ones(3))


def test_select_all():
    assert select_tokens([0.3, 0.1, 0.2], 1.0) == [0, 1, 2]


def test_select_tie_rule():
    assert select_tokens([0.1, 0.9, 0.5, 0.5], 0.5) == [1, 2]


def test_select_pure_tie():
    assert select_tokens([0.7] * 8, 0.25) == [0, 1]


def test_n_active_ceiling():
    assert n_active(8, 0.25) == 2
    assert n_active(8, 0.26) == 3
    assert n_active(10, 0.01) == 1
    assert n_active(64, 0.8) == 52
    assert n_active(5, 1.0) == 5


def test_select_validates():
    with pytest.raises(ValueError):
        select_tokens([0.1], 0.0)
    with pytest.raises(ValueError):
        select_tokens([0.1], 1.5)


def test_select_matches_oracle_200_with_duplicates():
    rng = make_rng(43)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        diffs = rng.integers(0, 5, n).astype(float) / 4.0  # plenty of duplicates
        rho = float(rng.uniform(0.01, 1.0))
        assert select_tokens(diffs, rho) == oracles.select_tokens(diffs.tolist(), rho)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0]), min_size=1, max_size=30), st.floats(0.01, 1.0))
def test_threshold_property(diffs, rho):
    sel = select_tokens(diffs, rho)
    rest = [i for i in range(len(diffs)) if i not in sel]
    if rest:
        lo_in = min(diffs[i] for i in sel)
        hi_out = max(diffs[i] for i in rest)
        assert lo_in >= hi_out
        # among tied values at the boundary, the lower indices were taken
        tied_out = [i for i in rest if diffs[i] == lo_in]
        tied_in = [i for i in sel if diffs[i] == lo_in]
        if tied_out and tied_in:
            assert max(tied_in) < min(tied_out)


def test_mask():
    m = token_mask(6, [1, 4])
    assert m.tolist() == [False, True, False, False, True, False]
