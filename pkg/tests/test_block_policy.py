import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cachelab.block_policy import (
    BlockEffects,
    block_effect,
    delta_blk_for_ratio,
    effective_refresh_ratio,
    refresh_fraction,
    select_blocks,
)
from cachelab.cachecore import DeltaCache
from cachelab.errors import DenominatorUnderflow, NoRefreshSteps
from cachelab.tensorlab import make_rng, seeded_init

effect_lists = st.lists(st.floats(0.0, 2.0, allow_nan=False), min_size=1, max_size=12)


def test_effect_identity():
    x = seeded_init((4, 4), 1)
    assert block_effect(x, x) == 0.0


def test_effect_scaling():
    x = np.ones((3, 5))
    assert block_effect(x, 2 * x) == 1.0


def test_effect_seed23_oracle():
    i, o = seeded_init((9, 7), 23), seeded_init((9, 7), 230)
    assert block_effect(i, o) == pytest.approx(oracles.block_effect(i, o), abs=1e-12)


def test_effect_errors():
    with pytest.raises(DenominatorUnderflow):
        block_effect(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        block_effect(np.ones((2, 2)), np.ones((2, 3)))


def test_select_hand_scan():
    # 0-based: the second block is refreshed, the third is reused (C = 0.4)
    assert select_blocks([0.4, 0.4, 0.4], 0.5) == [1]


def test_select_threshold_dominates():
    e = [0.1, 0.3, 0.2]
    assert select_blocks(e, sum(e)) == []
    assert select_blocks(e, 10.0) == []


def test_select_vanishing_threshold():
    assert select_blocks([0.1, 0.3, 0.2, 1e-3], 1e-12) == [0, 1, 2, 3]


def test_select_rejects_nonpositive():
    with pytest.raises(ValueError):
        select_blocks([0.1], 0.0)


def test_select_matches_oracle_200():
    rng = make_rng(41)
    for _ in range(200):
        L = int(rng.integers(1, 13))
        e = rng.uniform(0, 1, L).tolist()
        d = float(rng.uniform(0.01, 2.0))
        assert select_blocks(e, d) == oracles.select_blocks(e, d)


@settings(max_examples=200, deadline=None)
@given(effect_lists, st.floats(1e-3, 3.0), st.floats(1e-3, 3.0))
def test_monotone_coverage(e, a, b):
    lo, hi = min(a, b), max(a, b)
    assert len(select_blocks(e, lo)) >= len(select_blocks(e, hi))


@settings(max_examples=200, deadline=None)
@given(effect_lists, st.floats(1e-3, 3.0))
def test_reset_property(e, d):
    chosen = select_blocks(e, d)
    bounds = [-1] + chosen + [len(e)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        run = 0.0
        for l in range(a + 1, b):
            run += e[l]
            assert run <= d


def test_effective_ratio():
    assert effective_refresh_ratio([[0, 1, 2, 3], [0, 1, 2, 3]], 4) == 1.0
    assert effective_refresh_ratio([[], []], 4) == 0.0
    # 1-based {1,3} and {2} in 0-based form
    assert effective_refresh_ratio([[0, 2], [1]], 4) == 3 / 8
    with pytest.raises(NoRefreshSteps):
        effective_refresh_ratio([], 4)


def test_delta_blk_for_ratio_hits_reachable_targets():
    rows = [[0.3, 0.1, 0.5, 0.2], [0.2, 0.2, 0.4, 0.3]]
    for target in (0.0, 0.25, 0.5, 1.0):
        d = delta_blk_for_ratio(rows, target)
        got = np.mean([refresh_fraction(r, d) for r in rows])
        assert got >= target - 1e-12
    assert np.mean([refresh_fraction(r, delta_blk_for_ratio(rows, 1.0)) for r in rows]) == 1.0
    assert np.mean([refresh_fraction(r, delta_blk_for_ratio(rows, 0.0)) for r in rows]) == 0.0


def test_delta_blk_for_ratio_validates():
    with pytest.raises(ValueError):
        delta_blk_for_ratio([], 0.5)
    with pytest.raises(ValueError):
        delta_blk_for_ratio([[0.1]], 1.5)


def test_block_effects_from_cache():
    c = DeltaCache(3)
    with pytest.raises(ValueError):
        BlockEffects.from_cache(c, 1)
    c.block_effects = [0.1, 0.2, 0.3]
    c.block_steps = [1, 3, 1]
    be = BlockEffects.from_cache(c, 4)
    assert be.effects == (0.1, 0.2, 0.3)
    assert be.staleness == (3, 1, 3)
