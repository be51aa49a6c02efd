"""Tests for the cyclic sweep orderings."""

import numpy as np
import pytest

from src.matrix_core import PivotAction, SymmetricMatrix, generate_random_symmetric, num_pivots
from src.orderings import (
    GOLDEN_SIZES,
    NUM_OPTIONS,
    SweepOption,
    all_options,
    pivot_sequence,
    read_golden,
    run_sweep,
    write_golden,
)


def _pairs(seq):
    return [(a.p, a.q) for a in seq]


def test_eight_options_with_stable_ids():
    """Ids 0..7, back variants odd."""
    assert NUM_OPTIONS == 8
    assert [o.id for o in all_options()] == list(range(8))
    assert SweepOption.TopLeftBottomRight.id == 4
    assert SweepOption.VerticalBack.is_back
    assert SweepOption.VerticalBack.base is SweepOption.Vertical


def test_parse_accepts_id_name_and_label():
    assert SweepOption.parse("4") is SweepOption.TopLeftBottomRight
    assert SweepOption.parse("HorizontalBack") is SweepOption.HorizontalBack
    assert SweepOption.parse("6:TopRightBottomLeft") is SweepOption.TopRightBottomLeft
    assert SweepOption.TopLeftBottomRight.label == "4:TopLeftBottomRight"
    with pytest.raises(ValueError):
        SweepOption.parse("9")
    with pytest.raises(ValueError):
        SweepOption.parse("Diagonal")


def test_sequences_for_n4():
    """Hand-checked orders on a 4x4."""
    assert _pairs(pivot_sequence(SweepOption.Horizontal, 4)) == [
        (0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)
    ]
    assert _pairs(pivot_sequence(SweepOption.Vertical, 4)) == [
        (0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)
    ]
    assert _pairs(pivot_sequence(SweepOption.TopLeftBottomRight, 4)) == [
        (0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)
    ]
    assert _pairs(pivot_sequence(SweepOption.TopRightBottomLeft, 4)) == [
        (0, 3), (0, 2), (1, 3), (0, 1), (1, 2), (2, 3)
    ]


@pytest.mark.parametrize("opt", list(SweepOption))
@pytest.mark.parametrize("n", [2, 3, 6, 9])
def test_every_sequence_is_a_permutation(opt, n):
    """Each ordering visits every strict-upper pivot exactly once."""
    seq = pivot_sequence(opt, n)

    assert len(seq) == num_pivots(n)
    assert set(seq) == {PivotAction(p, q) for p in range(n) for q in range(p + 1, n)}


@pytest.mark.parametrize("opt", [o for o in SweepOption if o.is_back])
def test_back_is_reverse_of_base(opt):
    assert pivot_sequence(opt, 6) == tuple(reversed(pivot_sequence(opt.base, 6)))


@pytest.mark.parametrize("opt", list(SweepOption))
@pytest.mark.parametrize("n", GOLDEN_SIZES)
def test_sequences_match_golden_files(opt, n):
    """Frozen sequences guard against ordering regressions."""
    assert pivot_sequence(opt, n) == read_golden(opt, n)


def test_write_golden_round_trips(temp_data_dir):
    paths = write_golden(temp_data_dir, 4)

    assert len(paths) == 8
    for opt in SweepOption:
        assert read_golden(opt, 4, temp_data_dir) == pivot_sequence(opt, 4)


def test_sweep_on_5x5_rotates_all_ten_pivots():
    """A dense random 5x5 has no skippable pivot on the first sweep."""
    m = generate_random_symmetric(5, seed=7)
    result = run_sweep(m, SweepOption.Horizontal)

    assert result.rotations == 10
    assert result.matrix.off_norm < m.off_norm


def test_sweep_skips_near_zero_pivots():
    """Pivots at or below tol are not rotated."""
    m = SymmetricMatrix.from_array(np.diag([1.0, 2.0, 3.0]))
    result = run_sweep(m, SweepOption.Vertical)

    assert result.rotations == 0
    assert np.array_equal(result.matrix.entries, m.entries)
