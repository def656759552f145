import numpy as np
import pytest

from nlrspirit.patches import (
    PatchGrouping,
    aggregate_Q,
    block_match,
    extract_groups,
    place_groups_adjoint,
    reference_lattice,
)

from conftest import crandn, inner
from test_kernels import brute_force_match


def test_reference_lattice_touches_border():
    np.testing.assert_array_equal(reference_lattice(64, 6, 5), list(range(0, 56, 5)) + [58])
    np.testing.assert_array_equal(reference_lattice(16, 6, 5), [0, 5, 10])


def test_block_match_shapes_and_reference_first(rng):
    x = crandn(rng, 2, 30, 28)
    g = block_match(x, patch_side=5, stride=4, window=12, m=10)
    assert g.members.shape == (2, g.n_groups, 10, 2)
    assert g.n == 25 and g.m == 10 and g.n_coils == 2
    np.testing.assert_array_equal(g.members[:, :, 0], np.broadcast_to(g.refs, (2, g.n_groups, 2)))


def test_block_match_per_coil_brute_force(rng):
    x = crandn(rng, 2, 20, 20)
    g = block_match(x, patch_side=4, stride=6, window=10, m=7)
    for c in range(2):
        for i, (r, col) in enumerate(g.refs):
            assert [tuple(p) for p in g.members[c, i]] == brute_force_match(x[c], r, col, 4, 10, 7)


def test_block_match_thread_invariance(rng):
    x = crandn(rng, 3, 40, 40)
    a = block_match(x, 6, 5, 20, 15, threads=1)
    b = block_match(x, 6, 5, 20, 15, threads=4)
    assert a.same_as(b)


def test_block_match_validation(rng):
    x = crandn(rng, 1, 16, 16)
    with pytest.raises(ValueError, match="candidate"):
        block_match(x, 6, 5, 6, 43)
    with pytest.raises(ValueError):
        block_match(x, 20, 5, 40, 4)
    with pytest.raises(ValueError):
        block_match(x, 4, 0, 8, 4)


def test_grouping_validation():
    refs = np.array([[0, 0]])
    with pytest.raises(ValueError, match="beyond"):
        PatchGrouping(4, (8, 8), refs, np.array([[[[0, 0], [5, 0]]]]))
    with pytest.raises(ValueError, match="first member"):
        PatchGrouping(4, (8, 8), refs, np.array([[[[1, 0], [0, 0]]]]))


def test_extract_place_adjoint_identity(rng):
    x = crandn(rng, 4, 32, 32)
    g = block_match(x, 6, 5, 16, 12)
    for _ in range(20):
        u = crandn(rng, 4, 32, 32)
        V = crandn(rng, 4, g.n_groups, g.n, g.m)
        lhs = inner(extract_groups(u, g), V)
        rhs = inner(u, place_groups_adjoint(V, g)[0])
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_aggregate_fixed_point(rng):
    x = crandn(rng, 4, 64, 64)
    g = block_match(x)
    np.testing.assert_allclose(aggregate_Q(extract_groups(x, g), g), x, rtol=0, atol=1e-12)


def test_counts_cover_image(rng):
    g = block_match(crandn(rng, 2, 64, 64))
    assert g.counts.shape == (2, 64, 64)
    assert g.counts.min() >= 1
    assert g.counts.sum() == 2 * g.n_groups * g.n * g.m


def test_shape_mismatch(rng):
    g = block_match(crandn(rng, 2, 24, 24), 4, 4, 12, 8)
    with pytest.raises(ValueError):
        extract_groups(crandn(rng, 3, 24, 24), g)
    with pytest.raises(ValueError):
        place_groups_adjoint(np.zeros((2, g.n_groups, g.n, g.m + 1)), g)
