import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hipbone.errors import ConfigurationError
from hipbone.mesh import BoxSpec, RankGrid, build_box_mesh, classify_elements, factor_ranks


def brute_force_grid(P, box):
    best = None
    for px, py, pz in itertools.product(range(1, P + 1), repeat=3):
        if px * py * pz != P or px > box.nx or py > box.ny or pz > box.nz:
            continue
        area = (px - 1) * box.ny * box.nz + (py - 1) * box.nx * box.nz + (pz - 1) * box.nx * box.ny
        key = (area, not (px >= py >= pz), -px, -py, -pz)
        if best is None or key < best[0]:
            best = (key, (px, py, pz))
    return best and best[1]


def all_ranks(box, P):
    grid = factor_ranks(P, box)
    return [build_box_mesh(box, grid, r) for r in range(P)]


class TestFactorRanks:
    def test_single_rank(self):
        assert factor_ranks(1, BoxSpec(2, 2, 2, 1)).dims == (1, 1, 1)

    def test_cube(self):
        assert factor_ranks(8, BoxSpec(4, 4, 4, 1)).dims == (2, 2, 2)

    def test_only_admissible(self):
        assert factor_ranks(6, BoxSpec(6, 1, 1, 1)).dims == (6, 1, 1)

    @pytest.mark.parametrize("P", range(1, 13))
    @pytest.mark.parametrize("dims", [(4, 4, 4), (6, 2, 3), (8, 3, 1), (5, 5, 2)])
    def test_matches_brute_force(self, P, dims):
        box = BoxSpec(*dims, N=1)
        expected = brute_force_grid(P, box)
        if expected is None:
            with pytest.raises(ConfigurationError):
                factor_ranks(P, box)
        else:
            assert factor_ranks(P, box).dims == expected

    def test_prime_too_large(self):
        with pytest.raises(ConfigurationError, match="px <= nx"):
            factor_ranks(7, BoxSpec(2, 2, 2, 1))


class TestBuildBoxMesh:
    def test_single_element(self):
        box = BoxSpec(1, 1, 1, 1)
        m = build_box_mesh(box, RankGrid(1, 1, 1), 0)
        assert m.n_elements == 1
        assert m.n_local == 8
        assert box.N_G == 8
        assert len(np.unique(m.node_ids)) == 8
        assert len(m.halo) == 0

    def test_counts_degree_seven(self):
        box = BoxSpec(2, 2, 2, 7)
        m = build_box_mesh(box, RankGrid(1, 1, 1), 0)
        assert box.E == 8
        assert m.n_local == 4096
        assert len(np.unique(m.node_ids)) == 3375 == box.N_G

    def test_two_ranks_one_face(self):
        box = BoxSpec(2, 1, 1, 1)
        meshes = all_ranks(box, 2)
        for m, other in zip(meshes, reversed(meshes)):
            assert m.n_elements == 1
            assert len(m.shared) == 4
            assert list(m.halo) == [0]
            assert m.neighbors == (other.rank,)
        assert set(meshes[0].shared) == set(meshes[1].shared) == {1, 4, 7, 10}

    def test_rank_out_of_range(self):
        with pytest.raises(ConfigurationError):
            build_box_mesh(BoxSpec(2, 1, 1, 1), RankGrid(2, 1, 1), 2)

    def test_shared_ids_match_across_faces(self):
        box = BoxSpec(2, 1, 1, 3)
        m = build_box_mesh(box, RankGrid(1, 1, 1), 0)
        # right face of element 0 is the left face of element 1
        assert np.array_equal(m.node_ids[0, :, :, -1], m.node_ids[1, :, :, 0])

    def test_remainder_layers_go_to_low_ranks(self):
        box = BoxSpec(5, 1, 1, 1)
        sizes = [m.n_elements for m in all_ranks(box, 2)]
        assert sizes == [3, 2]


class TestClassify:
    def test_single_rank_split(self):
        m = build_box_mesh(BoxSpec(3, 1, 1, 2), RankGrid(1, 1, 1), 0)
        a, b, halo = classify_elements(m)
        assert len(halo) == 0
        assert list(a) == [0, 1] and list(b) == [2]

    def test_two_single_elements(self):
        for m in all_ranks(BoxSpec(2, 1, 1, 1), 2):
            a, b, halo = classify_elements(m)
            assert list(halo) == [0] and len(a) == len(b) == 0

    def test_slab_partition(self):
        box = BoxSpec(4, 4, 4, 2)
        grid = RankGrid(2, 1, 1)
        for r in range(2):
            m = build_box_mesh(box, grid, r)
            a, b, halo = classify_elements(m)
            assert len(halo) == 16
            assert (len(a), len(b)) == (8, 8)


@st.composite
def partitioned_boxes(draw):
    dims = [draw(st.integers(1, 4)) for _ in range(3)]
    N = draw(st.integers(1, 3))
    grid = [draw(st.integers(1, d)) for d in dims]
    return BoxSpec(*dims, N=N), RankGrid(*grid)


@settings(max_examples=40, deadline=None)
@given(partitioned_boxes())
def test_partition_invariants(case):
    box, grid = case
    meshes = [build_box_mesh(box, grid, r) for r in range(grid.P)]
    owned = np.concatenate([m.elements for m in meshes])
    assert np.array_equal(np.sort(owned), np.arange(box.E))
    ids = np.unique(np.concatenate([m.node_ids.ravel() for m in meshes]))
    assert len(ids) == box.N_G
    for m in meshes:
        parts = np.concatenate([m.interior_a, m.interior_b, m.halo])
        assert np.array_equal(np.sort(parts), np.arange(m.n_elements))
        assert len(m.interior_a) == (len(m.interior_a) + len(m.interior_b) + 1) // 2
        halo_nodes = m.halo_nodes
        for e in m.halo:
            assert np.isin(m.node_ids[e], halo_nodes).any()
        for e in np.concatenate([m.interior_a, m.interior_b]):
            assert not np.isin(m.node_ids[e], halo_nodes).any()
        for q in m.neighbors:
            assert m.rank in meshes[q].neighbors
            assert set(np.unique(m.node_ids)) & set(np.unique(meshes[q].node_ids))
