import math

import numpy as np
import pytest

from dflsim.errors import InvalidTopologyError
from dflsim.topology import (
    MixingMatrix,
    build_complete,
    build_identity,
    build_quasi_ring,
    build_ring,
    build_ring_groups,
    consensus_matrix,
    from_adjacency,
    load_adjacency,
    power_gap_norm,
    spectral,
    validate,
)


def ring_adjacency(n):
    a = np.zeros((n, n), dtype=int)
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    return a


class TestConstructors:
    def test_ring10_weights(self):
        c = build_ring(10).entries
        assert c[0, 0] == pytest.approx(1 / 3)
        assert c[0, 1] == pytest.approx(1 / 3)
        assert c[0, 9] == pytest.approx(1 / 3)
        assert c[0, 2] == 0.0

    def test_ring3_is_complete(self):
        assert np.allclose(build_ring(3).entries, consensus_matrix(3))
        assert spectral(build_ring(3)).zeta == pytest.approx(0.0, abs=1e-12)

    def test_ring_too_small(self):
        with pytest.raises(InvalidTopologyError):
            build_ring(2)

    def test_complete_entries(self):
        c = build_complete(5).entries
        assert np.all(c == pytest.approx(0.2))
        assert spectral(build_complete(5)).zeta == pytest.approx(0.0, abs=1e-12)

    def test_complete_single_node(self):
        m = build_complete(1)
        assert m.entries.shape == (1, 1)
        assert m.entries[0, 0] == 1.0
        assert spectral(m).zeta == 0.0

    def test_complete_zero_nodes(self):
        with pytest.raises(InvalidTopologyError):
            build_complete(0)

    def test_identity_spectrum(self):
        s = spectral(build_identity(4))
        assert s.zeta == 1.0
        assert s.beta == pytest.approx(0.0, abs=1e-12)
        assert s.rho == pytest.approx(0.0, abs=1e-12)

    def test_quasi_ring_valid(self):
        m = build_quasi_ring(10)
        validate(m)
        # chord endpoints have three neighbours at weight 1/4
        assert m.entries[0, 5] == pytest.approx(0.25)
        assert m.entries[0, 0] == pytest.approx(0.25)
        assert m.entries[1, 1] == pytest.approx(0.5)
        assert 0.0 < spectral(m).zeta < 1.0

    def test_ring_groups_matches_small_ring(self):
        # the grouped construction inherits the small ring's zeta
        z_groups = spectral(build_ring_groups(5, 2)).zeta
        z_ring5 = spectral(build_ring(5)).zeta
        assert z_groups == pytest.approx(z_ring5, abs=1e-12)
        assert build_ring_groups(5, 2).n == 10


class TestFromAdjacency:
    def test_uniform_degree_ring_matches_builder(self):
        m = from_adjacency(ring_adjacency(10), "uniform_degree")
        assert np.allclose(m.entries, build_ring(10).entries, atol=1e-15)

    def test_empty_graph_is_identity(self):
        m = from_adjacency(np.zeros((4, 4)))
        assert np.allclose(m.entries, np.eye(4))

    def test_metropolis_path3_hand_values(self):
        adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        expect = np.array([[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])
        assert np.allclose(from_adjacency(adj, "metropolis").entries, expect)

    def test_rejects_asymmetric(self):
        adj = np.zeros((3, 3))
        adj[0, 1] = 1
        with pytest.raises(InvalidTopologyError):
            from_adjacency(adj)

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(InvalidTopologyError):
            from_adjacency(np.eye(3))

    def test_disconnected_graph_allowed(self):
        adj = np.zeros((4, 4), dtype=int)
        adj[0, 1] = adj[1, 0] = 1  # nodes 2, 3 isolated
        m = from_adjacency(adj)
        validate(m)
        assert spectral(m).zeta == pytest.approx(1.0)

    def test_load_adjacency_file(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("0 1\n1 2\n# comment\n2 0\n")
        adj = load_adjacency(path)
        assert adj.shape == (3, 3)
        assert adj[0, 1] == adj[1, 2] == adj[2, 0] == 1


class TestSpectral:
    def test_ring10_zeta_closed_form(self):
        z = spectral(build_ring(10)).zeta
        assert z == pytest.approx((1 + 2 * math.cos(math.pi / 5)) / 3, abs=1e-12)
        assert 0.872 <= z <= 0.874

    def test_ring10_beta_from_negative_eigenvalue(self):
        # lambda_min = (1 + 2 cos pi) / 3 = -1/3, so beta = 4/3
        assert spectral(build_ring(10)).beta == pytest.approx(4 / 3, abs=1e-12)

    def test_ring5_zeta_closed_form(self):
        z = spectral(build_ring(5)).zeta
        assert z == pytest.approx((1 + 2 * math.cos(2 * math.pi / 5)) / 3, abs=1e-12)

    def test_complete_spectrum(self):
        s = spectral(build_complete(10))
        assert s.zeta == pytest.approx(0.0, abs=1e-12)
        assert s.beta == pytest.approx(1.0, abs=1e-12)
        assert s.rho == pytest.approx(1.0, abs=1e-12)

    def test_complete8(self):
        s = spectral(build_complete(8))
        assert s.zeta == pytest.approx(0.0, abs=1e-12)
        assert s.beta == pytest.approx(1.0, abs=1e-12)

    def test_rho_is_one_minus_zeta(self):
        for m in (build_ring(7), build_quasi_ring(8), build_complete(4)):
            s = spectral(m)
            assert s.rho == 1.0 - s.zeta

    def test_beta_equals_max_abs_one_minus_eigenvalue(self):
        for m in (build_ring(9), build_quasi_ring(12), build_ring_groups(4, 3)):
            s = spectral(m)
            assert s.beta == pytest.approx(np.max(np.abs(1.0 - s.eigenvalues)), abs=1e-14)


class TestPowerGapNorm:
    def test_j1_equals_zeta(self):
        m = build_ring(10)
        assert power_gap_norm(m, 1) == pytest.approx(spectral(m).zeta, abs=1e-12)

    def test_j3_equals_zeta_cubed(self):
        m = build_ring(10)
        assert power_gap_norm(m, 3) == pytest.approx(spectral(m).zeta ** 3, abs=1e-10)

    def test_j0_is_one(self):
        for m in (build_ring(4), build_complete(6)):
            assert power_gap_norm(m, 0) == pytest.approx(1.0, abs=1e-12)

    def test_lemma7_identity_all_constructors(self):
        mats = [build_ring(4), build_ring(6), build_ring(10), build_quasi_ring(10),
                build_complete(8), build_ring_groups(5, 2)]
        for m in mats:
            z = spectral(m).zeta
            for j in range(11):
                assert abs(power_gap_norm(m, j) - z**j) <= 1e-10


class TestInvariants:
    def test_validate_passes_constructors(self):
        for m in (build_ring(5), build_complete(7), build_identity(3),
                  build_quasi_ring(8), build_ring_groups(3, 2)):
            validate(m)

    def test_perturbation_fails_validation(self):
        c = build_ring(6).entries.copy()
        c[0, 1] += 1e-6
        with pytest.raises(InvalidTopologyError):
            validate(MixingMatrix(entries=c))

    def test_consensus_in_one_step_with_j(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 8))
        out = x @ build_complete(8).entries
        assert np.max(np.abs(out - out.mean(axis=1, keepdims=True))) <= 1e-12

    def test_ring_zeta_increases_with_n(self):
        zetas = [spectral(build_ring(n)).zeta for n in range(4, 21)]
        assert all(a < b for a, b in zip(zetas, zetas[1:]))

    def test_neighbors_and_edges(self):
        m = build_ring(5)
        assert m.neighbors(0) == [1, 4]
        assert len(m.directed_edges()) == 10
