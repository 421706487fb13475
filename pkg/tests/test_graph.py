import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbfgs_admm.graph import (
    GraphError, NetworkGraph, build_incidence, complete_graph, erdos_renyi_graph, graph_from_config,
    path_graph, ring_graph, spectral_quantities,
)


def test_ring_edges_and_degrees():
    g = ring_graph(5)
    assert g.edges == ((0, 1), (0, 4), (1, 2), (2, 3), (3, 4))
    assert g.degrees.tolist() == [2] * 5
    assert g.d_max == 2
    assert g.neighbors[0] == (1, 4)


def test_small_rings_degenerate_to_paths():
    assert ring_graph(2).edges == ((0, 1),)
    assert ring_graph(1).edges == ()


def test_complete_and_path_sizes():
    assert complete_graph(6).n == 15
    assert path_graph(4).edges == ((0, 1), (1, 2), (2, 3))


@pytest.mark.parametrize("edges, msg", [
    (((0, 0),), "self-loop"),
    (((0, 1), (0, 1)), "duplicate"),
    (((0, 3),), "outside"),
    (((1, 0),), "ordered"),
])
def test_invalid_edges_rejected(edges, msg):
    with pytest.raises(GraphError, match=msg):
        NetworkGraph(3, edges)


def test_from_edges_normalises():
    g = NetworkGraph.from_edges(3, [(2, 1), (1, 0)])
    assert g.edges == ((0, 1), (1, 2))


def test_disconnected_graph_names_component():
    g = NetworkGraph(4, ((0, 1), (2, 3)))
    assert not g.is_connected()
    with pytest.raises(GraphError, match=r"\[2, 3\]"):
        build_incidence(g, 0)


def test_incidence_orientation():
    inc = build_incidence(path_graph(3), 0)
    np.testing.assert_array_equal(inc.e_s, [[1, -1, 0], [0, 1, -1]])
    np.testing.assert_array_equal(inc.e_u, [[1, 1, 0], [0, 1, 1]])
    np.testing.assert_array_equal(inc.selector, [1, 0, 0])


def test_path3_spectral_values():
    # C'C = L_s + e_0 e_0' is tridiag(-1, 2, -1) with a 1 in the corner: eigenvalues 2 - 2cos((2k-1)pi/7)
    sp = spectral_quantities(build_incidence(path_graph(3), 0))
    assert sp.sigma_min_plus == pytest.approx(2 - 2 * math.cos(math.pi / 7), abs=1e-12)
    # signless Laplacian of a bipartite graph shares the Laplacian spectrum {0, 1, 3}
    assert sp.sigma_max_lu == pytest.approx(3.0, abs=1e-12)
    assert sp.sigma_min_lu == pytest.approx(0.0, abs=1e-12)


def test_odd_ring_signless_spectrum():
    sp = spectral_quantities(build_incidence(ring_graph(5), 2))
    assert sp.sigma_max_lu == pytest.approx(4.0, abs=1e-12)
    assert sp.sigma_min_lu == pytest.approx(2 + 2 * math.cos(4 * math.pi / 5), abs=1e-12)


def test_erdos_renyi_deterministic_and_connected():
    a = erdos_renyi_graph(8, 0.3, seed=4)
    b = erdos_renyi_graph(8, 0.3, seed=4)
    assert a == b and a.is_connected()


def test_erdos_renyi_gives_up():
    with pytest.raises(GraphError, match="no connected"):
        erdos_renyi_graph(6, 0.0, seed=0, max_tries=3)


def test_graph_from_config():
    assert graph_from_config({"kind": "ring", "m": 4}) == ring_graph(4)
    assert graph_from_config({"m": 3, "edges": [[1, 2], [0, 1]]}).edges == ((0, 1), (1, 2))
    with pytest.raises(GraphError, match="graph.kind"):
        graph_from_config({"kind": "star", "m": 4})


@st.composite
def connected_graphs(draw):
    m = draw(st.integers(2, 9))
    p = draw(st.floats(0.2, 1.0))
    seed = draw(st.integers(0, 10_000))
    return erdos_renyi_graph(m, p, seed)


@settings(max_examples=60, deadline=None)
@given(connected_graphs(), st.data())
def test_laplacian_identities(g, data):
    l = data.draw(st.integers(0, g.m - 1))
    inc = build_incidence(g, l)
    np.testing.assert_allclose(0.5 * (inc.l_s + inc.l_u), inc.degree, atol=1e-12)
    np.testing.assert_allclose(inc.l_s @ np.ones(g.m), 0.0, atol=1e-12)
    eig = np.linalg.eigvalsh(inc.l_s)
    assert eig[0] > -1e-10 and eig[1] > 1e-9  # connected: simple zero eigenvalue
    sp = spectral_quantities(inc)
    assert 0 < sp.sigma_min_plus <= sp.sigma_max_lu + 1
    assert 0 <= sp.sigma_min_lu <= sp.sigma_max_lu <= 2 * g.d_max + 1e-9
