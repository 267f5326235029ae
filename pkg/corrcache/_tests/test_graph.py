import networkx as nx

from corrcache._tests.conftest import P
from corrcache.caching import CacheConfiguration
from corrcache.demand import packet_demand
from corrcache.graph import Vertex, build
from corrcache.library import LibraryConfig, build_synthetic_library


def _example1_graph(model, caches):
    Q = packet_demand((2, 0), caches, model)
    return build(caches, Q, model)


def test_example1_clusters(example1_model, example1_caches):
    """Each receiver keeps one root with one virtual vertex: the packet
    correlated with the root that the other receiver caches."""

    H = _example1_graph(example1_model, example1_caches)
    assert list(H.clusters) == [(0, P(3, 2)), (1, P(1, 1))]
    assert H.cluster((0, P(3, 2))) == (
        Vertex(0, P(3, 2), P(3, 2)),
        Vertex(0, P(4, 2), P(3, 2)),
    )
    assert H.cluster((1, P(1, 1))) == (
        Vertex(1, P(1, 1), P(1, 1)),
        Vertex(1, P(2, 1), P(1, 1)),
    )
    assert H.n_virtual == 2
    assert [v.is_root for v in H.roots] == [True, True]


def test_example1_labels_and_edges(example1_model, example1_caches):
    H = _example1_graph(example1_model, example1_caches)
    root0 = Vertex(0, P(3, 2), P(3, 2))
    virt0 = Vertex(0, P(4, 2), P(3, 2))
    root1 = Vertex(1, P(1, 1), P(1, 1))
    virt1 = Vertex(1, P(2, 1), P(1, 1))

    assert H.receiver_label(root0) == {0}
    assert H.receiver_label(virt0) == {0, 1}
    assert H.receiver_label(virt1) == {0, 1}

    # same cluster
    assert H.adjacent(root0, virt0)
    # each virtual packet sits in the other receiver's cache
    assert not H.adjacent(virt0, virt1)
    assert H.adjacent(root0, root1)
    assert H.adjacent(root0, virt1)
    assert not H.adjacent(root0, root0)

    assert H.refinement(root0) == 0.0
    assert H.refinement(virt0) == 0.125


def test_same_packet_never_conflicts():
    """Two receivers requesting the same packet are served by one
    transmission."""

    model = build_synthetic_library(LibraryConfig.identity(m=2, B=1))
    caches = CacheConfiguration.empty(n=2, B=1)
    Q = packet_demand((0, 0), caches, model)
    H = build(caches, Q, model)
    v0, v1 = H.vertices
    assert v0.rho == v1.rho
    assert not H.adjacent(v0, v1)


def test_root_subgraph_and_networkx(example1_model, example1_caches):
    H = _example1_graph(example1_model, example1_caches)
    R = H.root_subgraph()
    assert R.n_virtual == 0
    assert len(R.clusters) == 2

    G = H.to_networkx()
    assert G.number_of_nodes() == 4
    # every pair except the two virtual vertices
    assert G.number_of_edges() == 5
    assert not G.has_edge(
        str(Vertex(0, P(4, 2), P(3, 2))), str(Vertex(1, P(2, 1), P(1, 1)))
    )


def test_write_edgelist(tmp_path, example1_model, example1_caches):
    H = _example1_graph(example1_model, example1_caches)
    path = tmp_path / "graph.edgelist"
    H.write_edgelist(path)
    G = nx.read_edgelist(path)
    assert G.number_of_edges() == H.to_networkx().number_of_edges()
