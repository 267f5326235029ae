"""Clustered conflict graph of a delivery instance.

Every packet that receiver ``u`` still needs after local substitution is a
root vertex; every other member of its δ-ensemble is a virtual vertex of the
same cluster. Edges are never stored: two vertices are adjacent when they
share a cluster, or when they carry different packets and one of the two
packets is missing from the cache of the other vertex's receiver.
"""

from typing import NamedTuple

import networkx as nx

from corrcache.library import conditional_entropy, delta_ensemble
from corrcache.logger import logger


class Vertex(NamedTuple):
    """A vertex of the clustered conflict graph. Tuples sort in the
    canonical (receiver, packet, root packet) order.

    Attributes
    ----------
    mu : int
        The receiver requesting the root packet of the cluster.
    rho : corrcache.library.PacketId
        The packet carried by the vertex.
    root : corrcache.library.PacketId
        The root packet of the cluster; equals ``rho`` for a root vertex.
    """

    mu: int
    rho: tuple
    root: tuple

    @property
    def is_root(self):
        return self.rho == self.root

    @property
    def cluster(self):
        return (self.mu, self.root)

    def __str__(self):
        tag = "" if self.is_root else f"<{self.root}"
        return f"{self.rho}@u{self.mu}{tag}"


class ClusteredConflictGraph:
    """Immutable clustered conflict graph.

    Parameters
    ----------
    caches : corrcache.caching.CacheConfiguration
    clusters : dict
        Maps the cluster key ``(mu, root_packet)`` to the tuple of its
        vertices, root first.
    model : corrcache.library.CorrelationModel
    """

    def __init__(self, caches, clusters, model):
        self._caches = caches
        self._model = model
        self._clusters = {
            key: tuple(vs) for key, vs in sorted(clusters.items())
        }
        self._vertices = tuple(
            sorted(v for vs in self._clusters.values() for v in vs)
        )
        self._roots = tuple(
            vs[0] for vs in self._clusters.values()
        )
        self._labels = {
            v: frozenset(caches.holders(v.rho) | {v.mu})
            for v in self._vertices
        }

    @property
    def caches(self):
        return self._caches

    @property
    def model(self):
        return self._model

    @property
    def vertices(self):
        return self._vertices

    @property
    def roots(self):
        return self._roots

    @property
    def clusters(self):
        return self._clusters

    def cluster(self, key):
        return self._clusters[key]

    @property
    def n_virtual(self):
        return len(self._vertices) - len(self._roots)

    def receiver_label(self, v):
        """``{mu(v)} | eta(v)``: the receivers requesting or caching the
        packet of ``v``."""

        return self._labels[v]

    def adjacent(self, v1, v2):
        if v1 == v2:
            return False
        if v1.cluster == v2.cluster:
            return True
        if v1.rho == v2.rho:
            return False
        return (
            v1.rho not in self._caches[v2.mu]
            or v2.rho not in self._caches[v1.mu]
        )

    def refinement(self, v):
        """H(root packet | packet of ``v``), the cost of delivering ``v`` in
        place of its root."""

        return conditional_entropy(self._model, v.root, v.rho)

    def root_subgraph(self):
        """The conventional index-coding conflict graph: root vertices only,
        each in its own cluster."""

        clusters = {key: vs[:1] for key, vs in self._clusters.items()}
        return ClusteredConflictGraph(self._caches, clusters, self._model)

    def to_networkx(self):
        """Materializes the graph. Use on small instances only."""

        G = nx.Graph()
        for v in self._vertices:
            G.add_node(
                str(v),
                mu=v.mu,
                rho=str(v.rho),
                root=str(v.root),
                is_root=v.is_root,
            )
        vs = self._vertices
        for i, v1 in enumerate(vs):
            for v2 in vs[i + 1:]:
                if self.adjacent(v1, v2):
                    G.add_edge(str(v1), str(v2))
        return G

    def write_edgelist(self, path):
        """Writes the materialized edge list (one ``u v`` pair per line)."""

        nx.write_edgelist(self.to_networkx(), path, data=False)


def build(caches, demand, model):
    """Builds the clustered conflict graph of placement ``caches`` and
    packet-level demand ``demand``.

    Parameters
    ----------
    caches : corrcache.caching.CacheConfiguration
    demand : corrcache.demand.PacketDemand
        Derived from ``caches`` and ``model``.
    model : corrcache.library.CorrelationModel

    Returns
    -------
    ClusteredConflictGraph
    """

    cached = caches.all_cached
    requested = demand.all_requested()
    clusters = {}
    for u, Q in enumerate(demand.requests):
        for p in sorted(Q):
            ensemble = delta_ensemble(model, p, cached, requested)
            vertices = [Vertex(u, p, p)]
            vertices.extend(
                Vertex(u, q, p) for q in sorted(ensemble) if q != p
            )
            clusters[(u, p)] = tuple(vertices)

    H = ClusteredConflictGraph(caches, clusters, model)
    logger.debug(
        f"Conflict graph: {len(H.roots)} roots, {H.n_virtual} virtual "
        "vertices"
    )
    return H


def receiver_label(H, v):
    return H.receiver_label(v)
