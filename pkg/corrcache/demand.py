"""Demand distributions, demand sampling and packet-level demand."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from corrcache.library import PacketId, conditional_entropy
from corrcache.logger import logger
from corrcache.utils import as_generator


@dataclass(frozen=True, eq=False)
class DemandDistribution:
    """Per-file request probabilities ``q``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        if q.size == 0 or np.any(q < 0.0) or abs(q.sum() - 1.0) > 1e-12:
            msg = (
                "A demand distribution needs nonnegative entries summing "
                f"to 1, got sum {q.sum() if q.size else 0.0}"
            )
            logger.critical(msg)
            raise ValueError(msg)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def m(self):
        return self.q.size

    @classmethod
    def uniform(cls, m):
        return cls(np.full(m, 1.0 / m))

    def ranking(self):
        """File indices by decreasing popularity, ties by lowest index."""

        return np.lexsort((np.arange(self.m), -self.q))


class DemandRealization(tuple):
    """The requested file ``f[u]`` of every receiver ``u``."""

    @property
    def n(self):
        return len(self)


class Substitution(NamedTuple):
    """A requested packet served from a correlated packet of the
    requester's own cache, at the cost of a refinement (file-units)."""

    wanted: PacketId
    substitute: PacketId
    refinement: float


@dataclass(frozen=True)
class PacketDemand:
    """Packet-level demand.

    ``requests[u]`` is the set Q_u of packets requested by ``u`` that are
    neither cached at ``u`` nor locally substituted; ``substitutions[u]``
    is the local-substitution ledger of ``u``.
    """

    demand: DemandRealization
    requests: tuple
    substitutions: tuple

    @property
    def n(self):
        return len(self.requests)

    def all_requested(self):
        return frozenset().union(*self.requests)

    def local_refinement(self, u):
        return sum(s.refinement for s in self.substitutions[u])


def zipf(m, alpha):
    """Zipf popularity ``q_f = f^-alpha / sum_j j^-alpha`` over ranks
    ``f = 1..m``."""

    if m < 1:
        msg = f"m must be >= 1, got {m}"
        logger.critical(msg)
        raise ValueError(msg)
    w = np.arange(1, m + 1, dtype=float) ** (-float(alpha))
    return DemandDistribution(w / w.sum())


def sample_demand(q, n, rng=None):
    """Draws ``n`` i.i.d. requests from ``q``.

    Parameters
    ----------
    q : DemandDistribution
    n : int
    rng : None, int or numpy.random.Generator

    Returns
    -------
    DemandRealization
    """

    rng = as_generator(rng)
    draws = rng.choice(q.m, size=n, p=q.q)
    return DemandRealization(int(f) for f in draws)


def _best_substitute(model, p, cache):
    best = None
    for s in model.partners(p):
        if s not in cache:
            continue
        h = conditional_entropy(model, p, s)
        if best is None or (h, s) < (best[0], best[1]):
            best = (h, s)
    return best


def packet_demand(f, caches, model):
    """Derives the packet-level demand of realization ``f``.

    Every packet of the requested file is either cached at the requester,
    locally substituted by a δ-correlated packet of the requester's cache
    (smallest conditional entropy, ties by lowest packet identity), or left
    in Q_u for the delivery phase.

    Parameters
    ----------
    f : DemandRealization
    caches : corrcache.caching.CacheConfiguration
    model : corrcache.library.CorrelationModel

    Returns
    -------
    PacketDemand
    """

    requests, substitutions = [], []
    for u, file in enumerate(f):
        cache = caches[u]
        Q, ledger = set(), []
        for p in model.file_packets(file):
            if p in cache:
                continue
            best = _best_substitute(model, p, cache)
            if best is None:
                Q.add(p)
            else:
                ledger.append(Substitution(p, best[1], best[0]))
        requests.append(frozenset(Q))
        substitutions.append(tuple(ledger))

    return PacketDemand(
        demand=DemandRealization(f),
        requests=tuple(requests),
        substitutions=tuple(substitutions),
    )
