"""Caching distributions, random fractional placement and LFU placement."""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from corrcache.library import PacketId
from corrcache.logger import logger
from corrcache.utils import as_generator


_SUM_TOL = 1e-9


class CachingError(Exception):
    ...


@dataclass(frozen=True, eq=False)
class CachingDistribution:
    """Fractions ``p`` governing random fractional placement for a cache of
    ``M`` file-units. Feasible when ``0 <= p_f <= 1/M`` and
    ``sum(p) == 1``."""

    p: np.ndarray
    M: float

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def m(self):
        return self.p.size

    @property
    def cap(self):
        return np.inf if self.M == 0 else 1.0 / self.M

    @classmethod
    def uniform(cls, m, M):
        return cls(np.full(m, 1.0 / m), M)

    @classmethod
    def truncated_uniform(cls, order, m_tilde, m, M):
        """Uniform over the first ``m_tilde`` files of ``order``."""

        p = np.zeros(m)
        p[np.asarray(order)[:m_tilde]] = 1.0 / m_tilde
        return cls(p, M)

    def caching_probability(self):
        """Per-packet caching probability ``p_f * M`` at one receiver."""

        return np.clip(self.p * self.M, 0.0, 1.0)

    def digest(self, decimals=6):
        return ",".join(f"{x:.{decimals}f}" for x in self.p)


class Validation(NamedTuple):
    ok: bool
    violations: tuple


def validate(dist):
    """Checks the placement constraints of ``dist``.

    Returns
    -------
    Validation
        ``ok`` is False when any constraint fails; ``violations`` names
        each failing constraint.
    """

    violations = []
    p = dist.p
    if dist.M < 0:
        violations.append(f"cache size M={dist.M} is negative")
    neg = np.flatnonzero(p < 0.0)
    if neg.size:
        violations.append(f"negative p_f for files {neg.tolist()}")
    over = np.flatnonzero(p > dist.cap + _SUM_TOL)
    if over.size:
        f = int(over[0])
        violations.append(
            f"cap violation p_{f}={p[f]:g} > 1/M={dist.cap:g}"
            + (f" (and {over.size - 1} more)" if over.size > 1 else "")
        )
    if abs(p.sum() - 1.0) > _SUM_TOL:
        violations.append(f"sum(p)={p.sum():.12g} != 1")
    return Validation(ok=not violations, violations=tuple(violations))


@dataclass(frozen=True, eq=False)
class CacheConfiguration:
    """The set ``caches[u]`` of packets cached at every receiver ``u``."""

    caches: tuple
    B: int

    def __post_init__(self):
        caches = tuple(
            frozenset(PacketId(*p) for p in c) for c in self.caches
        )
        object.__setattr__(self, "caches", caches)

    def __getitem__(self, u):
        return self.caches[u]

    def __len__(self):
        return len(self.caches)

    def __iter__(self):
        return iter(self.caches)

    def __eq__(self, other):
        if not isinstance(other, CacheConfiguration):
            return NotImplemented
        return self.B == other.B and self.caches == other.caches

    def __hash__(self):
        return hash((self.B, self.caches))

    @property
    def n(self):
        return len(self.caches)

    @cached_property
    def _holders(self):
        holders = {}
        for u, cache in enumerate(self.caches):
            for p in cache:
                holders.setdefault(p, set()).add(u)
        return {p: frozenset(us) for p, us in holders.items()}

    def holders(self, p):
        """The receivers caching ``p`` (η in the receiver label)."""

        return self._holders.get(p, frozenset())

    @cached_property
    def all_cached(self):
        return frozenset(self._holders)

    def load(self, u):
        """Cache occupancy of receiver ``u`` in file-units."""

        return len(self.caches[u]) / self.B

    def check_capacity(self, M, slack=0.0):
        """Raises :class:`CachingError` if a receiver stores more than
        ``M + slack`` file-units."""

        for u in range(self.n):
            if self.load(u) > M + slack + 1e-12:
                msg = (
                    f"Receiver {u} caches {self.load(u):g} file-units, "
                    f"more than M={M:g}"
                )
                logger.critical(msg)
                raise CachingError(msg)

    @classmethod
    def pinned(cls, caches, *, B, M=None):
        """Builds an explicit placement, checked against capacity ``M``
        when given."""

        config = cls(caches=tuple(caches), B=B)
        if M is not None:
            config.check_capacity(M)
        return config

    @classmethod
    def empty(cls, *, n, B):
        return cls(caches=tuple(frozenset() for _ in range(n)), B=B)

    def to_text(self):
        lines = [f"# n={self.n} B={self.B}"]
        for u, cache in enumerate(self.caches):
            packets = " ".join(f"{p.file},{p.packet}" for p in sorted(cache))
            lines.append(f"{u}: {packets}".rstrip())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        B, caches = None, []
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("#"):
                for token in line[1:].split():
                    key, value = token.split("=")
                    if key == "B":
                        B = int(value)
                continue
            if not line:
                continue
            _, packets = line.split(":", 1)
            caches.append(
                frozenset(
                    PacketId(*(int(x) for x in token.split(",")))
                    for token in packets.split()
                )
            )
        if B is None:
            msg = "Cache configuration text lacks the 'B=' header"
            logger.critical(msg)
            raise CachingError(msg)
        return cls(caches=tuple(caches), B=B)


def _systematic_round(x, u):
    """Dependent rounding of the vector ``x`` driven by one uniform ``u``:
    every entry becomes ``floor(x_f)`` or ``ceil(x_f)``, ``E[k_f] = x_f``
    and the total is ``floor`` or ``ceil`` of ``sum(x)``."""

    edges = np.floor(np.concatenate([[0.0], np.cumsum(x)]) + u)
    k = np.diff(edges).astype(int)
    return np.clip(k, 0, None)


def rap_place(dist, B, n, rng=None):
    """Random popularity-based fractional placement.

    Each receiver independently caches ``k_f`` uniformly random distinct
    packets of every file ``f``, ``k_f`` being a randomized rounding of
    ``p_f * M * B``. Receivers draw from independent child streams of
    ``rng``.

    Parameters
    ----------
    dist : CachingDistribution
    B : int
        Packets per file.
    n : int
        Number of receivers.
    rng : None, int or numpy.random.Generator

    Returns
    -------
    CacheConfiguration
    """

    rng = as_generator(rng)
    x = np.clip(dist.p * dist.M * B, 0.0, B)
    caches = []
    for child in rng.spawn(n):
        k = np.minimum(_systematic_round(x, child.random()), B)
        cache = set()
        for f in np.flatnonzero(k):
            packets = child.choice(B, size=int(k[f]), replace=False)
            cache.update(PacketId(int(f), int(b)) for b in packets)
        caches.append(frozenset(cache))
    return CacheConfiguration(caches=tuple(caches), B=B)


def lfu_place(q, M, B, n):
    """Every receiver caches all packets of the ``M`` most popular files
    (ties by lowest index)."""

    M = int(M)
    if not 0 <= M <= q.m:
        msg = f"LFU needs an integer 0 <= M <= m={q.m}, got {M}"
        logger.critical(msg)
        raise ValueError(msg)
    top = q.ranking()[:M]
    cache = frozenset(
        PacketId(int(f), b) for f in top for b in range(B)
    )
    return CacheConfiguration(caches=tuple(cache for _ in range(n)), B=B)
