"""File library, packet-level correlation structure and the entropy oracle.

Entropies are measured in file-units: a file has entropy 1 and each of its
``B`` packets has entropy ``1 / B``. Two packets are δ-correlated when their
joint entropy does not exceed ``(1 + delta) / B``, i.e. the threshold is
applied per packet. Files, packets and receivers are indexed from 0.
"""

from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from corrcache.logger import logger
from corrcache.utils import as_generator


_TOL = 1e-12


class LibraryError(Exception):
    ...


class PacketId(NamedTuple):
    """Identity ``(f, b)`` of packet ``b`` of file ``f``. Tuples sort in
    the canonical (file, packet) order."""

    file: int
    packet: int

    def __str__(self):
        return f"({self.file},{self.packet})"


@dataclass(frozen=True, eq=False)
class LibraryConfig:
    """Library dimensions, correlation threshold and match matrix.

    ``G[f_prime, f]`` is the expected number of packets of file ``f_prime``
    that are δ-correlated with a packet of file ``f``. The diagonal is 1 by
    convention.
    """

    m: int
    B: int
    delta: float
    G: np.ndarray

    def __post_init__(self):
        if self.m < 1 or self.B < 1:
            msg = f"Need m >= 1 and B >= 1, got m={self.m}, B={self.B}"
            logger.critical(msg)
            raise LibraryError(msg)
        if not 0.0 <= self.delta <= 1.0:
            msg = f"delta must lie in [0, 1], got {self.delta}"
            logger.critical(msg)
            raise LibraryError(msg)

        G = np.array(self.G, dtype=float)
        if G.shape != (self.m, self.m):
            msg = f"G must be {self.m}x{self.m}, got shape {G.shape}"
            logger.critical(msg)
            raise LibraryError(msg)
        if not np.all(np.isfinite(G)) or np.any(G < 0.0):
            msg = "G must contain finite nonnegative entries"
            logger.critical(msg)
            raise LibraryError(msg)
        if not np.allclose(np.diag(G), 1.0):
            msg = "G must have a unit diagonal"
            logger.critical(msg)
            raise LibraryError(msg)
        off = G[~np.eye(self.m, dtype=bool)]
        if np.any(off > self.B):
            msg = f"Off-diagonal entries of G must lie in [0, B={self.B}]"
            logger.critical(msg)
            raise LibraryError(msg)

        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @property
    def packet_entropy(self):
        return 1.0 / self.B

    @classmethod
    def identity(cls, *, m, B, delta=0.0):
        """A library without any cross-file correlation."""

        return cls(m=m, B=B, delta=delta, G=np.eye(m))

    @classmethod
    def uniform(cls, *, m, B, delta, value):
        """Every off-diagonal entry of G equals ``value``."""

        G = np.full((m, m), float(value))
        np.fill_diagonal(G, 1.0)
        return cls(m=m, B=B, delta=delta, G=G)

    @classmethod
    def with_partners_per_packet(cls, *, m, B, delta, partners):
        """Uniform off-diagonal G such that a packet has ``partners``
        δ-correlated packets in the rest of the library on average."""

        value = partners / (m - 1) if m > 1 else 0.0
        return cls.uniform(m=m, B=B, delta=delta, value=value)

    def with_delta(self, delta):
        return LibraryConfig(m=self.m, B=self.B, delta=delta, G=self.G)

    def to_dict(self):
        return {
            "m": self.m,
            "B": self.B,
            "delta": self.delta,
            "G": self.G.tolist(),
        }


class EntropyOracle(ABC):
    """Pairwise joint entropies (file-units) of δ-correlated packets."""

    @abstractmethod
    def joint(self, a, b):
        ...


class HomogeneousEntropy(EntropyOracle):
    """Every δ-correlated pair has joint entropy exactly
    ``(1 + delta) / B``, so every refinement costs ``delta / B``."""

    def __init__(self, *, delta, B):
        self._value = (1.0 + delta) / B

    def joint(self, a, b):
        return self._value


class TabulatedEntropy(EntropyOracle):
    """Joint entropies read from an explicit ``{(a, b): value}`` table, the
    key order being irrelevant."""

    def __init__(self, table):
        self._table = {_pair_key(a, b): v for (a, b), v in table.items()}

    def joint(self, a, b):
        return self._table[_pair_key(a, b)]


def _pair_key(a, b):
    return (a, b) if a <= b else (b, a)


class MatchMatrix(NamedTuple):
    """Match matrix recovered from a pair relation. ``minimum`` is the
    guaranteed per-packet partner count, ``average`` its mean over the
    packets of the column file."""

    minimum: np.ndarray
    average: np.ndarray


class CorrelationModel:
    """Immutable packet-level δ-correlation relation with its entropy
    oracle.

    Parameters
    ----------
    config : LibraryConfig
    pairs : iterable of tuple of PacketId
        Unordered δ-correlated pairs of distinct packets of distinct files.
    entropy : EntropyOracle, optional
        Defaults to :class:`HomogeneousEntropy` at ``config.delta``.

    Raises
    ------
    LibraryError
        If a pair is out of range, is a self pair, breaks the cross-file
        disjointness requirement, or has a joint entropy outside
        ``[1 / B, (1 + delta) / B]``.
    """

    def __init__(self, config, pairs, entropy=None):
        self._config = config
        if entropy is None:
            entropy = HomogeneousEntropy(delta=config.delta, B=config.B)
        self._entropy = entropy

        partners = defaultdict(set)
        keys = set()
        for a, b in pairs:
            a, b = PacketId(*a), PacketId(*b)
            self._check_packet(a)
            self._check_packet(b)
            if a.file == b.file:
                msg = f"Pair {a}~{b} lies inside a single file"
                logger.critical(msg)
                raise LibraryError(msg)
            keys.add(_pair_key(a, b))
            partners[a].add(b)
            partners[b].add(a)

        # each packet of f' is paired with at most one packet of f
        for p, ps in partners.items():
            files = [q.file for q in ps]
            if len(files) != len(set(files)):
                msg = f"Packet {p} has two partners in the same file"
                logger.critical(msg)
                raise LibraryError(msg)

        B = config.B
        lo, hi = 1.0 / B, (1.0 + config.delta) / B
        for a, b in keys:
            h = entropy.joint(a, b)
            if h < lo - _TOL or h > hi + _TOL:
                msg = (
                    f"Joint entropy {h} of {a}~{b} outside [{lo}, {hi}]"
                )
                logger.critical(msg)
                raise LibraryError(msg)

        self._partners = {p: tuple(sorted(ps)) for p, ps in partners.items()}
        self._pairs = tuple(sorted(keys))
        logger.debug(
            f"CorrelationModel m={config.m} B={B} delta={config.delta} "
            f"with {len(self._pairs)} pairs"
        )

    def _check_packet(self, p):
        m, B = self._config.m, self._config.B
        if not (0 <= p.file < m and 0 <= p.packet < B):
            msg = f"Packet {p} out of range for m={m}, B={B}"
            logger.critical(msg)
            raise LibraryError(msg)

    @property
    def config(self):
        return self._config

    @property
    def entropy(self):
        return self._entropy

    @property
    def pairs(self):
        """Sorted tuple of the stored unordered pairs ``(a, b)``, a < b."""

        return self._pairs

    def partners(self, p):
        """The packets δ-correlated with ``p`` (``p`` itself excluded)."""

        return self._partners.get(p, ())

    def is_correlated(self, a, b):
        return a != b and b in self._partners.get(a, ())

    def joint_entropy(self, a, b):
        if a == b:
            return self._config.packet_entropy
        if not self.is_correlated(a, b):
            return 2.0 * self._config.packet_entropy
        return self._entropy.joint(a, b)

    def file_packets(self, f):
        return [PacketId(f, b) for b in range(self._config.B)]

    def to_text(self):
        """Deterministic text form: a header line then one line per pair
        ``f b f' b' joint``."""

        c = self._config
        lines = [f"# m={c.m} B={c.B} delta={c.delta!r}"]
        for a, b in self._pairs:
            h = self._entropy.joint(a, b)
            lines.append(f"{a.file} {a.packet} {b.file} {b.packet} {h!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, config):
        pairs, table = [], {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            f1, b1, f2, b2, h = line.split()
            a = PacketId(int(f1), int(b1))
            b = PacketId(int(f2), int(b2))
            pairs.append((a, b))
            table[(a, b)] = float(h)
        return cls(config, pairs, entropy=TabulatedEntropy(table))


def pair_counts(config):
    """Number of cross pairs between every two files, ``round(G * B)``
    (halves rounded up), validated against the generator's limits."""

    counts = np.floor(np.asarray(config.G) * config.B + 0.5).astype(int)
    np.fill_diagonal(counts, 0)
    if np.any(counts > config.B):
        bad = np.argwhere(counts > config.B)[0]
        msg = (
            f"G[{bad[0]}][{bad[1]}]={config.G[bad[0], bad[1]]} needs "
            f"{counts[bad[0], bad[1]]} partner packets but B={config.B}"
        )
        logger.critical(msg)
        raise LibraryError(msg)
    if not np.array_equal(counts, counts.T):
        bad = np.argwhere(counts != counts.T)[0]
        msg = (
            f"Pair counts of files {bad[0]} and {bad[1]} disagree: "
            f"{counts[bad[0], bad[1]]} vs {counts[bad[1], bad[0]]}"
        )
        logger.critical(msg)
        raise LibraryError(msg)
    return counts


def build_synthetic_library(config, seed=0):
    """Generates a correlation model realizing the match matrix of
    ``config``.

    Files ``f`` and ``f'`` share ``round(G[f'][f] * B)`` δ-correlated
    pairs. Each file keeps a round-robin cursor over its packet indices so
    that partners are spread as evenly as possible over its packets and no
    packet is used twice towards the same file. The seed fixes the order in
    which file pairs are visited. Joint entropies follow
    :class:`HomogeneousEntropy`.

    Parameters
    ----------
    config : LibraryConfig
    seed : int, optional

    Returns
    -------
    CorrelationModel

    Raises
    ------
    LibraryError
        If some entry of G requires more than B partner packets.
    """

    counts = pair_counts(config)
    m, B = config.m, config.B
    rng = as_generator(seed)

    file_pairs = np.argwhere(np.triu(counts, k=1) > 0)
    order = rng.permutation(len(file_pairs))

    cursor = np.zeros(m, dtype=int)
    pairs = []
    for idx in order:
        f, g = (int(x) for x in file_pairs[idx])
        k = int(counts[g, f])
        for i in range(k):
            pairs.append(
                (
                    PacketId(f, int((cursor[f] + i) % B)),
                    PacketId(g, int((cursor[g] + i) % B)),
                )
            )
        cursor[f] = (cursor[f] + k) % B
        cursor[g] = (cursor[g] + k) % B

    return CorrelationModel(config, pairs)


def delta_ensemble(model, p, cached, requested):
    """The δ-ensemble of requested packet ``p``: ``p`` together with every
    cached or requested packet δ-correlated with it.

    Parameters
    ----------
    model : CorrelationModel
    p : PacketId
    cached, requested : set of PacketId

    Returns
    -------
    frozenset of PacketId
    """

    members = {p}
    for q in model.partners(p):
        if q in cached or q in requested:
            members.add(q)
    return frozenset(members)


def conditional_entropy(model, target, given):
    """H(target | given) in file-units: 0 for identical packets, the joint
    minus one packet entropy for a stored pair and a full packet entropy
    for independent packets."""

    if target == given:
        return 0.0
    h = model.config.packet_entropy
    if model.is_correlated(target, given):
        return model.joint_entropy(target, given) - h
    return h


def recover_match_matrix(model):
    """Recomputes G from the pair relation.

    Returns
    -------
    MatchMatrix
        ``minimum[f', f]`` is the smallest, over the packets of ``f``,
        number of partners in ``f'``; ``average`` is the mean. Both have a
        unit diagonal.
    """

    c = model.config
    counts = np.zeros((c.m, c.m, c.B), dtype=int)
    for a, b in model.pairs:
        counts[b.file, a.file, a.packet] += 1
        counts[a.file, b.file, b.packet] += 1

    minimum = counts.min(axis=2).astype(float)
    average = counts.mean(axis=2)
    np.fill_diagonal(minimum, 1.0)
    np.fill_diagonal(average, 1.0)
    return MatchMatrix(minimum=minimum, average=average)
