"""Correlation-unaware reference schemes."""

from enum import Enum

import numpy as np

from corrcache.caching import CacheConfiguration, lfu_place
from corrcache.coloring import deliver
from corrcache.demand import sample_demand
from corrcache.library import CorrelationModel, LibraryConfig, PacketId
from corrcache.logger import logger
from corrcache.utils import as_generator, mean_and_stderr


class SchemeId(str, Enum):
    """Delivery schemes compared in a sweep."""

    LC_U = "LC_U"
    LC_NM = "LC_NM"
    RAP_CM = "RAP_CM"
    CA_RAP_CM = "CA_RAP_CM"

    def __str__(self):
        return self.value

    @property
    def coded(self):
        return self in (SchemeId.RAP_CM, SchemeId.CA_RAP_CM)


def _uncached(q, M):
    M = int(M)
    if not 0 <= M <= q.m:
        msg = f"Local caching needs an integer 0 <= M <= m={q.m}, got {M}"
        logger.critical(msg)
        raise ValueError(msg)
    return q.ranking()[M:]


def lc_u_expected_rate(q, n, M):
    """Local caching of the ``M`` most popular files with unicast delivery:
    every request for an uncached file costs one file."""

    return float(n * q.q[_uncached(q, M)].sum())


def lc_nm_expected_rate(q, n, M):
    """Local caching of the ``M`` most popular files with naive multicast:
    every distinct requested uncached file is sent once."""

    rest = q.q[_uncached(q, M)]
    return float(np.sum(1.0 - (1.0 - rest) ** n))


def simulate_local_caching(scheme, q, n, M, n_draws=1000, rng=None):
    """Monte Carlo estimate of an LC scheme's expected rate from LFU
    placement and sampled demands.

    Returns
    -------
    float, float
        Mean rate and its standard error.
    """

    scheme = SchemeId(scheme)
    if scheme.coded:
        msg = f"{scheme} is not a local-caching scheme"
        logger.critical(msg)
        raise ValueError(msg)
    rng = as_generator(rng)
    cached = lfu_place(q, M, 1, 1)[0]
    rates = []
    for _ in range(n_draws):
        f = sample_demand(q, n, rng)
        missing = [x for x in f if PacketId(x, 0) not in cached]
        rates.append(
            len(missing) if scheme == SchemeId.LC_U else len(set(missing))
        )
    return mean_and_stderr(rates)


def correlation_unaware_model(config):
    """The model RAP/CM works with: same library dimensions, no
    correlated pairs."""

    return CorrelationModel(LibraryConfig.identity(m=config.m, B=config.B), ())


def rap_cm_rate(caches, f, config, method="min"):
    """Rate of one realization delivered without exploiting
    correlation."""

    return deliver(caches, f, correlation_unaware_model(config), method).rate


def memory_sharing_placement(m, B, n):
    """Uncoded-prefetch reference placement for ``n = 2`` receivers with
    ``M = 1``: the first half of every file is never cached and receiver
    ``u`` caches quarter ``u`` of the second half."""

    if n != 2 or B % 4:
        msg = (
            "Reference placement needs n=2 and B divisible by 4, got "
            f"n={n}, B={B}"
        )
        logger.critical(msg)
        raise ValueError(msg)
    quarter = B // 4
    caches = [
        {
            PacketId(f, b)
            for f in range(m)
            for b in range(B // 2 + u * quarter, B // 2 + (u + 1) * quarter)
        }
        for u in range(n)
    ]
    return CacheConfiguration.pinned(caches, B=B, M=m / 4)


def uncoded_prefetch_reference(f, m=4, B=4):
    """Rate of the correlation-unaware reference on demand ``f`` (two
    receivers, ``M = 1`` for ``m = 4``)."""

    caches = memory_sharing_placement(m, B, len(f))
    return rap_cm_rate(caches, f, LibraryConfig.identity(m=m, B=B))


def rap_cm(scenario, **kwargs):
    """Simulated RAP/CM expected rate over the sweep of ``scenario``.

    Returns
    -------
    corrcache.harness.ResultRecord
    """

    from corrcache.harness import run

    return run(scenario.with_schemes([SchemeId.RAP_CM]), **kwargs)
