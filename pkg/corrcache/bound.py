"""Upper bound on the expected delivery rate of correlation-aware random
placement with clustered coded multicast, and its minimization over the
caching distribution and the correlation threshold.

All tables are indexed ``[ell - 1, f]`` for ``ell = 1 .. n``.
"""

from dataclasses import dataclass, field, replace
from math import ceil

import numpy as np
from scipy.optimize import brentq
from scipy.special import comb

from corrcache.caching import CachingDistribution, validate
from corrcache.demand import DemandDistribution
from corrcache.logger import logger, _log_warnings
from corrcache.utils import Timer, stream


EXACT_LIMIT = 10**6
_TIE_RTOL = 1e-12
ESTIMATORS = ("auto", "exact", "mc", "closed")


@dataclass(frozen=True)
class BoundInputs:
    """Everything the bound depends on.

    Attributes
    ----------
    n : int
        Number of receivers.
    M : float
        Cache capacity in file-units.
    q : numpy.ndarray
        Demand distribution.
    p : numpy.ndarray or None
        Caching distribution; ``None`` until optimized.
    delta : float
    G : numpy.ndarray
        Match matrix with unit diagonal.
    n_samples : int
        Monte Carlo draws per ρ table row.
    seed : int
        Seed of the Monte Carlo ρ estimates.
    estimator : str
        ``"auto"`` (exact enumeration when ``m ** ell <= 1e6``, Monte
        Carlo otherwise), ``"exact"``, ``"mc"`` or ``"closed"`` (tie-group
        order statistics).
    """

    n: int
    M: float
    q: np.ndarray
    p: np.ndarray = None
    delta: float = 0.0
    G: np.ndarray = None
    n_samples: int = 100_000
    seed: int = 0
    estimator: str = "auto"

    def __post_init__(self):
        q = self.q
        if isinstance(q, DemandDistribution):
            q = q.q
        q = np.asarray(q, dtype=float)
        object.__setattr__(self, "q", q)

        G = np.eye(q.size) if self.G is None else np.asarray(self.G, float)
        if G.shape != (q.size, q.size) or not np.allclose(np.diag(G), 1.0):
            msg = f"G must be {q.size}x{q.size} with a unit diagonal"
            logger.critical(msg)
            raise ValueError(msg)
        object.__setattr__(self, "G", G)

        if self.n < 1:
            msg = f"n must be >= 1, got {self.n}"
            logger.critical(msg)
            raise ValueError(msg)
        if self.estimator not in ESTIMATORS:
            msg = f"Unknown estimator {self.estimator!r}, use {ESTIMATORS}"
            logger.critical(msg)
            raise ValueError(msg)

        if self.p is not None:
            p = self.p
            if isinstance(p, CachingDistribution):
                p = p.p
            p = np.asarray(p, dtype=float)
            check = validate(CachingDistribution(p, self.M))
            if not check.ok:
                msg = f"Infeasible caching distribution: {check.violations}"
                logger.critical(msg)
                raise ValueError(msg)
            object.__setattr__(self, "p", p)

    @property
    def m(self):
        return self.q.size

    def with_p(self, p):
        return replace(self, p=p)

    def with_delta(self, delta, G=None):
        return replace(self, delta=delta, G=self.G if G is None else G)


@dataclass(frozen=True)
class RhoEstimate:
    rho: np.ndarray
    stderr: np.ndarray
    method: str


@dataclass(frozen=True)
class BoundReport:
    """Evaluated bound with its ingredients."""

    psi: float
    delta_R: float
    m_bar: float
    bound: float
    lam: np.ndarray = field(repr=False)
    lam_star: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    rho_stderr: np.ndarray = field(repr=False)
    rho_star: np.ndarray = field(repr=False)
    rho_star_stderr: np.ndarray = field(repr=False)
    methods: tuple = ()

    def to_dict(self, tables=False):
        d = {
            "psi": float(self.psi),
            "delta_R": float(self.delta_R),
            "m_bar": float(self.m_bar),
            "bound": float(self.bound),
            "methods": list(self.methods),
        }
        if tables:
            for key in (
                "lam",
                "lam_star",
                "rho",
                "rho_stderr",
                "rho_star",
                "rho_star_stderr",
            ):
                d[key] = getattr(self, key).tolist()
        return d


def _occupancy(inputs, p=None):
    p = inputs.p if p is None else p
    if p is None:
        msg = "A caching distribution is required to evaluate the bound"
        logger.critical(msg)
        raise ValueError(msg)
    return np.clip(np.asarray(p) * inputs.M, 0.0, 1.0)


def _expected_power(base, e):
    """``E[base ** K]`` for an integer count ``K`` taking the two values
    around its mean ``e``: ``base ** floor(e) * (1 - frac(e) * (1 - base))``.

    Integer exponents give ``base ** e`` back, with ``0 ** 0 == 1``.
    """

    e = np.asarray(e, dtype=float)
    k = np.floor(e + 1e-12)
    frac = np.clip(e - k, 0.0, 1.0)
    return np.power(base, k) * (1.0 - frac * (1.0 - base))


def _expected_prod(base, E):
    """``prod_f' E[base[..., f'] ** K[f', f]]`` for every column ``f``.

    ``E`` holds the mean partner counts; each fractional entry is read as
    a per-packet count that is either its floor or its ceiling.
    """

    base = np.asarray(base, dtype=float)[..., :, None]
    return np.prod(_expected_power(base, E), axis=-2)


def _off_diagonal(G):
    E = np.array(G, dtype=float)
    np.fill_diagonal(E, 0.0)
    return E


def lambda_tables(inputs, p=None):
    """Both λ tables, shape ``(n, m)``.

    Returns
    -------
    numpy.ndarray, numpy.ndarray
        ``lam`` and ``lam_star``.
    """

    x = _occupancy(inputs, p)
    n, G = inputs.n, inputs.G
    ell = np.arange(1, n + 1)[:, None]
    off = _off_diagonal(G)

    # a: packet missed by the other n - ell + 1 receivers
    a = np.power((1.0 - x)[None, :], n - ell + 1)
    # x ** 0 == 1 also for x == 0
    c = 1.0 - np.power(x[None, :], ell - 1)
    lam = _expected_prod(a, G) - _expected_prod(a * c, G)
    own = _expected_power(a, np.diag(G)[None, :])
    lam_star = (
        own * c * (_expected_prod(a, off) - _expected_prod(a * c, off))
    )
    return lam, lam_star


def lambda_value(ell, f, inputs):
    return float(lambda_tables(inputs)[0][ell - 1, f])


def lambda_star_value(ell, f, inputs):
    return float(lambda_tables(inputs)[1][ell - 1, f])


def _winners(draws, values):
    """Per draw, the distinct files attaining the maximum of ``values``
    and the share each one gets."""

    d = np.sort(draws, axis=1)
    vals = values[d]
    top = vals.max(axis=1, keepdims=True)
    win = vals >= top - _TIE_RTOL * np.abs(top)
    win[:, 1:] &= d[:, 1:] != d[:, :-1]
    share = 1.0 / win.sum(axis=1)
    return d, win, share


def _rho_exact(values, q, ell):
    m = q.size
    draws = np.stack(
        np.unravel_index(np.arange(m**ell), (m,) * ell), axis=1
    )
    weight = np.prod(q[draws], axis=1)
    d, win, share = _winners(draws, values)
    contrib = np.broadcast_to((weight * share)[:, None], win.shape)
    rho = np.zeros(m)
    np.add.at(rho, d[win], contrib[win])
    return RhoEstimate(rho, np.zeros(m), "exact")


def _rho_monte_carlo(values, q, ell, n_samples, rng):
    m = q.size
    draws = rng.choice(m, size=(n_samples, ell), p=q)
    d, win, share = _winners(draws, values)
    contrib = np.broadcast_to(share[:, None], win.shape)
    s1, s2 = np.zeros(m), np.zeros(m)
    np.add.at(s1, d[win], contrib[win])
    np.add.at(s2, d[win], contrib[win] ** 2)
    rho = s1 / n_samples
    var = np.clip(s2 / n_samples - rho**2, 0.0, None)
    stderr = np.sqrt(var / max(n_samples - 1, 1))
    return RhoEstimate(rho, stderr, "mc")


def _rho_closed(values, q, ell):
    """Tie groups by decreasing value. The winner lies in group g with
    probability ``(1 - S) ** ell - (1 - S - T) ** ell``, ``S`` being the
    mass strictly above g and ``T`` its own mass. Inside a group the
    probability is split proportionally to q."""

    m = q.size
    order = np.lexsort((np.arange(m), -values))
    v = values[order]
    starts = np.ones(m, dtype=bool)
    starts[1:] = v[1:] < v[:-1] - _TIE_RTOL * np.abs(v[:-1])
    gid = np.cumsum(starts) - 1

    T = np.bincount(gid, weights=q[order])
    S = np.cumsum(T) - T
    P = np.clip(1.0 - S, 0.0, 1.0) ** ell - np.clip(
        1.0 - S - T, 0.0, 1.0
    ) ** ell

    rho = np.zeros(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        split = np.where(T[gid] > 0.0, q[order] / T[gid], 0.0)
    rho[order] = P[gid] * split
    return RhoEstimate(rho, np.zeros(m), "closed")


def estimate_rho(values, q, ell, estimator="auto", n_samples=100_000,
                 rng=None):
    """P{f attains the maximum of ``values`` over ``ell`` i.i.d. draws
    from ``q``}, ties among distinct drawn files split evenly.

    Parameters
    ----------
    values : numpy.ndarray
        One λ table row.
    q : numpy.ndarray
    ell : int
    estimator : str, optional
    n_samples : int, optional
    rng : numpy.random.Generator, optional
        Required for Monte Carlo.

    Returns
    -------
    RhoEstimate
    """

    q = np.asarray(q, dtype=float)
    values = np.asarray(values, dtype=float)
    if estimator == "auto":
        estimator = "exact" if q.size**ell <= EXACT_LIMIT else "mc"
    if estimator == "exact":
        return _rho_exact(values, q, ell)
    if estimator == "closed":
        return _rho_closed(values, q, ell)
    if rng is None:
        rng = np.random.default_rng()
    return _rho_monte_carlo(values, q, ell, n_samples, rng)


def _rho_table(table, inputs, which):
    estimates = [
        estimate_rho(
            table[ell - 1],
            inputs.q,
            ell,
            estimator=inputs.estimator,
            n_samples=inputs.n_samples,
            rng=stream(inputs.seed, which, ell),
        )
        for ell in range(1, inputs.n + 1)
    ]
    return (
        np.array([e.rho for e in estimates]),
        np.array([e.stderr for e in estimates]),
        tuple(e.method for e in estimates),
    )


def rho(ell, f, inputs):
    """ρ estimate for one ``(ell, f)`` with its standard error."""

    lam, _ = lambda_tables(inputs)
    e = estimate_rho(
        lam[ell - 1],
        inputs.q,
        ell,
        estimator=inputs.estimator,
        n_samples=inputs.n_samples,
        rng=stream(inputs.seed, 0, ell),
    )
    return float(e.rho[f]), float(e.stderr[f])


def rho_star(ell, f, inputs):
    _, lam_star = lambda_tables(inputs)
    e = estimate_rho(
        lam_star[ell - 1],
        inputs.q,
        ell,
        estimator=inputs.estimator,
        n_samples=inputs.n_samples,
        rng=stream(inputs.seed, 1, ell),
    )
    return float(e.rho[f]), float(e.stderr[f])


def _binomials(n):
    ell = np.arange(1, n + 1)
    return ell, comb(n, ell)


def _psi(lam, rho_table, n):
    _, binom = _binomials(n)
    return float(binom @ np.sum(rho_table * lam, axis=1))


def _delta_R(lam_star, rho_star_table, inputs, x):
    if inputs.delta == 0.0:
        return 0.0
    ell, binom = _binomials(inputs.n)
    first = float((ell * binom) @ np.sum(rho_star_table * lam_star, axis=1))
    others = _expected_prod(1.0 - x, _off_diagonal(inputs.G))
    second = inputs.n * float(np.sum(inputs.q * (1.0 - x) * (1.0 - others)))
    return (first + second) * inputs.delta


def m_bar(q, n):
    """Expected number of distinct requested files."""

    if isinstance(q, DemandDistribution):
        q = q.q
    return float(np.sum(1.0 - (1.0 - np.asarray(q)) ** n))


def psi(inputs):
    lam, _ = lambda_tables(inputs)
    table, _, _ = _rho_table(lam, inputs, 0)
    return _psi(lam, table, inputs.n)


def delta_R(inputs):
    _, lam_star = lambda_tables(inputs)
    table, _, _ = _rho_table(lam_star, inputs, 1)
    return _delta_R(lam_star, table, inputs, _occupancy(inputs))


@_log_warnings
def rate_upper_bound(inputs):
    """Evaluates ``min(psi + delta_R, m_bar)``.

    Returns
    -------
    BoundReport
    """

    x = _occupancy(inputs)
    lam, lam_star = lambda_tables(inputs)
    rho_t, rho_se, methods = _rho_table(lam, inputs, 0)
    rho_s, rho_s_se, _ = _rho_table(lam_star, inputs, 1)

    p_value = _psi(lam, rho_t, inputs.n)
    dR = _delta_R(lam_star, rho_s, inputs, x)
    cap = m_bar(inputs.q, inputs.n)
    return BoundReport(
        psi=p_value,
        delta_R=dR,
        m_bar=cap,
        bound=min(p_value + dR, cap),
        lam=lam,
        lam_star=lam_star,
        rho=rho_t,
        rho_stderr=rho_se,
        rho_star=rho_s,
        rho_star_stderr=rho_s_se,
        methods=methods,
    )


def closed_form_objective(inputs, p):
    """``psi + delta_R`` at ``p`` with tie-group ρ, deterministic."""

    x = _occupancy(inputs, p)
    lam, lam_star = lambda_tables(inputs, p)
    q, n = inputs.q, inputs.n
    rho_t = np.array(
        [_rho_closed(lam[i], q, i + 1).rho for i in range(n)]
    )
    value = _psi(lam, rho_t, n)
    if inputs.delta != 0.0:
        rho_s = np.array(
            [_rho_closed(lam_star[i], q, i + 1).rho for i in range(n)]
        )
        value += _delta_R(lam_star, rho_s, inputs, x)
    return value


def closed_form_bound(inputs, p=None):
    p = inputs.p if p is None else p
    return min(
        closed_form_objective(inputs, p), m_bar(inputs.q, inputs.n)
    )


def symmetric_rate(n, M, m):
    """Bound of uniform placement without correlation,
    ``(1 - M/m) / (M/m) * (1 - (1 - M/m) ** n)``."""

    if M <= 0:
        return float(n)
    x = min(M / m, 1.0)
    return (1.0 - x) / x * (1.0 - (1.0 - x) ** n)


def project_capped_simplex(v, cap):
    """Euclidean projection of ``v`` onto
    ``{0 <= p <= cap, sum(p) == 1}``."""

    v = np.asarray(v, dtype=float)
    cap = min(cap, 1.0)
    if v.size * cap < 1.0 - 1e-12:
        msg = f"Empty capped simplex: {v.size} files with cap {cap}"
        logger.critical(msg)
        raise ValueError(msg)

    def excess(theta):
        return np.clip(v - theta, 0.0, cap).sum() - 1.0

    theta = brentq(excess, v.min() - cap - 1.0, v.max(), xtol=1e-14)
    return np.clip(v - theta, 0.0, cap)


@dataclass(frozen=True)
class OptimizationResult:
    """Outcome of :func:`optimize_p`. ``bound`` and ``uniform_bound`` are
    closed-form bound values."""

    distribution: CachingDistribution
    bound: float
    uniform_bound: float
    strategy: str
    iterations: int = 0


def correlation_score(q, G):
    """Popularity adjusted for correlation, ``q_f * sum_f' G[f, f']``."""

    return np.asarray(q) * np.asarray(G).sum(axis=1)


def _truncated_uniform_search(inputs):
    m, M = inputs.m, inputs.M
    score = correlation_score(inputs.q, inputs.G)
    order = np.lexsort((np.arange(m), -score))
    best = None
    for m_tilde in range(max(ceil(M - 1e-12), 1), m + 1):
        dist = CachingDistribution.truncated_uniform(order, m_tilde, m, M)
        value = closed_form_objective(inputs, dist.p)
        if best is None or value < best[0] - 1e-15:
            best = (value, dist, m_tilde)
    logger.debug(f"Truncated-uniform search: m_tilde={best[2]}")
    return best[0], best[1]


def _projected_gradient(inputs, max_iter=500, tol=1e-6, window=10, h=1e-6):
    m, M = inputs.m, inputs.M
    cap = 1.0 / M
    p = np.full(m, 1.0 / m)
    f = closed_form_objective(inputs, p)
    history = [f]
    step = 1.0
    it = 0

    for it in range(1, max_iter + 1):
        grad = np.empty(m)
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            grad[j] = (
                closed_form_objective(inputs, p + e)
                - closed_form_objective(inputs, p - e)
            ) / (2.0 * h)

        improved = False
        while step > 1e-12:
            candidate = project_capped_simplex(p - step * grad, cap)
            value = closed_form_objective(inputs, candidate)
            if value < f - 1e-15:
                improved = True
                break
            step /= 2.0
        if not improved:
            break

        p, f = candidate, value
        history.append(f)
        step *= 2.0
        logger.debug(f"PGD iteration {it}: objective {f:.8f}")
        if len(history) > window and history[-window - 1] - f < tol:
            break

    return f, CachingDistribution(p, M), it


@_log_warnings
def optimize_p(inputs, strategy="both", max_iter=500):
    """Minimizes the bound over the caching distribution.

    Parameters
    ----------
    inputs : BoundInputs
        ``inputs.p`` is ignored.
    strategy : str, optional
        ``"pgd"`` (projected gradient descent on the capped simplex),
        ``"truncated"`` (best uniform distribution over the top-ranked
        files) or ``"both"``, which keeps the better one.
    max_iter : int, optional
        Iteration cap of the gradient descent.

    Returns
    -------
    OptimizationResult
    """

    m, M = inputs.m, inputs.M
    uniform = CachingDistribution.uniform(m, M)
    cap = m_bar(inputs.q, inputs.n)

    if M <= 0:
        logger.warning("M=0: every caching distribution is equivalent")
        return OptimizationResult(uniform, cap, cap, "uniform")
    if M >= m:
        logger.warning(f"M={M} >= m={m}: the whole library fits in cache")
        return OptimizationResult(uniform, 0.0, 0.0, "uniform")

    uniform_bound = closed_form_bound(inputs, uniform.p)
    candidates = []
    with Timer() as timer:
        if strategy in ("truncated", "both"):
            value, dist = _truncated_uniform_search(inputs)
            candidates.append((value, 0, dist, "truncated", 0))
        if strategy in ("pgd", "both"):
            value, dist, it = _projected_gradient(inputs, max_iter=max_iter)
            candidates.append((value, 1, dist, "pgd", it))
    if not candidates:
        msg = f"Unknown strategy {strategy!r}"
        logger.critical(msg)
        raise ValueError(msg)

    value, _, dist, name, it = min(candidates, key=lambda c: c[:2])
    bound = min(value, cap)
    logger.success(
        f"optimize_p M={M:g}: bound {bound:.6f} (uniform "
        f"{uniform_bound:.6f}) via {name} in {timer.dt:.01f} {timer.units}"
    )
    return OptimizationResult(dist, bound, uniform_bound, name, it)


@dataclass(frozen=True)
class DeltaChoice:
    delta: float
    bound: float
    distribution: CachingDistribution
    table: tuple


def optimize_delta(inputs, grid, optimize=True, strategy="both"):
    """Evaluates the bound on a grid of thresholds and keeps the best.

    ``delta == 0`` is evaluated with the identity match matrix; any other
    value with ``inputs.G``, which the caller derives for that threshold.
    With ``optimize`` the caching distribution is re-optimized per
    threshold, otherwise ``inputs.p`` (uniform when missing) is used.

    Returns
    -------
    DeltaChoice
        ``table`` holds ``(delta, bound)`` for every grid point.
    """

    grid = [float(d) for d in grid]
    if not grid or any(not 0.0 <= d <= 1.0 for d in grid):
        msg = f"The delta grid must be a nonempty subset of [0, 1]: {grid}"
        logger.critical(msg)
        raise ValueError(msg)

    table, best = [], None
    for delta in grid:
        G = np.eye(inputs.m) if delta == 0.0 else inputs.G
        candidate = inputs.with_delta(delta, G)
        if optimize:
            result = optimize_p(candidate, strategy=strategy)
            value, dist = result.bound, result.distribution
        else:
            dist = (
                CachingDistribution.uniform(inputs.m, inputs.M)
                if inputs.p is None
                else CachingDistribution(inputs.p, inputs.M)
            )
            value = closed_form_bound(candidate, dist.p)
        table.append((delta, value))
        if best is None or value < best[1] - 1e-15:
            best = (delta, value, dist)

    return DeltaChoice(
        delta=best[0], bound=best[1], distribution=best[2], table=tuple(table)
    )
