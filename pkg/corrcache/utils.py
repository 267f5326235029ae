from time import perf_counter

import numpy as np


class Timer:
    def __enter__(self):
        self._time = perf_counter()
        self._units = "s"
        return self

    def __exit__(self, type, value, traceback):
        self._time = perf_counter() - self._time
        self._seconds = self._time
        if self._time > 60.0:
            self._time = self._time / 60.0
            self._units = "m"
        elif self._time < 1.0:
            self._time = self._time * 1000.0
            self._units = "ms"

    @property
    def dt(self):
        return self._time

    @property
    def units(self):
        return self._units

    @property
    def seconds(self):
        return self._seconds


def as_generator(rng):
    """Coerces ``rng`` to a :class:`numpy.random.Generator`.

    Parameters
    ----------
    rng : None, int, numpy.random.SeedSequence or numpy.random.Generator
        Generators are returned untouched, anything else seeds a new one.

    Returns
    -------
    numpy.random.Generator
    """

    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def stream(seed, *keys):
    """Returns the random stream identified by ``keys`` below the master
    ``seed``. Streams with different keys are statistically independent and
    a given ``(seed, keys)`` always yields the same stream, which is what
    makes every sweep point reproducible on its own regardless of the
    order (or the process) in which it runs.

    Parameters
    ----------
    seed : int
        The master seed.
    *keys : int
        The path of the stream in the seed hierarchy, e.g.
        ``(scheme_index, M_index, cache_draw)``.

    Returns
    -------
    numpy.random.Generator
    """

    keys = tuple(int(k) for k in keys)
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=keys)
    )


def mean_and_stderr(values):
    """Sample mean and standard error of the mean. A single sample has a
    standard error of 0.

    Parameters
    ----------
    values : array_like

    Returns
    -------
    float, float
    """

    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), 0.0
    mean = values.mean()
    stderr = values.std(ddof=1) / np.sqrt(values.size)
    return float(mean), float(stderr)


def set_grids(
    ax,
    minorticks=True,
    grid=False,
    bottom=True,
    left=True,
    right=True,
    top=True,
):

    if minorticks:
        ax.minorticks_on()

    if grid:
        ax.grid(alpha=0.3)

    ax.tick_params(
        which="both",
        direction="in",
        bottom=bottom,
        left=left,
        top=top,
        right=right,
    )


SCHEME_STYLES = {
    "LC_U": {"color": "tab:gray", "marker": "s", "label": "LC/U"},
    "LC_NM": {"color": "tab:blue", "marker": "^", "label": "LC/NM"},
    "RAP_CM": {"color": "tab:green", "marker": "o", "label": "RAP/CM"},
    "CA_RAP_CM": {"color": "tab:red", "marker": "D", "label": "CA-RAP/CM"},
}


def plot_rate_curves(
    *,
    ax,
    record,
    show_bound=True,
    errorbar_kwargs={"capsize": 2, "linestyle": "-", "markersize": 4},
    bound_kwargs={"linestyle": "--", "linewidth": 0.8},
):
    """Plots the expected rate of every scheme in ``record`` against the
    cache size M, with 2 x standard-error bars. The bound curves of the
    coded schemes are drawn dashed in the same color.

    Parameters
    ----------
    ax : matplotlib.axes.Axes
        The axes to draw on.
    record : corrcache.harness.ResultRecord
        A completed sweep.
    show_bound : bool, optional
        Whether to draw the rate upper bound next to the coded schemes.
    errorbar_kwargs : dict, optional
        Passed to ``ax.errorbar``.
    bound_kwargs : dict, optional
        Passed to ``ax.plot`` for the bound curves.
    """

    for scheme, rows in record.series().items():
        style = SCHEME_STYLES.get(scheme, {"label": scheme})
        M = [row["M"] for row in rows]
        rate = [row["mean_rate"] for row in rows]
        err = [2.0 * row["stderr"] for row in rows]
        ax.errorbar(M, rate, yerr=err, **style, **errorbar_kwargs)
        bound = [row["bound"] for row in rows]
        if show_bound and not all(np.isnan(b) for b in bound):
            ax.plot(
                M, bound, color=style.get("color"), **bound_kwargs
            )

    ax.set_xlabel("Cache size $M$ (files)")
    ax.set_ylabel("Expected rate (files)")
    ax.legend(frameon=False)
    set_grids(ax)
