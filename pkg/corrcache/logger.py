from contextlib import contextmanager
from functools import wraps
import sys
from warnings import catch_warnings, simplefilter

from loguru import logger


SIMPLE_LOGGER_FMT = "<lvl>{level: <8}</> {message}"

LOGGER_FMT = (
    "<lvl>{level: <8}</> "
    "<fg #808080>({time:YYYY-MM-DD HH:mm:ss} "
    "{name}:{function}:{line})</> "
    "{message}"
)

LEVELS = ("DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")


def generic_filter(names):
    def f(record):
        return record["level"].name in names

    return f


def set_logger_style(
    debug=False,
    debug_simple=False,
    info=True,
    info_simple=True,
    success=True,
    success_simple=True,
    warning=True,
    warning_simple=True,
    error=True,
    error_simple=True,
    critical=True,
    critical_simple=False,
    sink=sys.stdout,
):
    """Resets the loguru sinks so that every level gets its own handler.
    Each level can be switched off and can use either the simple format
    (level and message) or the detailed one (time and call site too).

    Parameters
    ----------
    debug, info, success, warning, error, critical : bool, optional
        Whether messages of that level are emitted.
    debug_simple, ..., critical_simple : bool, optional
        Whether the corresponding level uses ``SIMPLE_LOGGER_FMT``.
    sink : file-like, optional
        Where the messages go. Defaults to stdout.
    """

    settings = locals()
    logger.remove(None)

    for level in LEVELS:
        key = level.lower()
        if not settings[key]:
            continue
        logger.add(
            sink,
            colorize=sink is sys.stdout,
            filter=generic_filter([level]),
            format=SIMPLE_LOGGER_FMT
            if settings[f"{key}_simple"]
            else LOGGER_FMT,
        )


def _log_warnings(f):
    """Re-emits any Python warning raised inside ``f`` through loguru, so
    numpy overflow and scipy convergence chatter end up in the same stream
    as everything else."""

    @wraps(f)
    def wrapper(*args, **kwargs):
        with catch_warnings(record=True) as w:
            simplefilter("always")
            output = f(*args, **kwargs)
        for warning in w:
            klass = warning.category.__name__
            message = str(warning.message)
            logger.warning(f"{klass}: {message} | {f.__name__}")
        return output

    return wrapper


@contextmanager
def logging_mode(**kwargs):
    set_logger_style(**kwargs)
    try:
        yield None
    finally:
        set_logger_style()


set_logger_style()
