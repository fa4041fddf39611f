"""Lazy cvxpy import with its solver-discovery warnings silenced."""

from __future__ import annotations

import logging


def _drop_probe_warnings(record: logging.LogRecord) -> bool:
    return "importing solver" not in record.getMessage()


def import_cvxpy():
    # cvxpy probes optional solver backends on import and logs a warning for
    # each one that fails to load; those are irrelevant to the conic solver used here
    # (the probe also runs lazily at the first solve, so the filter stays attached)
    logging.getLogger("__cvxpy__").addFilter(_drop_probe_warnings)
    import cvxpy

    return cvxpy
