"""Li-MAR: per-angle linear interpolation across the metal trace."""

from __future__ import annotations

import logging

import numpy as np

from .errors import BaselineDegenerateError, ConfigurationError

log = logging.getLogger(__name__)


def degenerate_rows(trace: np.ndarray) -> np.ndarray:
    """Angles whose detector row is masked end to end."""
    return np.asarray(trace, dtype=bool).all(axis=-1)


def limar_inpaint(sino: np.ndarray, trace: np.ndarray, strict: bool = False) -> np.ndarray:
    """Fill each masked run from its nearest unmasked neighbours.

    Interior runs are linearly interpolated; runs touching either end of a row
    take the single available neighbour's value.  Fully masked rows are set to
    zero (or raise :class:`BaselineDegenerateError` when ``strict``).
    """
    sino = np.asarray(sino, dtype=np.float64)
    trace = np.asarray(trace, dtype=bool)
    if sino.shape != trace.shape or sino.ndim != 2:
        raise ConfigurationError(f"sinogram {sino.shape} and trace {trace.shape} must match (2D)")
    out = sino.copy()
    bins = np.arange(sino.shape[1])
    bad = degenerate_rows(trace)
    if bad.any():
        if strict:
            raise BaselineDegenerateError(f"{int(bad.sum())} fully masked rows")
        log.warning("Li-MAR: %d fully masked rows filled with 0", int(bad.sum()))
    for i in np.flatnonzero(trace.any(axis=1)):
        hole = trace[i]
        if bad[i]:
            out[i] = 0.0
            continue
        known = ~hole
        # np.interp holds the end values constant outside the known range
        out[i, hole] = np.interp(bins[hole], bins[known], sino[i, known])
    return out
