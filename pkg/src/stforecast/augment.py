"""Diurnal cumulation and within-day super-resolution, with exact inverses.

A raw series with period ``T`` is mapped day by day to its running sum
(restarting at every day boundary), then each day's ``T`` samples are
interleaved with the ``T - 1`` midpoints between neighbours, giving blocks of
``2T - 1``. Nothing is interpolated across a day boundary, so a change in day
``n`` only ever touches day ``n``'s block.
"""

from __future__ import annotations

import numpy as np

from .events import NodeSeries, SeriesState


class AugmentError(ValueError):
    pass


def _blocks(values: np.ndarray, block: int, partial: str) -> np.ndarray:
    n = values.shape[-1]
    rem = n % block
    if rem:
        if partial == "drop":
            values = values[..., : n - rem]
        elif partial == "pad":
            pad = [(0, 0)] * (values.ndim - 1) + [(0, block - rem)]
            values = np.pad(values, pad)
        else:
            raise AugmentError(f"length {n} is not a multiple of the block length {block}; "
                               "pass partial='drop' or partial='pad'")
    return values.reshape(values.shape[:-1] + (-1, block))


def _expect(series: NodeSeries, state: SeriesState, op: str) -> None:
    if series.state is not state:
        raise AugmentError(f"{op} expects a {state.value} series, got {series.state.value}")


def cumulate_values(x, period: int, partial: str = "error") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.cumsum(_blocks(x, period, partial), axis=-1).reshape(x.shape[:-1] + (-1,))


def decumulate_values(y, period: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    b = _blocks(y, period, "error")
    if np.any(np.diff(b, axis=-1) < 0):
        raise AugmentError("cumulative series decreases inside a day block")
    x = np.diff(b, axis=-1, prepend=0.0)
    return x.reshape(y.shape)


def super_resolve_values(y, period: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    b = _blocks(y, period, "error")
    out = np.empty(b.shape[:-1] + (2 * period - 1,))
    out[..., 0::2] = b
    out[..., 1::2] = 0.5 * (b[..., :-1] + b[..., 1:])
    return out.reshape(y.shape[:-1] + (-1,))


def downsample_values(yhat, period: int) -> np.ndarray:
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.shape[-1] % (2 * period - 1):
        raise AugmentError(f"length {yhat.shape[-1]} is not a multiple of 2T-1 = {2 * period - 1}")
    b = yhat.reshape(yhat.shape[:-1] + (-1, 2 * period - 1))
    return np.ascontiguousarray(b[..., 0::2]).reshape(yhat.shape[:-1] + (-1,))


def cumulate(x: NodeSeries, period: int | None = None, partial: str = "error") -> NodeSeries:
    """Within-day running sum, restarting every ``period`` steps.

    ``partial`` handles a trailing incomplete day: ``"error"`` (default),
    ``"drop"`` or ``"pad"`` (zero-filled).
    """
    _expect(x, SeriesState.RAW, "cumulate")
    T = period or x.period
    if T < 2:
        raise AugmentError("period must be at least 2")
    out = NodeSeries(cumulate_values(x.values, T, partial), x.bin_width, T,
                     SeriesState.DIURNAL_CUMULATIVE)
    return out


def decumulate(y: NodeSeries, period: int | None = None) -> NodeSeries:
    _expect(y, SeriesState.DIURNAL_CUMULATIVE, "decumulate")
    T = period or y.period
    return NodeSeries(decumulate_values(y.values, T), y.bin_width, T, SeriesState.RAW)


def super_resolve(y: NodeSeries, period: int | None = None) -> NodeSeries:
    """Insert midpoints between neighbouring samples of each day (blocks of 2T-1)."""
    _expect(y, SeriesState.DIURNAL_CUMULATIVE, "super_resolve")
    T = period or y.period
    return NodeSeries(super_resolve_values(y.values, T), y.bin_width / 2, T,
                      SeriesState.SUPER_RESOLVED)


def downsample(yhat: NodeSeries, period: int | None = None) -> NodeSeries:
    _expect(yhat, SeriesState.SUPER_RESOLVED, "downsample")
    T = period or yhat.period
    return NodeSeries(downsample_values(yhat.values, T), yhat.bin_width * 2, T,
                      SeriesState.DIURNAL_CUMULATIVE)


def forward(x: NodeSeries, period: int | None = None, partial: str = "error") -> NodeSeries:
    """Raw counts to the super-resolved cumulative series."""
    return super_resolve(cumulate(x, period, partial))


def inverse(yhat: NodeSeries, period: int | None = None) -> NodeSeries:
    """Super-resolved cumulative series back to raw counts (downsample, then decumulate)."""
    return decumulate(downsample(yhat, period))
