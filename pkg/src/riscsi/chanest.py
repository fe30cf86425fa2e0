"""Wideband complex channel extraction from a received CSI-RS slot.

The chain is LS per pilot RE, per-RB anchoring, frequency interpolation
across the bandwidth part, and a complex mean over all subcarriers.
Interpolation is piecewise linear between the two nearest anchors inside a
24-subcarrier window, with constant extrapolation past the outer anchors.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .grid import SUBCARRIERS_PER_RB, BwpConfig, CsiRsConfig, Pilots, ResourceGrid, enumerate_re_set

DEFAULT_TAPS = 24


@dataclass(eq=False)
class LsEstimateSet:
    coords: np.ndarray
    values: np.ndarray
    port: int = 0
    antenna: int = 0

    def as_dict(self) -> dict[tuple[int, int], complex]:
        return {(int(m), int(n)): complex(v) for (m, n), v in zip(self.coords, self.values)}


@dataclass(eq=False)
class AnchorSeries:
    subcarriers: np.ndarray
    values: np.ndarray
    n_grp: np.ndarray


@dataclass(eq=False)
class InterpolatedChannel:
    values: np.ndarray
    weights: np.ndarray
    anchor_subcarriers: np.ndarray
    taps: int = DEFAULT_TAPS
    rule: str = "linear"


@dataclass(frozen=True)
class WidebandCci:
    value: complex
    antenna: int = 0
    port: int = 0


def ls_estimate(grid: ResourceGrid, pilots: Pilots, re_set=None, port: int = 0,
                antenna: int = 0) -> LsEstimateSet:
    """LS estimate ``Y x* / |x|^2`` on every RE of ``re_set`` (defaults to the port's pilot REs)."""
    if re_set is None:
        coords, x = pilots.re_sets[port], pilots.symbols[port]
    else:
        lookup = pilots.mapping(port)
        coords = np.asarray(re_set, dtype=int).reshape(-1, 2)
        try:
            x = np.array([lookup[(int(m), int(n))] for m, n in coords])
        except KeyError as exc:
            raise ValueError(f"RE {exc.args[0]} has no pilot on port {port}") from None
    power = np.abs(x) ** 2
    if np.any(power == 0):
        raise ValueError("zero-magnitude pilot in RE set")
    y = grid.data[antenna, coords[:, 0], coords[:, 1]]
    return LsEstimateSet(coords, y * np.conj(x) / power, port, antenna)


def anchor(ls: LsEstimateSet, cfg: CsiRsConfig | None = None) -> AnchorSeries:
    """Average each RB's LS estimates onto the RB's lowest CSI-RS subcarrier.

    ``cfg`` is accepted for signature symmetry; RB membership follows from
    the subcarrier index alone.
    """
    if len(ls.values) == 0:
        raise ValueError("empty LS estimate set")
    m = ls.coords[:, 0]
    rbs, inverse = np.unique(m // SUBCARRIERS_PER_RB, return_inverse=True)
    sums = np.zeros(len(rbs), dtype=np.complex128)
    np.add.at(sums, inverse, ls.values)
    counts = np.bincount(inverse, minlength=len(rbs))
    m0 = np.full(len(rbs), np.iinfo(np.int64).max)
    np.minimum.at(m0, inverse, m)
    return AnchorSeries(m0, sums / counts, counts)


def interpolation_weights(anchor_subcarriers, num_subcarriers: int, taps: int = DEFAULT_TAPS) -> np.ndarray:
    """Weight matrix ``(num_subcarriers, n_anchors)``; each row sums to one. Read-only (cached)."""
    a = tuple(int(k) for k in np.asarray(anchor_subcarriers).ravel())
    if not a:
        raise ValueError("need at least one anchor")
    if any(b <= a_ for a_, b in zip(a, a[1:])):
        raise ValueError("anchor subcarriers must be strictly increasing")
    return _weights(a, int(num_subcarriers), int(taps))


@lru_cache(maxsize=64)
def _weights(anchor_subcarriers: tuple, num_subcarriers: int, taps: int) -> np.ndarray:
    a = np.array(anchor_subcarriers)
    half = taps // 2
    w = np.zeros((num_subcarriers, a.size))
    for k in range(num_subcarriers):
        hi = np.searchsorted(a, k)
        if hi < a.size and a[hi] == k:
            w[k, hi] = 1.0
            continue
        lo = hi - 1
        if lo < 0:
            w[k, hi] = 1.0
        elif hi == a.size:
            w[k, lo] = 1.0
        else:
            d_lo, d_hi = k - a[lo], a[hi] - k
            if d_lo <= half and d_hi <= half:
                w[k, lo] = d_hi / (d_lo + d_hi)
                w[k, hi] = d_lo / (d_lo + d_hi)
            else:
                # bracket wider than the tap window: hold the nearer anchor
                w[k, lo if d_lo <= d_hi else hi] = 1.0
    w.flags.writeable = False
    return w


def interpolate(anchors: AnchorSeries, bwp: BwpConfig, taps: int = DEFAULT_TAPS) -> InterpolatedChannel:
    w = interpolation_weights(anchors.subcarriers, bwp.num_subcarriers, taps)
    return InterpolatedChannel(w @ anchors.values, w, anchors.subcarriers, taps)


def wideband_average(interp: InterpolatedChannel, antenna: int = 0, port: int = 0) -> WidebandCci:
    if interp.values.size == 0:
        raise ValueError("empty interpolated channel")
    return WidebandCci(complex(np.mean(interp.values)), antenna, port)


def extract_cci(grid: ResourceGrid, cfg: CsiRsConfig, pilots: Pilots, port: int = 0,
                antenna: int = 0, taps: int = DEFAULT_TAPS) -> WidebandCci:
    """Full extraction chain; quantization is left to :mod:`riscsi.report`."""
    ls = ls_estimate(grid, pilots, port=port, antenna=antenna)
    interp = interpolate(anchor(ls, cfg), cfg.bwp, taps)
    return wideband_average(interp, antenna, port)


def noise_gain(cfg: CsiRsConfig, port: int = 0, taps: int = DEFAULT_TAPS) -> float:
    """Variance of the wideband estimate per unit of per-RE noise variance.

    The chain is linear, so each pilot RE enters the wideband mean with a
    fixed coefficient; this returns the sum of their squared magnitudes.
    """
    m = enumerate_re_set(cfg, port)[:, 0]
    rbs, counts = np.unique(m // SUBCARRIERS_PER_RB, return_counts=True)
    m0 = np.array([m[m // SUBCARRIERS_PER_RB == rb].min() for rb in rbs])
    coef = interpolation_weights(m0, cfg.bwp.num_subcarriers, taps).mean(axis=0)
    return float(np.sum(coef ** 2 / counts))


def write_channel_csv(interp: InterpolatedChannel, path, anchors: AnchorSeries | None = None) -> None:
    """Dump ``k, re, im, is_anchor`` rows of an interpolated channel."""
    anchor_set = set(int(k) for k in (anchors.subcarriers if anchors is not None else interp.anchor_subcarriers))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "re", "im", "is_anchor"])
        for k, v in enumerate(interp.values):
            writer.writerow([k, repr(float(v.real)), repr(float(v.imag)), int(k in anchor_set)])


class CciExtractor(TransformerMixin, BaseEstimator):
    """Transformer mapping received slots to wideband CCI values.

    ``fit`` learns nothing from data; it fixes the RE pattern and records the
    estimator's noise gain. ``transform`` returns one complex value per grid.
    """

    def __init__(self, config: CsiRsConfig | None = None, pilots: Pilots | None = None,
                 port: int = 0, antenna: int = 0, taps: int = DEFAULT_TAPS):
        self.config = config
        self.pilots = pilots
        self.port = port
        self.antenna = antenna
        self.taps = taps

    def fit(self, X=None, y=None):
        self.config_ = self.config if self.config is not None else CsiRsConfig.row2()
        if self.pilots is None:
            raise ValueError("CciExtractor needs the transmitted pilots")
        self.re_set_ = enumerate_re_set(self.config_, self.port)
        self.noise_gain_ = noise_gain(self.config_, self.port, self.taps)
        return self

    def transform(self, X):
        check_is_fitted(self, "re_set_")
        grids = [X] if isinstance(X, ResourceGrid) else list(X)
        return np.array([extract_cci(g, self.config_, self.pilots, self.port, self.antenna, self.taps).value
                         for g in grids])
