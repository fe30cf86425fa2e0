"""Single-tile binary-phase RIS channel model.

Elements are vectorized row-major over ``(x, y)``: element ``(x, y)`` sits
at index ``x * y_elems + y``. The 2D-DFT matrix is the unnormalized
``kron(F_X, F_Y)``, so ``F^H F = X Y I`` and the element channel relates to
its angular representation as ``zeta = conj(F) @ xi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._toml import ConfigError, dump_toml, load_toml
from ._validation import check_bits, check_complex_vector

RSRP_FLOOR_DB = -200.0
EXHAUSTIVE_MAX_ELEMS = 20


@dataclass(frozen=True)
class RisGeometry:
    x_elems: int = 8
    y_elems: int = 8

    def __post_init__(self):
        if self.x_elems < 1 or self.y_elems < 1:
            raise ValueError("RIS dimensions must be >= 1")

    @property
    def total(self) -> int:
        return self.x_elems * self.y_elems

    @classmethod
    def from_total(cls, p: int) -> "RisGeometry":
        """Most nearly square ``X x Y`` factorization of ``p`` with ``X <= Y``."""
        if p < 1:
            raise ValueError("element count must be >= 1")
        x = max(d for d in range(1, math.isqrt(p) + 1) if p % d == 0)
        return cls(x, p // x)


@dataclass(frozen=True, eq=False)
class PhaseConfig:
    """Binary phase bits; bit 1 applies a pi shift, so the reflection is ``(-1)**beta``."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", check_bits(self.beta))

    def __eq__(self, other):
        return isinstance(other, PhaseConfig) and np.array_equal(self.beta, other.beta)

    def __len__(self):
        return self.beta.size

    @property
    def gamma(self) -> np.ndarray:
        return 1 - 2 * self.beta.astype(np.int8)

    def complement(self) -> "PhaseConfig":
        return PhaseConfig(1 - self.beta)

    def to_bits(self) -> str:
        return "".join("1" if b else "0" for b in self.beta)

    @classmethod
    def from_bits(cls, bits: str) -> "PhaseConfig":
        return cls(np.array([c == "1" for c in bits], dtype=np.uint8))

    @classmethod
    def zeros(cls, p: int) -> "PhaseConfig":
        return cls(np.zeros(p, dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class ElementChannel:
    """Cascaded per-element gains ``zeta`` plus an optional direct path.

    ``xi`` keeps the angular-domain draw when the channel was synthesized.
    """

    zeta: np.ndarray
    direct: complex = 0j
    geometry: RisGeometry | None = None
    xi: np.ndarray | None = None

    def __post_init__(self):
        zeta = check_complex_vector(self.zeta, "zeta")
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "direct", complex(self.direct))
        if self.geometry is None:
            object.__setattr__(self, "geometry", RisGeometry(1, zeta.size))
        elif self.geometry.total != zeta.size:
            raise ValueError(f"zeta has {zeta.size} entries but geometry has {self.geometry.total}")

    @property
    def num_elements(self) -> int:
        return self.zeta.size

    @property
    def rms_level(self) -> float:
        """RMS of ``|Gamma^T zeta + direct|`` over uniformly random phase patterns."""
        return float(np.sqrt(np.sum(np.abs(self.zeta) ** 2) + abs(self.direct) ** 2))

    def rotated(self, theta: float) -> "ElementChannel":
        rot = np.exp(1j * theta)
        return ElementChannel(self.zeta * rot, self.direct * rot, self.geometry,
                              None if self.xi is None else self.xi * rot)


def dft_1d(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def build_dft(geom: RisGeometry) -> np.ndarray:
    """Unnormalized ``XY x XY`` 2D-DFT matrix matching the row-major element order."""
    return np.kron(dft_1d(geom.x_elems), dft_1d(geom.y_elems))


def angular_to_element(xi, geom: RisGeometry) -> np.ndarray:
    return np.conj(build_dft(geom)) @ np.asarray(xi, dtype=np.complex128)


def element_to_angular(zeta, geom: RisGeometry) -> np.ndarray:
    return build_dft(geom) @ np.asarray(zeta, dtype=np.complex128) / geom.total


def synthesize_scenario(geom: RisGeometry, sparsity: int, amplitude_law="gaussian", seed: int = 0,
                        direct: complex = 0j) -> ElementChannel:
    """Draw an angular channel with ``sparsity`` nonzero bins and map it to the element domain.

    ``amplitude_law`` is ``"gaussian"`` (CN(0, 1) gains), ``"unit"`` (unit
    magnitude, uniform phase) or a callable ``(rng, n) -> complex array``.
    """
    p = geom.total
    if not 1 <= sparsity <= p:
        raise ValueError(f"sparsity must be in [1, {p}], got {sparsity}")
    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(p, size=sparsity, replace=False))
    if callable(amplitude_law):
        gains = np.asarray(amplitude_law(rng, sparsity), dtype=np.complex128)
    elif amplitude_law == "gaussian":
        gains = (rng.standard_normal(sparsity) + 1j * rng.standard_normal(sparsity)) / np.sqrt(2)
    elif amplitude_law == "unit":
        gains = np.exp(2j * np.pi * rng.random(sparsity))
    else:
        raise ValueError(f"unknown amplitude law {amplitude_law!r}")
    xi = np.zeros(p, dtype=np.complex128)
    xi[support] = gains
    return ElementChannel(angular_to_element(xi, geom), direct, geom, xi)


def _gammas(cfgs) -> np.ndarray:
    if isinstance(cfgs, PhaseConfig):
        return cfgs.gamma
    beta = np.asarray(cfgs)
    return 1 - 2 * beta.astype(np.int8)


def effective_channel(scn: ElementChannel, cfg) -> complex:
    """``Gamma^T zeta + direct`` for a :class:`PhaseConfig` or raw bit vector."""
    gamma = _gammas(cfg)
    if gamma.shape != scn.zeta.shape:
        raise ValueError(f"phase config of length {gamma.size} does not match {scn.num_elements} elements")
    return complex(gamma @ scn.zeta + scn.direct)


def effective_channels(scn: ElementChannel, betas) -> np.ndarray:
    """Vectorized :func:`effective_channel` over the rows of a bit matrix."""
    gamma = _gammas(betas)
    return gamma @ scn.zeta + scn.direct


def rsrp_db(scn: ElementChannel, cfg, tx_power_db: float = 0.0) -> float:
    h = abs(effective_channel(scn, cfg))
    if h == 0:
        return RSRP_FLOOR_DB
    return max(tx_power_db + 20 * math.log10(h), RSRP_FLOOR_DB)


def exhaustive_best(scn: ElementChannel, max_elems: int = EXHAUSTIVE_MAX_ELEMS) -> tuple[PhaseConfig, float]:
    """Global maximizer of ``|h|^2`` over all ``2**P`` phase configurations.

    Bit 0 of ``beta`` is the most significant when ordering configurations;
    among (numerically) tied maxima the lowest value wins.
    """
    p = scn.num_elements
    if p > max_elems:
        raise ValueError(f"exhaustive search limited to {max_elems} elements, got {p}")
    weights = 1 << np.arange(p - 1, -1, -1, dtype=np.int64)
    chunk = 1 << min(p, 16)
    best_val, best_idx = -1.0, 0
    for start in range(0, 1 << p, chunk):
        idx = np.arange(start, start + chunk, dtype=np.int64)
        bits = ((idx[:, None] & weights) != 0).astype(np.int8)
        power = np.abs((1 - 2 * bits) @ scn.zeta + scn.direct) ** 2
        top = power.max()
        if top > best_val * (1 + 1e-12):
            j = int(np.argmax(power >= top * (1 - 1e-12)))
            best_val, best_idx = float(top), int(idx[j])
    beta = ((best_idx & weights) != 0).astype(np.uint8)
    return PhaseConfig(beta), float(np.abs(effective_channel(scn, beta)) ** 2)


def save_scenario(scn: ElementChannel, path, **metadata) -> None:
    """Write a scenario (geometry, gains, optional seed/sparsity metadata) as TOML."""
    geom = scn.geometry
    data = {
        "scenario": dict(metadata),
        "geometry": {"x_elems": geom.x_elems, "y_elems": geom.y_elems},
        "direct": [scn.direct.real, scn.direct.imag],
        "zeta": {"re": scn.zeta.real.tolist(), "im": scn.zeta.imag.tolist()},
    }
    if scn.xi is not None:
        support = np.flatnonzero(scn.xi)
        data["xi"] = {"support": support.tolist(), "re": scn.xi[support].real.tolist(),
                      "im": scn.xi[support].imag.tolist()}
    dump_toml(data, path)


def load_scenario(path) -> tuple[ElementChannel, dict]:
    data = load_toml(path)
    try:
        geom = RisGeometry(**data["geometry"])
        zeta = np.array(data["zeta"]["re"]) + 1j * np.array(data["zeta"]["im"])
        direct = complex(*data.get("direct", (0.0, 0.0)))
        xi = None
        if "xi" in data:
            xi = np.zeros(geom.total, dtype=np.complex128)
            xi[data["xi"]["support"]] = np.array(data["xi"]["re"]) + 1j * np.array(data["xi"]["im"])
        return ElementChannel(zeta, direct, geom, xi), data.get("scenario", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario file {path}: {exc}") from exc
