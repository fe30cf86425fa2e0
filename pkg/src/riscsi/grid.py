"""CSI-RS resource grid: RE enumeration, pilot generation and received-grid synthesis.

Coordinates are ``(m, n)`` with ``m`` the subcarrier index relative to the
start of the bandwidth part and ``n`` the OFDM symbol within a 14-symbol slot.
A CSI-RS port ``p`` belongs to CDM group ``p // cdm_size`` and uses cover
index ``p % cdm_size`` within that group.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._toml import ConfigError, load_toml
from ._validation import check_fraction, check_nonnegative

SUBCARRIERS_PER_RB = 12
SYMBOLS_PER_SLOT = 14
SUPPORTED_SCS_KHZ = (15, 30, 60)

_QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2)


class CdmType(str, Enum):
    NO_CDM = "noCDM"
    FD_CDM2 = "fd-CDM2"

    @property
    def size(self) -> int:
        return 1 if self is CdmType.NO_CDM else 2

    def cover(self, s: int) -> np.ndarray:
        """Frequency-domain orthogonal cover w_f for cover index ``s``."""
        if self is CdmType.NO_CDM:
            return np.array([1.0])
        return np.array([[1.0, 1.0], [1.0, -1.0]])[s]


@dataclass(frozen=True)
class BwpConfig:
    num_prbs: int = 106
    scs_khz: int = 30
    first_subcarrier: int = 0

    def __post_init__(self):
        if int(self.num_prbs) < 1:
            raise ValueError(f"num_prbs must be >= 1, got {self.num_prbs}")
        if self.scs_khz not in SUPPORTED_SCS_KHZ:
            raise ValueError(f"scs_khz must be one of {SUPPORTED_SCS_KHZ}, got {self.scs_khz}")
        if self.first_subcarrier < 0:
            raise ValueError("first_subcarrier must be >= 0")

    @property
    def num_subcarriers(self) -> int:
        return self.num_prbs * SUBCARRIERS_PER_RB


@dataclass(frozen=True)
class CsiRsConfig:
    """CSI-RS row pattern placed on every RB of a bandwidth part.

    Use :meth:`row2` (1 port, no CDM, one RE per RB) or :meth:`row3`
    (fd-CDM2 pair, two REs per RB) for the supported patterns; arbitrary
    offsets are accepted with ``row_config="custom"``.
    """

    row_config: str = "row2"
    cdm_type: CdmType = CdmType.NO_CDM
    ports: int = 1
    base_freq_offsets: tuple[int, ...] = (0,)
    base_time_offsets: tuple[int, ...] = (4,)
    intra_offsets_k: tuple[int, ...] = (0,)
    intra_offsets_l: tuple[int, ...] = (0,)
    bwp: BwpConfig = field(default_factory=BwpConfig)

    def __post_init__(self):
        object.__setattr__(self, "cdm_type", CdmType(self.cdm_type))
        for name in ("base_freq_offsets", "base_time_offsets", "intra_offsets_k", "intra_offsets_l"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.base_freq_offsets) != len(self.base_time_offsets) or not self.base_freq_offsets:
            raise ValueError("base_freq_offsets and base_time_offsets must be non-empty and equally long")
        if not self.intra_offsets_k or not self.intra_offsets_l:
            raise ValueError("intra-pattern offsets must be non-empty")
        if self.cdm_type is CdmType.FD_CDM2 and len(self.intra_offsets_k) != 2:
            raise ValueError("fd-CDM2 needs exactly two frequency offsets k'")
        if self.ports not in (1, 2):
            raise ValueError(f"ports must be 1 or 2, got {self.ports}")
        if self.ports > self.cdm_type.size * self.num_groups:
            raise ValueError(f"{self.ports} ports do not fit {self.num_groups} CDM group(s) of {self.cdm_type.value}")
        offsets = [(kb + kp, lb + lp) for kb, lb in zip(self.base_freq_offsets, self.base_time_offsets)
                   for kp in self.intra_offsets_k for lp in self.intra_offsets_l]
        for dk, dl in offsets:
            if not (0 <= dk < SUBCARRIERS_PER_RB and 0 <= dl < SYMBOLS_PER_SLOT):
                raise ValueError(f"offset (k={dk}, l={dl}) falls outside the RB/slot")
        if len(set(offsets)) != len(offsets):
            raise ValueError("CDM groups overlap: an RE is produced by more than one (j, k', l')")

    @classmethod
    def row2(cls, bwp: BwpConfig | None = None, k0: int = 0, l0: int = 4) -> "CsiRsConfig":
        return cls("row2", CdmType.NO_CDM, 1, (k0,), (l0,), (0,), (0,), bwp or BwpConfig())

    @classmethod
    def row3(cls, bwp: BwpConfig | None = None, ports: int = 2, k0: int = 0, l0: int = 4) -> "CsiRsConfig":
        return cls("row3", CdmType.FD_CDM2, ports, (k0,), (l0,), (0, 1), (0,), bwp or BwpConfig())

    @classmethod
    def from_dict(cls, data: dict) -> "CsiRsConfig":
        data = dict(data)
        bwp = BwpConfig(**data.pop("bwp", {}))
        row = data.pop("row", data.pop("row_config", "row2"))
        try:
            if row == "row2":
                return cls.row2(bwp, **data)
            if row == "row3":
                return cls.row3(bwp, **data)
            return cls(row_config=row, bwp=bwp, **data)
        except TypeError as exc:
            raise ConfigError(f"bad CSI-RS config keys: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "CsiRsConfig":
        """Load from a TOML file with a ``[csirs]`` table and optional ``[csirs.bwp]``."""
        data = load_toml(path)
        try:
            return cls.from_dict(data.get("csirs", data))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def num_groups(self) -> int:
        return len(self.base_freq_offsets)

    @property
    def res_per_rb(self) -> int:
        """REs per RB carrying a single port."""
        return len(self.intra_offsets_k) * len(self.intra_offsets_l)


def _port_pattern(cfg: CsiRsConfig, port: int):
    """Coordinates, RB index and k' index of every RE of ``port``, sorted by (n, m)."""
    if not 0 <= port < cfg.ports:
        raise ValueError(f"port {port} out of range for a {cfg.ports}-port config")
    j = port // cfg.cdm_type.size
    kb, lb = cfg.base_freq_offsets[j], cfg.base_time_offsets[j]
    rb, ki, lp = np.meshgrid(np.arange(cfg.bwp.num_prbs), np.arange(len(cfg.intra_offsets_k)),
                             np.asarray(cfg.intra_offsets_l), indexing="ij")
    rb, ki, lp = rb.ravel(), ki.ravel(), lp.ravel()
    m = rb * SUBCARRIERS_PER_RB + kb + np.asarray(cfg.intra_offsets_k)[ki]
    n = lb + lp
    order = np.lexsort((m, n))
    return np.column_stack((m, n))[order], rb[order], ki[order]


def enumerate_re_set(cfg: CsiRsConfig, port: int = 0) -> np.ndarray:
    """Return the RE set of ``port`` as an ``(N, 2)`` int array of ``(m, n)`` rows, sorted by ``(n, m)``."""
    coords, _, _ = _port_pattern(cfg, port)
    return coords


def csirs_mask(cfg: CsiRsConfig) -> np.ndarray:
    """Boolean ``(subcarriers, 14)`` mask of REs occupied by any CSI-RS port or CDM group."""
    mask = np.zeros((cfg.bwp.num_subcarriers, SYMBOLS_PER_SLOT), dtype=bool)
    for j in range(cfg.num_groups):
        for kp in cfg.intra_offsets_k:
            for lp in cfg.intra_offsets_l:
                m = np.arange(cfg.bwp.num_prbs) * SUBCARRIERS_PER_RB + cfg.base_freq_offsets[j] + kp
                mask[m, cfg.base_time_offsets[j] + lp] = True
    return mask


@dataclass(frozen=True, eq=False)
class Pilots:
    """Known CSI-RS symbols: per port, RE coordinates and unit-modulus values in matching order."""

    re_sets: tuple[np.ndarray, ...]
    symbols: tuple[np.ndarray, ...]

    def mapping(self, port: int = 0) -> dict[tuple[int, int], complex]:
        return {(int(m), int(n)): complex(x) for (m, n), x in zip(self.re_sets[port], self.symbols[port])}


def generate_pilots(cfg: CsiRsConfig, seed: int = 0) -> Pilots:
    """Seeded QPSK pilots. Ports sharing a CDM group share the base sequence and differ by cover."""
    rng = np.random.default_rng(seed)
    base = {}
    re_sets, symbols = [], []
    for port in range(cfg.ports):
        coords, _, ki = _port_pattern(cfg, port)
        j = port // cfg.cdm_type.size
        if j not in base:
            base[j] = _QPSK[rng.integers(0, 4, size=len(coords))]
        cover = cfg.cdm_type.cover(port % cfg.cdm_type.size)
        re_sets.append(coords)
        symbols.append(base[j] * cover[ki])
    return Pilots(tuple(re_sets), tuple(symbols))


@dataclass(eq=False)
class ResourceGrid:
    """Received slot. ``data`` has shape ``(antennas, subcarriers, 14)``."""

    data: np.ndarray
    scheduled_mask: np.ndarray
    pilot_mask: np.ndarray
    bwp: BwpConfig

    @property
    def num_antennas(self) -> int:
        return self.data.shape[0]

    def scaled(self, alpha: complex) -> "ResourceGrid":
        return ResourceGrid(self.data * alpha, self.scheduled_mask, self.pilot_mask, self.bwp)


def _channel_matrix(h, ports: int) -> np.ndarray:
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim == 0:
        return np.full((1, ports), h)
    if h.ndim == 1:
        h = h.reshape(1, -1)
    if h.ndim != 2 or h.shape[1] != ports:
        raise ValueError(f"channel must be scalar, (ports,) or (antennas, ports); got shape {h.shape}")
    return h


def synthesize_received_grid(cfg: CsiRsConfig, pilots: Pilots, h, noise_var: float = 0.0,
                             scheduled_fraction: float = 0.0, seed: int = 0) -> ResourceGrid:
    """Build one received slot under a flat channel.

    ``h`` is a scalar (same gain on every port), a per-port vector, or an
    ``(antennas, ports)`` matrix. Each RB is scheduled for data with
    probability ``scheduled_fraction``; data REs carry random QPSK through the
    port-0 channel, unscheduled REs transmit exactly zero. Circularly
    symmetric Gaussian noise of variance ``noise_var`` is added on every RE.
    """
    noise_var = check_nonnegative(noise_var, "noise_var")
    scheduled_fraction = check_fraction(scheduled_fraction, "scheduled_fraction")
    hmat = _channel_matrix(h, cfg.ports)
    rng = np.random.default_rng(seed)
    shape = (cfg.bwp.num_subcarriers, SYMBOLS_PER_SLOT)

    port_tx = np.zeros((cfg.ports,) + shape, dtype=np.complex128)
    for p in range(cfg.ports):
        m, n = pilots.re_sets[p].T
        port_tx[p, m, n] = pilots.symbols[p]
    pilot_mask = csirs_mask(cfg)

    rb_on = rng.random(cfg.bwp.num_prbs) < scheduled_fraction
    scheduled = np.repeat(rb_on, SUBCARRIERS_PER_RB)[:, None] & ~pilot_mask
    data_tx = np.where(scheduled, _QPSK[rng.integers(0, 4, size=shape)], 0)

    rx = np.einsum("rp,pmn->rmn", hmat, port_tx) + hmat[:, 0, None, None] * data_tx
    if noise_var > 0:
        noise = rng.standard_normal((2,) + rx.shape) * np.sqrt(noise_var / 2)
        rx = rx + noise[0] + 1j * noise[1]
    return ResourceGrid(rx, scheduled, pilot_mask, cfg.bwp)


def write_grid_csv(grid: ResourceGrid, path, antenna: int = 0) -> None:
    """Dump one antenna of the grid as ``m, n, re, im, is_pilot, is_scheduled`` rows."""
    values = grid.data[antenna]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "n", "re", "im", "is_pilot", "is_scheduled"])
        for m in range(values.shape[0]):
            for n in range(values.shape[1]):
                v = values[m, n]
                writer.writerow([m, n, repr(float(v.real)), repr(float(v.imag)),
                                 int(grid.pilot_mask[m, n]), int(grid.scheduled_mask[m, n])])
