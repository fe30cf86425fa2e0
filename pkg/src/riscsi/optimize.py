"""Sensing matrices, measurement acquisition and the Hadamard / OMP phase optimizers.

Both optimizers follow the same recipe: estimate the per-element channel
from CCI measurements taken under known +/-1 patterns, rotate away the
global phase ``angle(sum of estimates)``, and set each phase bit from the
sign of the real part.

:class:`HadamardOptimizer` and :class:`OmpOptimizer` wrap the free functions
as scikit-learn estimators: ``fit(X, y)`` takes the applied patterns
(one +/-1 row per measurement) and the complex measurements, and exposes
``coef_`` (element-domain channel estimate) and ``beta_`` (phase bits).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_complex_vector, check_power_of_two, check_sign_matrix
from .chanest import extract_cci, noise_gain
from .grid import CsiRsConfig, generate_pilots, synthesize_received_grid
from .report import QuantizerSpec, dequantize, quantize
from .ris import ElementChannel, PhaseConfig, RisGeometry, build_dft, effective_channel

RIDGE = 1e-12


class SensingKind(str, Enum):
    HADAMARD = "hadamard"
    BERNOULLI = "bernoulli"


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    q: np.ndarray
    kind: SensingKind

    def __post_init__(self):
        object.__setattr__(self, "q", check_sign_matrix(self.q))
        object.__setattr__(self, "kind", SensingKind(self.kind))

    @property
    def num_pilots(self) -> int:
        return self.q.shape[0]

    @property
    def num_elements(self) -> int:
        return self.q.shape[1]

    def patterns(self) -> list[PhaseConfig]:
        return [pattern_from_row(row) for row in self.q]


@dataclass(frozen=True)
class OmpParams:
    pilots: int
    sparsity: int

    def __post_init__(self):
        if not 1 <= self.sparsity <= self.pilots:
            raise ValueError(f"need 1 <= sparsity <= pilots, got S={self.sparsity}, W={self.pilots}")


@dataclass(eq=False)
class MeasurementVector:
    y: np.ndarray
    patterns: list[PhaseConfig]

    def __len__(self):
        return self.y.size


def hadamard_matrix(p: int) -> np.ndarray:
    """Sylvester Hadamard matrix of order ``p`` built by block doubling."""
    p = check_power_of_two(p, "Hadamard order")
    h = np.ones((1, 1), dtype=np.int64)
    while h.shape[0] < p:
        h = np.block([[h, h], [h, -h]])
    return h


def hadamard_sensing(p: int) -> SensingMatrix:
    return SensingMatrix(hadamard_matrix(p), SensingKind.HADAMARD)


def bernoulli_sensing(p: int, w: int, seed: int = 0) -> SensingMatrix:
    """``w`` independent equiprobable +/-1 patterns over ``p`` elements."""
    if w < 1 or p < 1:
        raise ValueError("pilot count and element count must be >= 1")
    rng = np.random.default_rng(seed)
    return SensingMatrix(1 - 2 * rng.integers(0, 2, size=(w, p)), SensingKind.BERNOULLI)


def reflection_matrix(q) -> np.ndarray:
    """Stack a sensing matrix over its negation, ``[Q; -Q]``."""
    q = check_sign_matrix(q.q if isinstance(q, SensingMatrix) else q)
    return np.vstack([q, -q])


def pattern_from_row(q_row) -> PhaseConfig:
    q_row = check_sign_matrix(q_row)[0]
    return PhaseConfig((q_row < 0).astype(np.uint8))


class ChannelSounder:
    """UE-side wideband CCI measurement for whatever pattern the RIS currently applies.

    With ``grid_config`` set, every measurement synthesizes a received
    CSI-RS slot and runs the extraction chain. Otherwise the fast path adds
    Gaussian noise whose variance equals the chain's noise gain times
    ``noise_var``, which is the same estimator in distribution.
    """

    def __init__(self, scn: ElementChannel, noise_var: float = 0.0, seed: int = 0,
                 grid_config: CsiRsConfig | None = None, fast_config: CsiRsConfig | None = None):
        self.scn = scn
        self.noise_var = float(noise_var)
        self.grid_config = grid_config
        self._rng = np.random.default_rng(seed)
        if grid_config is not None:
            self._pilots = generate_pilots(grid_config, int(self._rng.integers(2 ** 63)))
            self._est_var = None
        else:
            cfg = fast_config or CsiRsConfig.row2()
            self._est_var = self.noise_var * noise_gain(cfg) if self.noise_var > 0 else 0.0
        self.count = 0

    def measure(self, cfg) -> complex:
        self.count += 1
        h = effective_channel(self.scn, cfg)
        if self.grid_config is not None:
            grid = synthesize_received_grid(self.grid_config, self._pilots, h, self.noise_var,
                                            0.0, int(self._rng.integers(2 ** 63)))
            return extract_cci(grid, self.grid_config, self._pilots).value
        if self._est_var:
            z = self._rng.standard_normal(2) * np.sqrt(self._est_var / 2)
            h += complex(z[0], z[1])
        return h


def report_roundtrip(value: complex, quant: QuantizerSpec | None, scale: float = 1.0) -> complex:
    """What the RIC recovers from one CCI report: quantize ``value / scale`` and undo it."""
    if quant is None:
        return value
    return dequantize(quantize(value / scale, quant)) * scale


def acquire(scn: ElementChannel, q: SensingMatrix, quant: QuantizerSpec | None = None,
            noise_var: float = 0.0, seed: int = 0, *, grid_config: CsiRsConfig | None = None,
            scale: float | None = None) -> MeasurementVector:
    """Sweep the rows of ``q`` over the RIS and collect one reported CCI per pattern.

    ``quant=None`` bypasses quantization. Reports are normalized by ``scale``
    (default: the scenario's RMS level) before quantization.
    """
    if q.num_elements != scn.num_elements:
        raise ValueError(f"sensing matrix has {q.num_elements} columns, channel has {scn.num_elements} elements")
    scale = scn.rms_level if scale is None else scale
    sounder = ChannelSounder(scn, noise_var, seed, grid_config)
    patterns = q.patterns()
    y = np.array([report_roundtrip(sounder.measure(pc), quant, scale) for pc in patterns])
    return MeasurementVector(y, patterns)


def _remove_global_phase(h: np.ndarray) -> tuple[np.ndarray, float]:
    total = np.sum(h)
    phi = float(np.angle(total)) if total != 0 else 0.0
    aligned = h * np.exp(-1j * phi)
    return aligned, phi


def hadamard_estimate(y, p: int | None = None) -> tuple[np.ndarray, float]:
    """Closed-form inverse ``H^T y / P`` with the global phase removed; returns ``(g, phi)``."""
    y = check_complex_vector(y, "y", p)
    h = hadamard_matrix(y.size)
    return _remove_global_phase(h.T @ y / y.size)


def hadamard_optimize(y, p: int | None = None) -> PhaseConfig:
    if isinstance(y, MeasurementVector):
        y = y.y
    g, _ = hadamard_estimate(y, p)
    return PhaseConfig((g.real < 0).astype(np.uint8))


@dataclass(eq=False)
class OmpResult:
    support: list[int]
    g: np.ndarray
    h: np.ndarray
    phi: float
    beta: PhaseConfig
    residual_norms: list[float] = field(default_factory=list)
    regularized: bool = False
    degenerate: bool = False


def _least_squares(za: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    gram = za.conj().T @ za
    rhs = za.conj().T @ y
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        gram = gram + RIDGE * np.eye(gram.shape[0])
        return np.linalg.solve(gram, rhs), True
    return np.linalg.solve(gram, rhs), False


def omp_recover(y, dictionary: np.ndarray, sparsity: int, dft: np.ndarray) -> OmpResult:
    """Greedy sparse recovery of the angular channel followed by phase-bit quantization.

    Atoms are scored by ``|z_j^H r|^2 / z_j^H z_j``; already selected atoms
    are excluded and ties go to the lowest index.
    """
    y = check_complex_vector(y, "y", dictionary.shape[0])
    n_atoms = dictionary.shape[1]
    if not 1 <= sparsity <= n_atoms:
        raise ValueError(f"sparsity must be in [1, {n_atoms}]")
    energy = np.sum(np.abs(dictionary) ** 2, axis=0)
    r = y.copy()
    support: list[int] = []
    norms = [float(np.linalg.norm(r))]
    regularized = False
    g_act = np.zeros(0, dtype=np.complex128)
    for _ in range(sparsity):
        rho = np.abs(dictionary.conj().T @ r) ** 2 / np.where(energy > 0, energy, np.inf)
        rho[support] = -np.inf
        support.append(int(np.argmax(rho)))
        za = dictionary[:, support]
        g_act, reg = _least_squares(za, y)
        regularized |= reg
        r = y - za @ g_act
        norms.append(float(np.linalg.norm(r)))
    g = np.zeros(n_atoms, dtype=np.complex128)
    g[support] = g_act
    h = dft.conj().T @ g
    aligned, phi = _remove_global_phase(h)
    degenerate = not np.any(y)
    if regularized:
        warnings.warn("rank-deficient OMP subproblem; ridge-regularized", RuntimeWarning, stacklevel=2)
    return OmpResult(support, g, aligned, phi, PhaseConfig((aligned.real < 0).astype(np.uint8)),
                     norms, regularized, degenerate)


def omp_optimize(y, q: SensingMatrix, dft: np.ndarray, params: OmpParams) -> PhaseConfig:
    if isinstance(y, MeasurementVector):
        y = y.y
    if q.num_pilots != params.pilots:
        raise ValueError(f"sensing matrix has {q.num_pilots} rows, expected {params.pilots} pilots")
    dictionary = q.q @ np.conj(dft)
    return omp_recover(y, dictionary, params.sparsity, dft).beta


class HadamardOptimizer(BaseEstimator):
    """Phase optimizer fitted on a full Hadamard sweep.

    ``X`` must be a Sylvester Hadamard matrix (rows in sweep order) and
    ``y`` the complex CCI measured under each row.
    """

    def fit(self, X, y):
        X = check_sign_matrix(X)
        p = X.shape[1]
        check_power_of_two(p, "element count")
        if not np.array_equal(X, hadamard_matrix(p)):
            raise ValueError("X is not the Sylvester Hadamard sweep of order %d" % p)
        y = check_complex_vector(y, "y", p)
        self.coef_, self.phase_ = hadamard_estimate(y)
        self.beta_ = (self.coef_.real < 0).astype(np.uint8)
        self.n_features_in_ = p
        self.n_measurements_ = p
        return self

    def predict(self, X):
        """Predicted measurement (up to the removed global phase) under each pattern row."""
        check_is_fitted(self, "coef_")
        X = check_sign_matrix(X, n_cols=self.n_features_in_)
        return X @ (self.coef_ * np.exp(1j * self.phase_))

    def phase_config(self) -> PhaseConfig:
        check_is_fitted(self, "beta_")
        return PhaseConfig(self.beta_)


class OmpOptimizer(BaseEstimator):
    """Phase optimizer recovering a ``sparsity``-sparse angular channel from any +/-1 sweep."""

    def __init__(self, sparsity: int = 8, x_elems: int = 8, y_elems: int = 8):
        self.sparsity = sparsity
        self.x_elems = x_elems
        self.y_elems = y_elems

    def fit(self, X, y):
        geom = RisGeometry(self.x_elems, self.y_elems)
        X = check_sign_matrix(X, n_cols=geom.total)
        OmpParams(X.shape[0], self.sparsity)
        y = check_complex_vector(y, "y", X.shape[0])
        dft = build_dft(geom)
        result = omp_recover(y, X @ np.conj(dft), self.sparsity, dft)
        self.result_ = result
        self.support_ = np.array(result.support)
        self.coef_ = result.h
        self.phase_ = result.phi
        self.beta_ = result.beta.beta
        self.n_features_in_ = geom.total
        self.n_measurements_ = X.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_sign_matrix(X, n_cols=self.n_features_in_)
        return X @ (self.coef_ * np.exp(1j * self.phase_))

    def phase_config(self) -> PhaseConfig:
        check_is_fitted(self, "beta_")
        return PhaseConfig(self.beta_)
