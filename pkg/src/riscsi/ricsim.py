"""Closed-loop RIC emulation and the Monte Carlo experiment harness.

One episode runs the whole loop: the RIC side (channel-monitoring plus
RIS-optimization xApps) commands each sensing pattern over an E2-like
framed link, the RAN side applies it, measures and returns a packed CSI
report, and finally the optimized configuration is applied and scored.

Seeds: every random stream is derived from the plan's master seed as
``SeedSequence([master, scenario_index, trial, stream])`` with stream 0 for
the channel draw and stream 1 for the episode (sensing matrix and noise).
Methods and bit depths of the same trial therefore see the same channel and
noise, which makes per-trial comparisons paired.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import re
import socket
import struct
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import IntEnum

import numpy as np
from joblib import Parallel, delayed

from ._toml import ConfigError, load_toml
from .grid import SYMBOLS_PER_SLOT, CsiRsConfig, generate_pilots, synthesize_received_grid
from .optimize import (
    ChannelSounder,
    OmpParams,
    bernoulli_sensing,
    hadamard_optimize,
    hadamard_sensing,
    omp_optimize,
)
from .report import (
    DecodeError,
    QuantizerSpec,
    CsiReport,
    ReportVariant,
    dequantize,
    from_frame,
    index_to_rsrp,
    pack,
    quantize,
    rsrp_to_index,
    to_frame,
    unpack,
)
from .ris import ElementChannel, PhaseConfig, RisGeometry, build_dft, effective_channel, rsrp_db, synthesize_scenario

log = logging.getLogger(__name__)

RESULT_HEADER = [
    "scenario", "method", "pilots", "sparsity", "cci_bits", "trial", "seed",
    "baseline_rsrp_db", "optimized_rsrp_db", "gain_db", "measurements_used", "error",
]
SUMMARY_HEADER = ["scenario", "method", "cci_bits", "trials", "failures", "mean_gain_db", "std_gain_db",
                  "mean_measurements"]
DEFAULT_FULL_SCALE = 2.0


# --------------------------------------------------------------------------- framing

class MsgType(IntEnum):
    CCI_REPORT = 1
    RSRP_REPORT = 2
    RIS_COMMAND = 3


_HEADER = struct.Struct(">BI")


@dataclass(frozen=True)
class E2Frame:
    """Length-prefixed frame: ``u32 length | u8 type | u32 seq | u16 bit count | payload bytes``."""

    msg_type: MsgType
    seq: int
    payload: str

    def encode(self) -> bytes:
        body = _HEADER.pack(int(self.msg_type), self.seq) + to_frame(self.payload)
        return struct.pack(">I", len(body)) + body

    @classmethod
    def decode(cls, data: bytes) -> "E2Frame":
        if len(data) < 4 + _HEADER.size + 2:
            raise DecodeError("truncated E2 frame")
        (length,) = struct.unpack(">I", data[:4])
        if length != len(data) - 4:
            raise DecodeError(f"frame length field {length} does not match {len(data) - 4} body bytes")
        msg_type, seq = _HEADER.unpack(data[4:4 + _HEADER.size])
        try:
            msg_type = MsgType(msg_type)
        except ValueError:
            raise DecodeError(f"unknown message type {msg_type}") from None
        return cls(msg_type, seq, from_frame(data[4 + _HEADER.size:]))


class QueueEndpoint:
    """One end of an in-process duplex link."""

    def __init__(self, inbox: deque, outbox: deque):
        self._inbox, self._outbox = inbox, outbox

    def send(self, data: bytes) -> None:
        self._outbox.append(bytes(data))

    def recv(self) -> bytes:
        if not self._inbox:
            raise ConnectionError("no frame pending")
        return self._inbox.popleft()

    def close(self) -> None:
        pass


class SocketEndpoint:
    """Stream-socket end of a link; frames are delimited by their length prefix."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def _read(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("link closed mid-frame")
            buf += chunk
        return bytes(buf)

    def recv(self) -> bytes:
        head = self._read(4)
        (length,) = struct.unpack(">I", head)
        return head + self._read(length)

    def close(self) -> None:
        self.sock.close()


def queue_link() -> tuple[QueueEndpoint, QueueEndpoint]:
    a, b = deque(), deque()
    return QueueEndpoint(a, b), QueueEndpoint(b, a)


def socket_link() -> tuple[SocketEndpoint, SocketEndpoint]:
    a, b = socket.socketpair()
    return SocketEndpoint(a), SocketEndpoint(b)


def make_link(transport: str = "queue"):
    if transport == "queue":
        return queue_link()
    if transport == "socket":
        return socket_link()
    raise ValueError(f"unknown transport {transport!r}")


class E2Session:
    """Frame sender/receiver that numbers outgoing frames and checks incoming order."""

    def __init__(self, endpoint):
        self.endpoint = endpoint
        self._next_seq = 0
        self._last_rx = -1
        self.received = {t: 0 for t in MsgType}

    def send(self, msg_type: MsgType, payload: str) -> E2Frame:
        frame = E2Frame(msg_type, self._next_seq, payload)
        self._next_seq += 1
        self.endpoint.send(frame.encode())
        return frame

    def recv(self, expect: MsgType | None = None) -> E2Frame:
        frame = E2Frame.decode(self.endpoint.recv())
        if frame.seq <= self._last_rx:
            raise DecodeError(f"sequence number went from {self._last_rx} to {frame.seq}")
        self._last_rx = frame.seq
        if expect is not None and frame.msg_type is not expect:
            raise DecodeError(f"expected {expect.name}, got {frame.msg_type.name}")
        self.received[frame.msg_type] += 1
        return frame


def _raw_cci_bits(value: complex) -> str:
    word = int.from_bytes(struct.pack(">dd", value.real, value.imag), "big")
    return format(word, "0128b")


def _raw_cci_value(bits: str) -> complex:
    re_, im_ = struct.unpack(">dd", int(bits, 2).to_bytes(16, "big"))
    return complex(re_, im_)


class RanNode:
    """gNB + RIS + UE: applies commanded patterns and answers with a CSI report.

    With a quantizer, reports are RIS-variant CSI reports (RSRP + quantized
    CCI normalized by ``scale``). Without one, the CCI travels as two raw
    IEEE-754 doubles (unquantized reference runs only).
    """

    def __init__(self, endpoint, sounder: ChannelSounder, quant: QuantizerSpec | None,
                 scale: float, tx_power_db: float):
        self.session = E2Session(endpoint)
        self.sounder = sounder
        self.quant = quant
        self.scale = scale
        self.tx_power_db = tx_power_db
        self.applied: PhaseConfig | None = None

    def serve_one(self, final: bool = False) -> None:
        cmd = self.session.recv(MsgType.RIS_COMMAND)
        self.applied = PhaseConfig.from_bits(cmd.payload)
        h = self.sounder.measure(self.applied)
        rsrp_idx = rsrp_to_index(self.tx_power_db + 20 * math.log10(max(abs(h), 1e-300)))
        if final:
            self.session.send(MsgType.RSRP_REPORT, pack(CsiReport(ReportVariant.SISO, rsrp_idx=rsrp_idx)))
        elif self.quant is None:
            self.session.send(MsgType.CCI_REPORT, _raw_cci_bits(h))
        else:
            report = CsiReport(ReportVariant.RIS, rsrp_idx=rsrp_idx, cci=quantize(h / self.scale, self.quant))
            self.session.send(MsgType.CCI_REPORT, pack(report))


class RicController:
    """RIC side: forwards patterns, decodes CCI reports into the measurement vector."""

    def __init__(self, endpoint, quant: QuantizerSpec | None, scale: float):
        self.session = E2Session(endpoint)
        self.quant = quant
        self.scale = scale

    def command(self, cfg: PhaseConfig) -> None:
        self.session.send(MsgType.RIS_COMMAND, cfg.to_bits())

    def collect_cci(self) -> complex:
        frame = self.session.recv(MsgType.CCI_REPORT)
        if self.quant is None:
            return _raw_cci_value(frame.payload)
        report = unpack(frame.payload, ReportVariant.RIS, self.quant)
        return dequantize(report.cci) * self.scale

    def collect_rsrp(self) -> float:
        frame = self.session.recv(MsgType.RSRP_REPORT)
        return float(index_to_rsrp(unpack(frame.payload, ReportVariant.SISO).rsrp_idx))

    @property
    def cci_reports(self) -> int:
        return self.session.received[MsgType.CCI_REPORT]


# --------------------------------------------------------------------------- episodes

_OMP_RE = re.compile(r"^omp\s*[\(:]\s*(\d+)\s*[,:]\s*(\d+)\s*\)?$")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    pilots: int | None = None
    sparsity: int | None = None

    @classmethod
    def parse(cls, text) -> "MethodSpec":
        if isinstance(text, MethodSpec):
            return text
        t = str(text).strip().lower()
        if t == "hadamard":
            return cls("hadamard")
        m = _OMP_RE.match(t)
        if m:
            w, s = int(m.group(1)), int(m.group(2))
            OmpParams(w, s)
            return cls("omp", w, s)
        raise ValueError(f"unknown method {text!r}; use 'hadamard' or 'omp(W,S)'")

    def label(self) -> str:
        return "hadamard" if self.name == "hadamard" else f"omp({self.pilots},{self.sparsity})"


@dataclass
class ResultRow:
    scenario: str
    method: str
    pilots: int
    sparsity: int
    cci_bits: int | None
    trial: int
    seed: int
    baseline_rsrp_db: float
    optimized_rsrp_db: float
    gain_db: float
    measurements_used: int
    error: str = ""
    beta: str = field(default="", repr=False)


def calibrated_tx_power(scn: ElementChannel, baseline_rsrp_db: float) -> float:
    """Reference level placing the all-zeros configuration at ``baseline_rsrp_db``."""
    h0 = abs(effective_channel(scn, PhaseConfig.zeros(scn.num_elements)))
    if h0 == 0:
        return baseline_rsrp_db
    return baseline_rsrp_db - 20 * math.log10(h0)


def run_episode(scn: ElementChannel, method, quant: QuantizerSpec | None, seed: int, *,
                noise_var: float = 0.0, baseline_rsrp_db: float = -110.0,
                grid_config: CsiRsConfig | None = None, transport: str = "queue",
                scale: float | None = None, scenario: str = "", trial: int = 0) -> ResultRow:
    """Run acquire -> optimize -> apply over a framed link and score the result.

    ``noise_var`` is the per-RE noise variance relative to the scenario's
    RMS power, so it sets the measurement SNR independently of the draw.
    """
    spec = MethodSpec.parse(method)
    p = scn.num_elements
    scale = scn.rms_level if scale is None else scale
    sensing_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    if spec.name == "hadamard":
        sensing = hadamard_sensing(p)
    else:
        sensing = bernoulli_sensing(p, spec.pilots, int(sensing_ss.generate_state(1)[0]))
    tx_power_db = calibrated_tx_power(scn, baseline_rsrp_db)
    sounder = ChannelSounder(scn, noise_var * scn.rms_level ** 2, int(noise_ss.generate_state(1)[0]),
                             grid_config)
    ric_end, ran_end = make_link(transport)
    ric = RicController(ric_end, quant, scale)
    node = RanNode(ran_end, sounder, quant, scale, tx_power_db)
    try:
        y = []
        for cfg in sensing.patterns():
            ric.command(cfg)
            node.serve_one()
            y.append(ric.collect_cci())
        y = np.array(y)
        if spec.name == "hadamard":
            beta = hadamard_optimize(y, p)
        else:
            beta = omp_optimize(y, sensing, build_dft(scn.geometry), OmpParams(spec.pilots, spec.sparsity))
        ric.command(beta)
        node.serve_one(final=True)
        ric.collect_rsrp()
    finally:
        ric_end.close()
        ran_end.close()
    baseline = rsrp_db(scn, PhaseConfig.zeros(p), tx_power_db)
    optimized = rsrp_db(scn, beta, tx_power_db)
    return ResultRow(scenario, spec.label(), spec.pilots or p, spec.sparsity or 0,
                     quant.bits_per_component if quant else None, trial, seed,
                     baseline, optimized, optimized - baseline, ric.cci_reports, beta=beta.to_bits())


# --------------------------------------------------------------------------- plans

@dataclass
class ScenarioParams:
    """One location of the experiment.

    ``noise_var`` is per-RE noise relative to the RIS RMS power; ``direct_db``
    is the direct/scattered path power relative to the same level (``None``
    for a pure RIS link).
    """

    name: str = "near"
    x_elems: int = 8
    y_elems: int = 8
    sparsity: int = 4
    amplitude_law: str = "gaussian"
    noise_var: float = 0.0
    baseline_rsrp_db: float = -110.0
    direct_db: float | None = -10.0
    full_scale: float = DEFAULT_FULL_SCALE
    emulate_grid: bool = False
    num_prbs: int = 106

    def geometry(self) -> RisGeometry:
        return RisGeometry(self.x_elems, self.y_elems)

    def draw(self, seed: int) -> ElementChannel:
        ss = np.random.SeedSequence(seed)
        scn = synthesize_scenario(self.geometry(), self.sparsity, self.amplitude_law,
                                  int(ss.generate_state(1)[0]))
        if self.direct_db is None:
            return scn
        phase = np.random.default_rng(ss.spawn(1)[0]).random()
        direct = scn.rms_level * 10 ** (self.direct_db / 20) * np.exp(2j * np.pi * phase)
        return ElementChannel(scn.zeta, direct, scn.geometry, scn.xi)

    def grid_config(self) -> CsiRsConfig | None:
        if not self.emulate_grid:
            return None
        from .grid import BwpConfig
        return CsiRsConfig.row2(BwpConfig(self.num_prbs))


NEAR = ScenarioParams("near", noise_var=30.0, baseline_rsrp_db=-110.0)
FAR = ScenarioParams("far", noise_var=30.0 * 10 ** 0.5, baseline_rsrp_db=-115.0)


@dataclass
class ExperimentPlan:
    scenarios: list[ScenarioParams] = field(default_factory=lambda: [NEAR])
    methods: list[str] = field(default_factory=lambda: ["hadamard"])
    cci_bits: list[int | None] = field(default_factory=lambda: [8])
    trials: int = 25
    seed: int = 0
    transport: str = "queue"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.scenarios or not self.methods or not self.cci_bits:
            raise ValueError("plan needs at least one scenario, method and bit depth")
        for m in self.methods:
            spec = MethodSpec.parse(m)
            for s in self.scenarios:
                if spec.pilots is not None and spec.pilots > s.x_elems * s.y_elems:
                    raise ValueError(f"{spec.label()} uses more pilots than the {s.name} RIS has elements")
        for b in self.cci_bits:
            if b is not None:
                QuantizerSpec(b)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        data = dict(data)
        scenarios = [ScenarioParams(**s) for s in data.pop("scenario", [asdict(NEAR)])]
        bits = [None if b in ("none", "inf", 0) else int(b) for b in data.pop("cci_bits", [8])]
        return cls(scenarios=scenarios, cci_bits=bits, **data)

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        data = load_toml(path)
        try:
            return cls.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid plan {path}: {exc}") from exc

    def cells(self):
        for si, scen in enumerate(self.scenarios):
            for method in self.methods:
                for bits in self.cci_bits:
                    for trial in range(self.trials):
                        yield si, scen, method, bits, trial


def derive_seed(master: int, *counters: int) -> int:
    """Counter-based child seed: ``SeedSequence([master, *counters])`` reduced to 63 bits."""
    state = np.random.SeedSequence([master, *counters]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _run_cell(plan: ExperimentPlan, si: int, scen: ScenarioParams, method, bits, trial) -> ResultRow:
    scn_seed = derive_seed(plan.seed, si, trial, 0)
    ep_seed = derive_seed(plan.seed, si, trial, 1)
    spec = MethodSpec.parse(method)
    try:
        scn = scen.draw(scn_seed)
        quant = QuantizerSpec(bits, full_scale=scen.full_scale) if bits is not None else None
        return run_episode(scn, spec, quant, ep_seed, noise_var=scen.noise_var,
                           baseline_rsrp_db=scen.baseline_rsrp_db, grid_config=scen.grid_config(),
                           transport=plan.transport, scenario=scen.name, trial=trial)
    except Exception as exc:  # recorded per row; the plan keeps going
        log.warning("cell %s/%s/%s/%d failed: %s", scen.name, spec.label(), bits, trial, exc)
        nan = float("nan")
        return ResultRow(scen.name, spec.label(), spec.pilots or scen.x_elems * scen.y_elems,
                         spec.sparsity or 0, bits, trial, ep_seed, nan, nan, nan, 0, f"{type(exc).__name__}: {exc}")


@dataclass
class SummaryRow:
    scenario: str
    method: str
    cci_bits: int | None
    trials: int
    failures: int
    mean_gain_db: float
    std_gain_db: float
    mean_measurements: float


@dataclass
class PlanResult:
    rows: list[ResultRow]
    summary: list[SummaryRow]

    def mean_gain(self, scenario: str, method: str, cci_bits) -> float:
        for s in self.summary:
            if s.scenario == scenario and s.method == MethodSpec.parse(method).label() and s.cci_bits == cci_bits:
                return s.mean_gain_db
        raise KeyError((scenario, method, cci_bits))


def summarize(rows: list[ResultRow]) -> list[SummaryRow]:
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.scenario, r.method, r.cci_bits), []).append(r)
    out = []
    for (scen, method, bits), rs in groups.items():
        ok = [r for r in rs if not r.error]
        gains = np.array([r.gain_db for r in ok])
        out.append(SummaryRow(scen, method, bits, len(rs), len(rs) - len(ok),
                              float(gains.mean()) if ok else float("nan"),
                              float(gains.std()) if ok else float("nan"),
                              float(np.mean([r.measurements_used for r in ok])) if ok else float("nan")))
    return out


def run_plan(plan: ExperimentPlan, n_jobs: int = 1) -> PlanResult:
    cells = list(plan.cells())
    if n_jobs == 1:
        rows = [_run_cell(plan, *c) for c in cells]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(_run_cell)(plan, *c) for c in cells)
    return PlanResult(rows, summarize(rows))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def format_results_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_HEADER)
    for r in rows:
        writer.writerow([_fmt(getattr(r, k)) for k in RESULT_HEADER])
    return buf.getvalue()


def format_summary_csv(summary: list[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for s in summary:
        writer.writerow([_fmt(getattr(s, k)) for k in SUMMARY_HEADER])
    return buf.getvalue()


def gnuplot_script(summary_csv: str, methods, title: str = "Mean RSRP gain vs CCI bits") -> str:
    """Standalone gnuplot script plotting mean gain per bit depth, one curve per method."""
    names = " ".join(methods)
    return "\n".join([
        "set datafile separator ','",
        f"set title '{title}'",
        "set xlabel 'CCI bits per component'",
        "set ylabel 'mean gain [dB]'",
        "set logscale x 2",
        "set grid",
        f'methods = "{names}"',
        f"plot for [m in methods] '{summary_csv}' every ::1 "
        "using 3:(strcol(2) eq m ? $6 : NaN) with linespoints title m",
        "",
    ])


# --------------------------------------------------------------------------- amplitude PDF

@dataclass(eq=False)
class PdfResult:
    edges: np.ndarray
    mass: np.ndarray
    zero_mass: float
    expected_zero_mass: float
    lobe_center: float
    lobe_mass: float

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def density(self) -> np.ndarray:
        return self.mass / self.bin_width


def pdf_experiment(cfg: CsiRsConfig, scheduled_fraction: float, trials: int, amplitude: float = 0.06,
                   noise_var: float = 1e-7, bins: int = 48, max_amplitude: float = 0.12,
                   seed: int = 0) -> PdfResult:
    """Histogram of per-RE channel amplitude estimates over ``trials`` slots.

    Each slot draws a fresh scheduling mask and channel phase at fixed
    ``amplitude``. Transmitted symbols are unit modulus, so the per-RE LS
    magnitude equals ``|Y|``; unscheduled REs contribute noise only.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    pilots = generate_pilots(cfg, int(rng.integers(2 ** 63)))
    edges = np.linspace(0.0, max_amplitude, bins + 1)
    counts = np.zeros(bins)
    total = 0
    pilot_fraction = None
    for _ in range(trials):
        h = amplitude * np.exp(2j * np.pi * rng.random())
        grid = synthesize_received_grid(cfg, pilots, h, noise_var, scheduled_fraction, int(rng.integers(2 ** 63)))
        amp = np.abs(grid.data[0]).ravel()
        counts += np.histogram(np.minimum(amp, max_amplitude * (1 - 1e-12)), bins=edges)[0]
        total += amp.size
        pilot_fraction = grid.pilot_mask.mean()
    mass = counts / total
    centers = 0.5 * (edges[:-1] + edges[1:])
    lobe_mass = float(mass[1:].sum())
    lobe_center = float(np.sum(mass[1:] * centers[1:]) / lobe_mass) if lobe_mass > 0 else float("nan")
    expected_zero = (1 - scheduled_fraction) * (1 - pilot_fraction)
    return PdfResult(edges, mass, float(mass[0]), float(expected_zero), lobe_center, lobe_mass)


def expected_pilot_fraction(cfg: CsiRsConfig) -> float:
    from .grid import csirs_mask
    return float(csirs_mask(cfg).sum()) / (cfg.bwp.num_subcarriers * SYMBOLS_PER_SLOT)
