"""CCI quantization and bit-exact CSI report packing.

Field layout, most significant first::

    SISO  CRI(3) RI(1) CQI(4) RSRP(7)                      15 bits
    MIMO  CRI(3) RI(2) CQI(4) RSRP(7) i1(3) PMI(n)         19 + n bits
    RIS   CRI(3) RI(1) CQI(4) RSRP(7) CCI-re(b) CCI-im(b)  15 + 2b bits

CCI codes are two's complement within their ``b``-bit fields.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._validation import round_half_away

REPORT_CAP_BITS = 32
RSRP_MIN_DBM = -140
RSRP_MAX_DBM = -44


class ReportVariant(str, Enum):
    SISO = "siso"
    MIMO = "mimo"
    RIS = "ris"


class DecodeError(ValueError):
    pass


def default_step(bits: int, full_scale: float = 1.0) -> float:
    return full_scale / 2 ** (bits - 1)


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform mid-tread quantizer, ``bits_per_component`` per real/imag part.

    ``step`` defaults to ``full_scale / 2**(b-1)`` so that unit full scale
    maps onto the code range.
    """

    bits_per_component: int
    step: float | None = None
    full_scale: float = 1.0

    def __post_init__(self):
        b = self.bits_per_component
        if int(b) != b or not 1 <= b <= 8:
            raise ValueError(f"bits_per_component must be in 1..8, got {b!r}")
        if self.step is None:
            object.__setattr__(self, "step", default_step(b, self.full_scale))
        if not self.step > 0:
            raise ValueError(f"quantization step must be > 0, got {self.step!r}")

    @property
    def code_min(self) -> int:
        return -(2 ** (self.bits_per_component - 1))

    @property
    def code_max(self) -> int:
        return 2 ** (self.bits_per_component - 1) - 1

    @property
    def payload_bits(self) -> int:
        return 2 * self.bits_per_component


@dataclass(frozen=True)
class QuantizedCci:
    re_code: int
    im_code: int
    spec: QuantizerSpec

    def __post_init__(self):
        for code in (self.re_code, self.im_code):
            if not self.spec.code_min <= code <= self.spec.code_max:
                raise ValueError(f"code {code} outside [{self.spec.code_min}, {self.spec.code_max}]")


def quantize_codes(values, spec: QuantizerSpec) -> np.ndarray:
    """Elementwise ``clip(round(v / step), -2^(b-1), 2^(b-1) - 1)`` on real input."""
    codes = round_half_away(np.asarray(values, dtype=np.float64) / spec.step)
    return np.clip(codes, spec.code_min, spec.code_max).astype(np.int64)


def quantize(value: complex, spec: QuantizerSpec) -> QuantizedCci:
    """Quantize real and imaginary parts separately."""
    re, im = quantize_codes([value.real, value.imag], spec)
    return QuantizedCci(int(re), int(im), spec)


def dequantize(q: QuantizedCci) -> complex:
    return complex(q.re_code * q.spec.step, q.im_code * q.spec.step)


@dataclass(frozen=True)
class CsiReport:
    variant: ReportVariant
    cri: int = 0
    ri: int = 0
    cqi: int = 0
    rsrp_idx: int = 0
    i1: int = 0
    pmi: int = 0
    pmi_bits: int = 0
    cci: QuantizedCci | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", ReportVariant(self.variant))
        if self.variant is ReportVariant.RIS and self.cci is None:
            raise ValueError("RIS report needs a quantized CCI")


def _layout(variant: ReportVariant, cci_bits: int = 0, pmi_bits: int = 0) -> list[tuple[str, int]]:
    fields = [("cri", 3), ("ri", 2 if variant is ReportVariant.MIMO else 1), ("cqi", 4), ("rsrp_idx", 7)]
    if variant is ReportVariant.MIMO:
        fields += [("i1", 3), ("pmi", pmi_bits)]
    elif variant is ReportVariant.RIS:
        fields += [("cci_re", cci_bits), ("cci_im", cci_bits)]
    return fields


def report_length(variant, cci_bits: int = 0, pmi_bits: int = 0) -> int:
    return sum(w for _, w in _layout(ReportVariant(variant), cci_bits, pmi_bits))


def pack(report: CsiReport) -> str:
    """Pack to a ``'0'/'1'`` string, most significant field first."""
    cci_bits = report.cci.spec.bits_per_component if report.cci is not None else 0
    length = report_length(report.variant, cci_bits, report.pmi_bits)
    if report.variant is ReportVariant.RIS and length > REPORT_CAP_BITS:
        raise ValueError(f"RIS report of {length} bits exceeds the {REPORT_CAP_BITS}-bit cap")
    word = 0
    for name, width in _layout(report.variant, cci_bits, report.pmi_bits):
        if name == "cci_re":
            value = report.cci.re_code & ((1 << width) - 1)
        elif name == "cci_im":
            value = report.cci.im_code & ((1 << width) - 1)
        else:
            value = getattr(report, name)
            if not 0 <= value < (1 << width):
                raise ValueError(f"{name}={value} does not fit in {width} bits")
        word = (word << width) | value
    return format(word, f"0{length}b") if length else ""


def unpack(bits: str, variant, spec: QuantizerSpec | None = None, pmi_bits: int = 0) -> CsiReport:
    variant = ReportVariant(variant)
    if variant is ReportVariant.RIS and spec is None:
        raise ValueError("RIS reports need the quantizer spec to decode")
    cci_bits = spec.bits_per_component if spec is not None else 0
    layout = _layout(variant, cci_bits, pmi_bits)
    length = sum(w for _, w in layout)
    if len(bits) != length:
        raise DecodeError(f"{variant.value} report needs {length} bits, got {len(bits)}")
    if bits.strip("01"):
        raise DecodeError("bit string may only contain '0' and '1'")
    word = int(bits, 2) if bits else 0
    values = {}
    shift = length
    for name, width in layout:
        shift -= width
        values[name] = (word >> shift) & ((1 << width) - 1)
    cci = None
    if variant is ReportVariant.RIS:
        half = 1 << (cci_bits - 1)
        re = values.pop("cci_re")
        im = values.pop("cci_im")
        cci = QuantizedCci(re - 2 * half if re >= half else re, im - 2 * half if im >= half else im, spec)
    if variant is ReportVariant.MIMO:
        values["pmi_bits"] = pmi_bits
    return CsiReport(variant, cci=cci, **values)


def rsrp_to_index(rsrp_dbm: float) -> int:
    """Clamped 1 dB map of [-140, -44] dBm onto [0, 96]."""
    idx = int(round_half_away(rsrp_dbm - RSRP_MIN_DBM))
    return min(max(idx, 0), RSRP_MAX_DBM - RSRP_MIN_DBM)


def index_to_rsrp(idx: int) -> int:
    return RSRP_MIN_DBM + min(max(int(idx), 0), RSRP_MAX_DBM - RSRP_MIN_DBM)


@dataclass(frozen=True)
class UciBudget:
    format: str
    min_bits: int
    max_bits: int

    def fits(self, n_bits: int) -> bool:
        return n_bits <= self.max_bits


PUCCH2 = UciBudget("PUCCH2", 20, 50)
PUCCH3 = UciBudget("PUCCH3", 160, 200)


def to_frame(bits: str) -> bytes:
    """Serialize a bit string as a 2-byte big-endian bit count plus MSB-first, zero-padded bytes."""
    n = len(bits)
    if n >= 1 << 16:
        raise ValueError("bit string too long for a frame")
    pad = (-n) % 8
    word = int(bits + "0" * pad, 2) if n else 0
    return n.to_bytes(2, "big") + word.to_bytes((n + pad) // 8, "big")


def from_frame(data: bytes) -> str:
    if len(data) < 2:
        raise DecodeError("frame shorter than its header")
    n = int.from_bytes(data[:2], "big")
    body = data[2:]
    if len(body) != (n + 7) // 8:
        raise DecodeError(f"frame declares {n} bits but carries {len(body)} bytes")
    if not body:
        return ""
    word = int.from_bytes(body, "big")
    pad = len(body) * 8 - n
    if word & ((1 << pad) - 1):
        raise DecodeError("nonzero padding bits")
    return format(word >> pad, f"0{n}b")
