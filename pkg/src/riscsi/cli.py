"""Command-line entry point: ``riscsi {simulate,pdf,codec,oracle}``.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 configuration error.
The default output directory is taken from ``RISCSI_OUTPUT_DIR`` (else the
current directory). All randomness derives from ``--seed`` (default 0).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from ._toml import ConfigError
from .grid import BwpConfig, CsiRsConfig
from .report import (
    CsiReport,
    QuantizerSpec,
    QuantizedCci,
    ReportVariant,
    from_frame,
    pack,
    to_frame,
    unpack,
)
from .ricsim import (
    ExperimentPlan,
    MethodSpec,
    ScenarioParams,
    format_results_csv,
    format_summary_csv,
    gnuplot_script,
    pdf_experiment,
    run_plan,
)
from .ris import EXHAUSTIVE_MAX_ELEMS, RisGeometry, exhaustive_best, synthesize_scenario

OUTPUT_DIR_ENV = "RISCSI_OUTPUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
DEFAULT_SEED = 0

log = logging.getLogger("riscsi")


@dataclass
class CliConfig:
    subcommand: str
    plan_path: Path | None
    output_path: Path | None
    seed: int
    verbosity: int


class UsageError(Exception):
    pass


def _bits_arg(text: str):
    if text.lower() in ("none", "inf", "raw"):
        return None
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riscsi", description="CSI-RS channel reporting and RIS optimization simulator")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
    parser.add_argument("--out-dir", type=Path, default=None,
                        help=f"default directory for outputs (env {OUTPUT_DIR_ENV}, else cwd)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment plan and write a results CSV")
    sim.add_argument("--plan", type=Path, help="TOML plan file; flags below are ignored when given")
    sim.add_argument("--method", action="append", help="hadamard | omp (repeatable)")
    sim.add_argument("--pilots", type=int, default=16, help="OMP pilot count W")
    sim.add_argument("--sparsity", type=int, default=8, help="OMP target sparsity S")
    sim.add_argument("--cci-bits", type=_bits_arg, action="append", help="bits per component, or 'none' (repeatable)")
    sim.add_argument("--trials", type=int, default=25)
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sim.add_argument("--elements", type=int, default=64, help="RIS element count (nearly square layout)")
    sim.add_argument("--noise-var", type=float, default=30.0, help="per-RE noise relative to RIS RMS power")
    sim.add_argument("--emulate-grid", action="store_true", help="synthesize full slots instead of the fast path")
    sim.add_argument("--jobs", type=int, default=1, help="parallel plan cells")
    sim.add_argument("--out", type=Path, help="results CSV path (default <out-dir>/results.csv)")
    sim.add_argument("--plot-script", type=Path, help="also write a gnuplot script for the summary")

    pdf = sub.add_parser("pdf", help="histogram of per-RE channel amplitudes")
    pdf.add_argument("--fraction", type=float, default=0.5, help="scheduled RB fraction")
    pdf.add_argument("--trials", type=int, default=20, help="slots")
    pdf.add_argument("--amplitude", type=float, default=0.06)
    pdf.add_argument("--bins", type=int, default=48)
    pdf.add_argument("--max-amplitude", type=float, default=0.12)
    pdf.add_argument("--prbs", type=int, default=106)
    pdf.add_argument("--seed", type=int, default=DEFAULT_SEED)
    pdf.add_argument("--out", type=Path, help="histogram CSV path (default <out-dir>/pdf.csv)")

    codec = sub.add_parser("codec", help="pack or unpack CSI reports")
    csub = codec.add_subparsers(dest="action", required=True)
    cpack = csub.add_parser("pack", help="pack fields and print the frame as hex")
    cunpack = csub.add_parser("unpack", help="decode a hex frame")
    for p in (cpack, cunpack):
        p.add_argument("--variant", choices=[v.value for v in ReportVariant], default="ris")
        p.add_argument("--cci-bits", type=int, default=4)
        p.add_argument("--pmi-bits", type=int, default=0)
    for name in ("cri", "ri", "cqi", "rsrp-idx", "i1", "pmi", "re", "im"):
        cpack.add_argument(f"--{name}", type=int, default=0)
    cunpack.add_argument("hex", help="frame bytes as hex")

    oracle = sub.add_parser("oracle", help="exhaustive best phase configuration for a random scenario")
    oracle.add_argument("--p", type=int, required=True, help=f"element count (<= {EXHAUSTIVE_MAX_ELEMS})")
    oracle.add_argument("--sparsity", type=int, help="angular sparsity (default: all bins)")
    oracle.add_argument("--seed", type=int, default=DEFAULT_SEED)
    return parser


def _out_dir(args) -> Path:
    if args.out_dir is not None:
        return args.out_dir
    return Path(os.environ.get(OUTPUT_DIR_ENV, "."))


def _config(args) -> CliConfig:
    out = getattr(args, "out", None)
    return CliConfig(args.command, getattr(args, "plan", None), out, getattr(args, "seed", DEFAULT_SEED), args.verbose)


def _plan_from_flags(args) -> ExperimentPlan:
    methods = []
    for m in args.method or ["hadamard"]:
        if m.strip().lower() == "omp":
            methods.append(f"omp({args.pilots},{args.sparsity})")
        else:
            methods.append(m)
    geom = RisGeometry.from_total(args.elements)
    scen = ScenarioParams("cli", geom.x_elems, geom.y_elems, noise_var=args.noise_var,
                          emulate_grid=args.emulate_grid)
    return ExperimentPlan([scen], methods, args.cci_bits or [8], args.trials, args.seed)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_simulate(args) -> int:
    if args.plan is not None:
        if not args.plan.is_file():
            raise ConfigError(f"plan file not found: {args.plan}")
        plan = ExperimentPlan.from_file(args.plan)
    else:
        try:
            plan = _plan_from_flags(args)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    out = args.out or _out_dir(args) / "results.csv"
    result = run_plan(plan, n_jobs=args.jobs)
    summary_path = out.with_name(out.stem + "_summary.csv")
    _write(out, format_results_csv(result.rows))
    _write(summary_path, format_summary_csv(result.summary))
    if args.plot_script:
        _write(args.plot_script, gnuplot_script(str(summary_path), [MethodSpec.parse(m).label() for m in plan.methods]))
    print(f"{'scenario':<10} {'method':<12} {'bits':>5} {'gain dB':>9} {'meas':>6} {'fail':>5}")
    for s in result.summary:
        bits = "none" if s.cci_bits is None else s.cci_bits
        print(f"{s.scenario:<10} {s.method:<12} {bits!s:>5} {s.mean_gain_db:9.3f} {s.mean_measurements:6.1f} {s.failures:5d}")
    print(f"wrote {out} and {summary_path}")
    return EXIT_RUNTIME if any(r.error for r in result.rows) else EXIT_OK


def cmd_pdf(args) -> int:
    cfg = CsiRsConfig.row2(BwpConfig(args.prbs))
    res = pdf_experiment(cfg, args.fraction, args.trials, amplitude=args.amplitude, bins=args.bins,
                         max_amplitude=args.max_amplitude, seed=args.seed)
    out = args.out or _out_dir(args) / "pdf.csv"
    rows = ["bin_lo,bin_hi,mass"] + [f"{lo:.6f},{hi:.6f},{m:.6f}"
                                     for lo, hi, m in zip(res.edges[:-1], res.edges[1:], res.mass)]
    _write(out, "\n".join(rows) + "\n")
    print(f"zero-bin mass {res.zero_mass:.4f} (expected {res.expected_zero_mass:.4f})")
    print(f"signal lobe mass {res.lobe_mass:.4f} centered at {res.lobe_center:.4f} (bin width {res.bin_width:.4f})")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_codec(args) -> int:
    spec = QuantizerSpec(args.cci_bits) if args.variant == "ris" else None
    if args.action == "pack":
        cci = QuantizedCci(args.re, args.im, spec) if spec is not None else None
        report = CsiReport(args.variant, cri=args.cri, ri=args.ri, cqi=args.cqi, rsrp_idx=args.rsrp_idx,
                           i1=args.i1, pmi=args.pmi, pmi_bits=args.pmi_bits, cci=cci)
        bits = pack(report)
        print(f"bits {bits} ({len(bits)})")
        print(f"hex  {to_frame(bits).hex()}")
        return EXIT_OK
    try:
        data = bytes.fromhex(args.hex)
    except ValueError as exc:
        raise UsageError(f"not a hex string: {args.hex!r}") from exc
    report = unpack(from_frame(data), args.variant, spec, args.pmi_bits)
    fields = {"cri": report.cri, "ri": report.ri, "cqi": report.cqi, "rsrp_idx": report.rsrp_idx}
    if report.variant is ReportVariant.MIMO:
        fields.update(i1=report.i1, pmi=report.pmi)
    if report.cci is not None:
        fields.update(cci_re=report.cci.re_code, cci_im=report.cci.im_code)
    print(" ".join(f"{k}={v}" for k, v in fields.items()))
    return EXIT_OK


def cmd_oracle(args) -> int:
    if not 1 <= args.p <= EXHAUSTIVE_MAX_ELEMS:
        raise UsageError(f"--p must be in 1..{EXHAUSTIVE_MAX_ELEMS}")
    geom = RisGeometry.from_total(args.p)
    scn = synthesize_scenario(geom, args.sparsity or args.p, seed=args.seed)
    cfg, power = exhaustive_best(scn)
    print(f"beta {cfg.to_bits()}")
    print(f"|h|^2 {power:.12g}")
    return EXIT_OK


_COMMANDS = {"simulate": cmd_simulate, "pdf": cmd_pdf, "codec": cmd_codec, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = _config(args)
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2), format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[cfg.subcommand](args)
    except UsageError as exc:
        print(f"riscsi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"riscsi: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"riscsi: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
