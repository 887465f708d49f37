"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 monitor abort,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, harness
from .harness import ConfigError
from .hypotheses import check_hypotheses
from .spectral import EigensolverError, QuadratureError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ABORT = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qstab",
        description="Ground-state stabilization experiments for a bilinearly "
        "controlled 1-D Schrodinger equation.",
    )
    parser.add_argument("--version", action="version", version=f"qstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="preset name or path to a config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry (repeatable)",
        )
        p.add_argument("--outdir", default=None, help="output directory (default: $QSTAB_OUTDIR or .)")
        return p

    add_config_command("run", "run a single experiment and write its trajectory")
    add_config_command("sweep", "run one trajectory per epsilon value and summarize gaps")
    refine = add_config_command("refine", "re-run an experiment at several truncation levels")
    refine.add_argument("--modes", required=True, help="comma-separated M values, e.g. 5,10")
    add_config_command("check-hypotheses", "scan coupling and resonance conditions")
    add_config_command("eig", "print the computed spectrum")

    export = sub.add_parser("export", help="write plot-ready series files from a trajectory")
    export.add_argument("record", help="path to a trajectory CSV")
    export.add_argument("--outdir", default=None)
    return parser


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config, _parse_overrides(args.overrides))
    record = harness.run_experiment(cfg, outdir=args.outdir)
    print(f"wrote {record.csv_path} ({record.header['rows']} rows)")
    if record.aborted:
        print(
            f"run aborted: {record.abort_reason} at step {record.header['abort_step']}",
            file=sys.stderr,
        )
        return EXIT_ABORT
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config, _parse_overrides(args.overrides))
    result = harness.run_sweep(cfg, outdir=args.outdir)
    print(f"wrote {result.summary_path}")
    for entry in sorted(result.entries, key=lambda e: -e.epsilon):
        status = "ok" if entry.ok else (entry.error or "failed")
        print(
            f"  epsilon={entry.epsilon:g}  sup_gap={entry.sup_gap:.6g}  "
            f"final_gap={entry.final_gap:.6g}  [{status}]"
        )
    if any(not e.ok for e in result.entries):
        aborted = any(e.record is not None and e.record.aborted for e in result.entries)
        return EXIT_ABORT if aborted else EXIT_NUMERICAL
    return EXIT_OK


def _cmd_refine(args) -> int:
    cfg = harness.load_config(args.config, _parse_overrides(args.overrides))
    try:
        m_values = [int(tok) for tok in args.modes.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --modes value {args.modes!r}") from exc
    result = harness.refinement_check(cfg, m_values, outdir=args.outdir)
    for m_a, m_b, dl, dda, dde in result.comparisons:
        print(
            f"M={m_a} vs M={m_b}: sup|dL|={dl:.6g}  sup|d dist_av|={dda:.6g}  "
            f"sup|d dist_eps|={dde:.6g}"
        )
    if any(rec.aborted for rec in result.records.values()):
        return EXIT_ABORT
    return EXIT_OK


def _cmd_check_hypotheses(args) -> int:
    cfg = harness.load_config(args.config, _parse_overrides(args.overrides))
    setup = harness.build_setup(cfg)
    report = check_hypotheses(setup.ops)
    m = setup.ops.n_modes
    print(f"coupling/resonance scan at truncation level M={m} (necessary conditions only)")
    print(f"  couplings to the ground state (modes 2..{m}):")
    for k in range(2, m + 1):
        print(f"    mode {k}: c1={report.c1[k-2]: .6e}  c2={report.c2[k-2]: .6e}")
    print(f"  modes missed by the first moment (|c1| < {report.coupling_tol:g}): "
          f"{list(report.j_zero) or 'none'}")
    if report.coupling_violations:
        print(f"  COUPLING VIOLATIONS (also |c2| < tol): {list(report.coupling_violations)}")
    else:
        print("  coupling condition satisfied at this truncation")
    if report.degenerate_spectrum:
        print("  WARNING: near-degenerate eigenvalues; resonance scan is unreliable")
    if report.resonance_violations:
        print(f"  RESONANCE VIOLATIONS ({len(report.resonance_violations)} quadruples):")
        for k, p, q, gap in report.resonance_violations[:20]:
            print(f"    (k={k}, p={p}, q={q}) gap={gap:.3e}")
        if len(report.resonance_violations) > 20:
            print(f"    ... {len(report.resonance_violations) - 20} more")
    else:
        print("  no resonance violations at this truncation")

    summary = [
        f"schema_version = {harness.SCHEMA_VERSION}",
        f"code_version = {__version__}",
        f"M = {m}",
        f"coupling_tol = {report.coupling_tol:.17g}",
        f"resonance_tol = {report.resonance_tol:.17g}",
        f"j_zero = {','.join(str(k) for k in report.j_zero)}",
        f"card_j_zero = {report.card_j_zero}",
        f"coupling_violations = {','.join(str(k) for k in report.coupling_violations)}",
        f"resonance_violation_count = {len(report.resonance_violations)}",
        f"degenerate_spectrum = {'true' if report.degenerate_spectrum else 'false'}",
        f"passed = {'true' if report.passed else 'false'}",
    ]
    base = Path(cfg.output)
    out = harness._resolve_output(str(base.parent / f"{base.stem}_hypotheses.txt"), args.outdir)
    harness._atomic_write(out, "\n".join(summary) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_eig(args) -> int:
    cfg = harness.load_config(args.config, _parse_overrides(args.overrides))
    setup = harness.build_setup(cfg)
    lam = setup.basis.eigenvalues
    print(f"spectrum of -d2/dx2 + {cfg.potential} on [0,1] (N={cfg.n_sine} sine modes)")
    for idx, value in enumerate(lam, start=1):
        print(f"  lambda_{idx} = {value:.12f}")
    if setup.basis.degenerate:
        print("  WARNING: near-degenerate eigenvalues detected")
    print(f"  gamma = {setup.params.gamma:.12e}")
    return EXIT_OK


def _cmd_export(args) -> int:
    paths = harness.export_plotdata(args.record, outdir=args.outdir)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "refine": _cmd_refine,
    "check-hypotheses": _cmd_check_hypotheses,
    "eig": _cmd_eig,
    "export": _cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, EigensolverError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
