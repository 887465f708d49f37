"""Experiment configuration, presistence, and the experiment families.

Configurations are flat ``key = value`` text (``#`` starts a comment), so any
tooling can parse them without a dependency.  Named presets cover the five
experiment families: the validation run, the slower three-mode initial
condition, the two oscillation-parameter sweeps, and a single-run variant of
the molecular-alignment setup.  Presets carry the full production horizons;
pass overrides to shorten them.

Trajectory output is a CSV of recorded rows plus a flat-text ``.meta``
sidecar holding the schema version, the resolved configuration, the computed
spectrum and Lyapunov weight, and the abort diagnostics.  Both files are
written atomically (temp file + rename), and nothing in the pipeline draws
random numbers, so identical configurations produce byte-identical output.
"""

from __future__ import annotations

import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import COLUMN_NAMES, IntegratorSpec, Trajectory, run as run_lockstep
from .hypotheses import CouplingReport, check_hypotheses
from .metrics import h2_gap
from .operators import (
    ControlOperators,
    FeedbackParams,
    build_operators,
    gamma_for_target,
    normalize_state,
)
from .spectral import SineBasisSpec, SpectralBasis, grid_function, potential_matrix, solve_eigenbasis

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentSetup",
    "TrajectoryRecord",
    "SweepEntry",
    "SweepResult",
    "RefinementResult",
    "PRESETS",
    "SCHEMA_VERSION",
    "OUTDIR_ENV",
    "parse_config",
    "load_config",
    "config_lines",
    "build_setup",
    "run_experiment",
    "run_sweep",
    "refinement_check",
    "export_plotdata",
    "load_record",
]

SCHEMA_VERSION = 1
OUTDIR_ENV = "QSTAB_OUTDIR"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    potential: str = "harmonic_centered"
    q1: str = "x2"
    q2: str = "x"
    n_sine: int = 50
    n_modes: int = 5
    initial_state: tuple[complex, ...] = (1 + 0j, 1j)
    k: float = 0.15
    gamma: float | None = None
    gamma_target: float = 0.75
    g_kind: str = "clip"
    method: str = "strang"
    dt: float = 1e-3
    epsilon: tuple[float, ...] = (1e-3,)
    dt_per_epsilon: float | None = None
    t_final: float = 1000.0
    stride: int = 1000
    s_order: float = 1.8
    output: str = "run.csv"


# config-file key -> (field, parser); kept short and flat on purpose
def _parse_int(value: str) -> int:
    return int(value)


def _parse_float(value: str) -> float:
    return float(value)


def _parse_complex_list(value: str) -> tuple[complex, ...]:
    items = []
    for tok in value.split(","):
        tok = tok.strip().replace(" ", "")
        if not tok:
            raise ValueError("empty entry in state list")
        items.append(complex(tok.replace("i", "j")))
    return tuple(items)


def _parse_float_list(value: str) -> tuple[float, ...]:
    return tuple(float(tok.strip()) for tok in value.split(","))


_KEYS = {
    "potential": ("potential", str),
    "q1": ("q1", str),
    "q2": ("q2", str),
    "N": ("n_sine", _parse_int),
    "M": ("n_modes", _parse_int),
    "initial_state": ("initial_state", _parse_complex_list),
    "k": ("k", _parse_float),
    "gamma": ("gamma", _parse_float),
    "gamma_target": ("gamma_target", _parse_float),
    "g_kind": ("g_kind", str),
    "method": ("method", str),
    "dt": ("dt", _parse_float),
    "epsilon": ("epsilon", _parse_float_list),
    "dt_per_epsilon": ("dt_per_epsilon", _parse_float),
    "T": ("t_final", _parse_float),
    "stride": ("stride", _parse_int),
    "s": ("s_order", _parse_float),
    "output": ("output", str),
}

def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse flat ``key = value`` configuration text (with optional overrides)."""
    data: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in data:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        data[key] = value
    if overrides:
        data.update({str(k): str(v) for k, v in overrides.items()})

    fields: dict[str, object] = {}
    for key, value in data.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        fieldname, parser = _KEYS[key]
        try:
            fields[fieldname] = parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
    cfg = ExperimentConfig(**fields)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    try:
        grid_function(cfg.potential)
        grid_function(cfg.q1)
        grid_function(cfg.q2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.n_sine < 1:
        raise ConfigError("N must be positive")
    if not 1 <= cfg.n_modes <= cfg.n_sine:
        raise ConfigError(f"M={cfg.n_modes} must satisfy 1 <= M <= N={cfg.n_sine}")
    if len(cfg.initial_state) > cfg.n_modes:
        raise ConfigError(
            f"initial state has {len(cfg.initial_state)} entries but M={cfg.n_modes}"
        )
    if not any(abs(z) > 0.0 for z in cfg.initial_state):
        raise ConfigError("initial state must be nonzero")
    if cfg.k <= 0.0:
        raise ConfigError("k must be positive")
    if cfg.gamma is not None and cfg.gamma <= 0.0:
        raise ConfigError("gamma must be positive")
    if cfg.gamma_target <= 0.0:
        raise ConfigError("gamma_target must be positive")
    if cfg.g_kind not in ("clip", "smooth"):
        raise ConfigError("g_kind must be 'clip' or 'smooth'")
    if cfg.method not in ("euler", "strang"):
        raise ConfigError("method must be 'euler' or 'strang'")
    if cfg.dt <= 0.0:
        raise ConfigError("dt must be positive")
    if any(e < 0.0 for e in cfg.epsilon):
        raise ConfigError("epsilon values must be nonnegative")
    if len(cfg.epsilon) == 0:
        raise ConfigError("epsilon list must not be empty")
    if cfg.dt_per_epsilon is not None and not 0.0 < cfg.dt_per_epsilon <= 1.0:
        raise ConfigError("dt_per_epsilon must lie in (0, 1]")
    if cfg.t_final <= 0.0:
        raise ConfigError("T must be positive")
    if cfg.stride < 1:
        raise ConfigError("stride must be a positive integer")
    if cfg.s_order < 0.0:
        raise ConfigError("s must be nonnegative")


def load_config(source: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Load a configuration from a preset name or a file path."""
    if source in PRESETS:
        return parse_config(PRESETS[source], overrides)
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"{source!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")
    return parse_config(path.read_text(), overrides)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _fmt_complex(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def config_lines(cfg: ExperimentConfig) -> list[str]:
    """Resolved configuration as flat ``key = value`` lines (re-parseable)."""
    lines = []
    for key, (fieldname, _) in _KEYS.items():
        value = getattr(cfg, fieldname)
        if value is None:
            continue
        if fieldname == "initial_state":
            text = ", ".join(_fmt_complex(z) for z in value)
        elif fieldname == "epsilon":
            text = ", ".join(_fmt(e) for e in value)
        elif isinstance(value, float):
            text = _fmt(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return lines


@dataclass
class ExperimentSetup:
    """Compiled inputs of a run: basis, operators, feedback parameters, state."""

    config: ExperimentConfig
    basis: SpectralBasis
    ops: ControlOperators
    params: FeedbackParams
    x0: np.ndarray


def build_setup(cfg: ExperimentConfig) -> ExperimentSetup:
    """Build the spectral basis, control operators, and feedback parameters."""
    v = grid_function(cfg.potential)
    q1 = grid_function(cfg.q1)
    q2 = grid_function(cfg.q2)
    b = potential_matrix(v, SineBasisSpec(cfg.n_sine))
    basis = solve_eigenbasis(b, cfg.n_modes)
    ops = build_operators(basis, q1, q2)
    x0 = np.zeros(cfg.n_modes, dtype=complex)
    x0[: len(cfg.initial_state)] = cfg.initial_state
    x0 = normalize_state(x0)
    if cfg.gamma is not None:
        gamma = cfg.gamma
    else:
        try:
            gamma = gamma_for_target(x0, basis.eigenvalues, cfg.gamma_target)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    params = FeedbackParams(k=cfg.k, gamma=gamma, g_kind=cfg.g_kind)
    return ExperimentSetup(config=cfg, basis=basis, ops=ops, params=params, x0=x0)


@dataclass
class TrajectoryRecord:
    """A persisted run: header metadata plus the recorded rows."""

    header: dict[str, str]
    data: np.ndarray
    csv_path: Path | None = None
    meta_path: Path | None = None

    @property
    def aborted(self) -> bool:
        return self.header.get("aborted", "false") == "true"

    @property
    def abort_reason(self) -> str:
        return self.header.get("abort_reason", "")

    def column(self, name: str) -> np.ndarray:
        return self.data[:, COLUMN_NAMES.index(name)]


def _resolve_output(name: str, outdir: str | os.PathLike | None) -> Path:
    path = Path(name)
    if path.is_absolute():
        return path
    base = outdir if outdir is not None else os.environ.get(OUTDIR_ENV, ".")
    return Path(base) / path


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_record(
    setup: ExperimentSetup,
    spec: IntegratorSpec,
    traj: Trajectory,
    csv_path: Path,
) -> TrajectoryRecord:
    header: dict[str, str] = {
        "schema_version": str(SCHEMA_VERSION),
        "code_version": __version__,
        "columns": ",".join(COLUMN_NAMES),
        "rows": str(traj.data.shape[0]),
        "aborted": "true" if traj.aborted else "false",
        "abort_reason": traj.abort_reason,
        "abort_step": str(traj.abort_step),
        "abort_value": _fmt(traj.abort_value) if traj.aborted else "0",
        "gamma": _fmt(setup.params.gamma),
        "lambda": ",".join(_fmt(x) for x in setup.basis.eigenvalues),
        "degenerate_spectrum": "true" if setup.basis.degenerate else "false",
        "run_dt": _fmt(spec.dt),
        "run_epsilon": _fmt(spec.epsilon),
        "sup_gap": _fmt(traj.sup_gap),
        "final_gap": _fmt(traj.tail_gap),
        "final_gap_instant": _fmt(h2_gap(traj.x_av, traj.x_eps, setup.ops.h0_diag)),
    }

    lines = [f"{key} = {value}" for key, value in header.items()]
    lines.append("# resolved configuration")
    lines.extend(config_lines(setup.config))
    meta_text = "\n".join(lines) + "\n"

    csv_lines = [",".join(COLUMN_NAMES)]
    for row in traj.data:
        csv_lines.append(",".join(_fmt(x) for x in row))
    csv_text = "\n".join(csv_lines) + "\n"

    meta_path = csv_path.with_name(csv_path.name + ".meta")
    _atomic_write(csv_path, csv_text)
    _atomic_write(meta_path, meta_text)
    return TrajectoryRecord(header=header, data=traj.data.copy(), csv_path=csv_path, meta_path=meta_path)


def run_experiment(
    cfg: ExperimentConfig,
    outdir: str | os.PathLike | None = None,
    setup: ExperimentSetup | None = None,
) -> TrajectoryRecord:
    """Run a single lockstep experiment and persist its trajectory."""
    if len(cfg.epsilon) != 1:
        raise ConfigError("config defines an epsilon sweep; use run_sweep")
    if setup is None:
        setup = build_setup(cfg)
    eps = cfg.epsilon[0]
    dt = cfg.dt_per_epsilon * eps if cfg.dt_per_epsilon is not None else cfg.dt
    try:
        spec = IntegratorSpec(method=cfg.method, dt=dt, epsilon=eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    traj = run_lockstep(
        setup.x0,
        setup.ops,
        setup.params,
        spec,
        t_final=cfg.t_final,
        stride=cfg.stride,
        s_order=cfg.s_order,
    )
    csv_path = _resolve_output(cfg.output, outdir)
    return _write_record(setup, spec, traj, csv_path)


@dataclass
class SweepEntry:
    epsilon: float
    record: TrajectoryRecord | None = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.record is not None and not self.record.aborted

    @property
    def sup_gap(self) -> float:
        if self.record is None:
            return math.nan
        return float(self.record.header["sup_gap"])

    @property
    def final_gap(self) -> float:
        if self.record is None:
            return math.nan
        return float(self.record.header["final_gap"])


@dataclass
class SweepResult:
    entries: list[SweepEntry]
    summary_path: Path | None = None

    def entry(self, eps: float) -> SweepEntry:
        for e in self.entries:
            if e.epsilon == eps:
                return e
        raise KeyError(f"no sweep entry for epsilon={eps!r}")

    def sup_ratio(self, eps_a: float, eps_b: float) -> float:
        return self.entry(eps_a).sup_gap / self.entry(eps_b).sup_gap

    def final_ratio(self, eps_a: float, eps_b: float) -> float:
        return self.entry(eps_a).final_gap / self.entry(eps_b).final_gap


def run_sweep(
    cfg: ExperimentConfig,
    outdir: str | os.PathLike | None = None,
    max_workers: int | None = None,
) -> SweepResult:
    """Run one trajectory per epsilon value and summarize the trajectory gaps.

    Runs execute concurrently (they share only immutable inputs); per-run
    failures are isolated and marked in the summary instead of propagating.
    """
    if len(cfg.epsilon) < 2:
        raise ConfigError("sweep needs at least two epsilon values")
    if any(e <= 0.0 for e in cfg.epsilon):
        raise ConfigError("sweep epsilon values must be positive")
    setup = build_setup(cfg)
    out = Path(cfg.output)

    def one(index: int, eps: float) -> TrajectoryRecord:
        name = f"{out.stem}_eps{eps:g}{out.suffix or '.csv'}"
        sub = replace(cfg, epsilon=(eps,), output=str(out.parent / name))
        return run_experiment(sub, outdir=outdir, setup=setup)

    entries = [SweepEntry(epsilon=e) for e in cfg.epsilon]
    workers = max_workers or min(len(cfg.epsilon), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(one, i, e): i for i, e in enumerate(cfg.epsilon)}
        for future, i in futures.items():
            try:
                entries[i].record = future.result()
                if entries[i].record.aborted:
                    entries[i].error = f"aborted: {entries[i].record.abort_reason}"
            except Exception as exc:  # per-run isolation
                entries[i].error = f"{type(exc).__name__}: {exc}"

    lines = ["epsilon,status,sup_gap,final_gap"]
    for e in sorted(entries, key=lambda s: -s.epsilon):
        status = "ok" if e.ok else (e.error or "failed")
        lines.append(f"{_fmt(e.epsilon)},{status},{_fmt(e.sup_gap)},{_fmt(e.final_gap)}")
    ordered = sorted(entries, key=lambda s: -s.epsilon)
    lines.append("# pairwise gap ratios (larger epsilon over smaller)")
    lines.append("epsilon_a,epsilon_b,sup_gap_ratio,final_gap_ratio")
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            a, b = ordered[i], ordered[j]
            if a.ok and b.ok and b.sup_gap > 0.0 and b.final_gap > 0.0:
                lines.append(
                    f"{_fmt(a.epsilon)},{_fmt(b.epsilon)},"
                    f"{_fmt(a.sup_gap / b.sup_gap)},{_fmt(a.final_gap / b.final_gap)}"
                )
    summary_name = out.parent / f"{out.stem}_sweep{out.suffix or '.csv'}"
    summary_path = _resolve_output(str(summary_name), outdir)
    _atomic_write(summary_path, "\n".join(lines) + "\n")
    return SweepResult(entries=entries, summary_path=summary_path)


@dataclass
class RefinementResult:
    records: dict[int, TrajectoryRecord]
    comparisons: list[tuple[int, int, float, float, float]]
    # entries: (m_a, m_b, sup |dL|, sup |d dist_av|, sup |d dist_eps|)

    def sup_lyapunov_diff(self, m_a: int, m_b: int) -> float:
        for a, b, dl, _, _ in self.comparisons:
            if {a, b} == {m_a, m_b} or (a == m_a and b == m_b):
                return dl
        raise KeyError(f"no comparison for M pair ({m_a}, {m_b})")


def refinement_check(
    cfg: ExperimentConfig,
    m_values: list[int],
    outdir: str | os.PathLike | None = None,
) -> RefinementResult:
    """Run the same experiment at several truncation levels and compare curves."""
    if len(m_values) < 2:
        raise ConfigError("refinement check needs at least two M values")
    out = Path(cfg.output)
    records: dict[int, TrajectoryRecord] = {}
    for m in m_values:
        name = f"{out.stem}_M{m}{out.suffix or '.csv'}"
        sub = replace(cfg, n_modes=m, output=str(out.parent / name))
        records[m] = run_experiment(sub, outdir=outdir)
    comparisons = []
    ms = sorted(set(m_values))
    for i in range(len(ms)):
        for j in range(i + 1, len(ms)):
            ra, rb = records[ms[i]], records[ms[j]]
            n = min(ra.data.shape[0], rb.data.shape[0])
            dl = float(np.max(np.abs(ra.column("lyapunov_av")[:n] - rb.column("lyapunov_av")[:n])))
            dda = float(np.max(np.abs(ra.column("dist_av")[:n] - rb.column("dist_av")[:n])))
            dde = float(np.max(np.abs(ra.column("dist_eps")[:n] - rb.column("dist_eps")[:n])))
            comparisons.append((ms[i], ms[j], dl, dda, dde))
    if len(set(m_values)) == 1:
        m = ms[0]
        comparisons.append((m, m, 0.0, 0.0, 0.0))
    return RefinementResult(records=records, comparisons=comparisons)


def load_record(csv_path: str | os.PathLike) -> TrajectoryRecord:
    """Read a persisted trajectory (CSV plus its ``.meta`` sidecar)."""
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise FileNotFoundError(f"no record at {csv_path}")
    with csv_path.open() as handle:
        header_line = handle.readline().strip()
        if header_line.split(",") != list(COLUMN_NAMES):
            raise ValueError(f"{csv_path} does not carry the expected columns")
        data = np.loadtxt(handle, delimiter=",", ndmin=2)
    if data.size and data.shape[1] != len(COLUMN_NAMES):
        raise ValueError(f"{csv_path} has {data.shape[1]} columns, expected {len(COLUMN_NAMES)}")
    header: dict[str, str] = {}
    meta_path = csv_path.with_name(csv_path.name + ".meta")
    if meta_path.is_file():
        for raw in meta_path.read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line or "=" not in line:
                continue
            key, _, value = line.partition("=")
            header.setdefault(key.strip(), value.strip())
    return TrajectoryRecord(header=header, data=data, csv_path=csv_path, meta_path=meta_path)


_EXPORT_SERIES = (
    ("lyapunov", "lyapunov_av", "Lyapunov function of the averaged system"),
    ("dist_av", "dist_av", "H^s distance to the ground state, averaged system"),
    ("dist_eps", "dist_eps", "H^s distance to the ground state, oscillating system"),
    ("h2gap", "gap_h2", "H^2 gap between averaged and oscillating states"),
)


def export_plotdata(
    record: TrajectoryRecord | str | os.PathLike,
    outdir: str | os.PathLike | None = None,
) -> list[Path]:
    """Write plot-ready two-column series files for the standard panels."""
    if not isinstance(record, TrajectoryRecord):
        record = load_record(record)
    if record.csv_path is None:
        raise ValueError("record has no backing file to derive series names from")
    if record.data.size == 0:
        raise ValueError("record holds no rows")
    stem = record.csv_path.stem
    t = record.column("t")
    paths = []
    for suffix, column, label in _EXPORT_SERIES:
        series = record.column(column)
        lines = [f"# t  {label}"]
        lines.extend(f"{_fmt(ti)} {_fmt(vi)}" for ti, vi in zip(t, series))
        path = _resolve_output(f"{stem}_{suffix}.dat", outdir)
        _atomic_write(path, "\n".join(lines) + "\n")
        paths.append(path)
    return paths


PRESETS: dict[str, str] = {
    # Validation family: centered quadratic well, quadratic and linear moments,
    # two-mode initial state, Lyapunov weight solved so L(x0) = 3/4.
    "fig1": """
potential = harmonic_centered
q1 = x2
q2 = x
N = 50
M = 5
initial_state = 1, 1j
k = 0.15
gamma_target = 0.75
g_kind = clip
method = strang
dt = 1e-3
epsilon = 1e-3
T = 1000
stride = 1000
s = 1.8
output = fig1.csv
""",
    # Slower three-mode initial condition; needs the longer horizon.
    "fig2": """
potential = harmonic_centered
q1 = x2
q2 = x
N = 50
M = 5
initial_state = 1, 1, 1j
k = 0.15
gamma_target = 0.75
g_kind = clip
method = strang
dt = 1e-3
epsilon = 1e-3
T = 5000
stride = 1000
s = 1.8
output = fig2.csv
""",
    # Oscillation-parameter sweep on the validation setup.  Note the two
    # sweep families deliberately use different horizons: T = 500 here,
    # T = 1000 for the slower molecular-alignment setup below; compare gap
    # ratios within one family only.
    "fig3-4": """
potential = harmonic_centered
q1 = x2
q2 = x
N = 50
M = 5
initial_state = 1, 1j
k = 0.15
gamma_target = 0.75
g_kind = clip
method = strang
epsilon = 1e-3, 1e-4
dt = 1e-4
dt_per_epsilon = 1   # per-run dt = epsilon
T = 500
stride = 1000
s = 1.8
output = fig3-4.csv
""",
    # Molecular-alignment-inspired moments (cos x and cos 2x); stabilization
    # is slower here, hence T = 1000.
    "fig5-6": """
potential = harmonic_centered
q1 = cosx
q2 = cos2x
N = 50
M = 5
initial_state = 1, 1j
k = 0.15
gamma_target = 0.75
g_kind = clip
method = strang
epsilon = 1e-3, 1e-4
dt = 1e-4
dt_per_epsilon = 1   # per-run dt = epsilon
T = 1000
stride = 1000
s = 1.8
output = fig5-6.csv
""",
    # Single-run variant of the molecular-alignment setup.
    "hcn": """
potential = harmonic_centered
q1 = cosx
q2 = cos2x
N = 50
M = 5
initial_state = 1, 1j
k = 0.15
gamma_target = 0.75
g_kind = clip
method = strang
dt = 1e-3
epsilon = 1e-3
T = 1000
stride = 1000
s = 1.8
output = hcn.csv
""",
}
