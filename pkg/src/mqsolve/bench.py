"""Run configuration, model file IO, trace output, and the benchmark harness.

Artifacts are text: Matrix Market blocks under a JSON manifest for models,
CSV for traces and benchmark summaries. Trace and summary CSVs are
byte-deterministic for a fixed seed; wall-clock timings are reported in the
aligned text rendering and a separate JSON file so the CSV determinism
guarantee stays testable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .implicit import NewtonConfig, run_implicit
from .krylov import PcgConfig, Preconditioner
from .model import Model, builtin_model
from .schur import (PartitionedSystem, ScaledPatternSource, SchurOperator,
                    TransientResult, estimate_cfl, exponential_ramp,
                    run_explicit)
from .sparse import read_dense_vector, read_matrix_market, symmetric_check

__all__ = [
    "ConfigError",
    "RunConfig",
    "StrategyRow",
    "BenchmarkSummary",
    "load_model",
    "write_trace",
    "trace_bytes",
    "run_single",
    "run_benchmark",
    "TRACE_HEADER",
]

TRACE_HEADER = "t,B_probe,iters_src,iters_cpl_prev,iters_cpl_cur,basis_cols,pod_k,pod_info"

STRATEGIES = ("previous", "cspe", "pod")

ENV_PREFIX = "MQS_"


class ConfigError(ValueError):
    """Invalid run configuration or model manifest."""


def _parse_dt(value) -> float | str:
    if isinstance(value, str):
        if value.strip().lower() in ("auto", "auto-cfl"):
            return "auto"
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"dt must be a number or 'auto', got {value!r}")
    return float(value)


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


@dataclass
class RunConfig:
    """One run's worth of settings.

    Sources are layered: dataclass defaults, then a JSON config file, then
    ``MQS_``-prefixed environment variables, then explicit flag overrides.
    The model source is either the string ``builtin`` or a path to a model
    manifest (directory or manifest.json).
    """

    model: str = "builtin"
    integrator: str = "explicit"
    strategy: str = "cspe"
    dt: float | str = "auto"
    t_end: float = 0.12
    output_period: float = 1e-3
    # benchmark default; library-level solves default to 1e-8
    tol: float = 1e-6
    preconditioner: str = "jacobi"
    newton_tol: float = 1e-8
    max_newton: int = 25
    implicit_dt: float = 2.5e-4
    eps_pod: float = 1e-4
    n_pod: int = 10
    max_basis: int = 20
    seed: int = 42
    out: str = "."
    # builtin model parameters
    cells: int = 8
    h: float = 5e-3
    kappa: float = 5e6
    amps: float = 5e4
    tau: float = 0.5
    linear: bool = False
    # explicit integrator knobs
    safety: float = 0.9
    reestimate_every: int = 500
    power_iters: int = 200
    power_tol: float = 1e-4
    cache_source_solve: bool = False
    projection_target: str = "assembled-rhs"

    _PARSERS = {
        "dt": _parse_dt,
        "linear": _parse_bool,
        "cache_source_solve": _parse_bool,
    }

    def validate(self) -> "RunConfig":
        if self.integrator not in ("explicit", "implicit"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown start strategy {self.strategy!r}; "
                              f"choose from {', '.join(STRATEGIES)}")
        if not (self.t_end > 0):
            raise ConfigError("t_end must be positive")
        if not (self.output_period > 0):
            raise ConfigError("output period must be positive")
        if self.dt != "auto" and not (float(self.dt) > 0):
            raise ConfigError("dt must be positive or 'auto'")
        if not (self.tol > 0):
            raise ConfigError("tol must be positive")
        if not (self.newton_tol > 0):
            raise ConfigError("newton_tol must be positive")
        if not (self.implicit_dt > 0):
            raise ConfigError("implicit_dt must be positive")
        if not (0 < self.eps_pod < 1):
            raise ConfigError("eps_pod must lie in (0, 1)")
        if self.n_pod < 1:
            raise ConfigError("n_pod must be at least 1")
        if self.max_basis < 1:
            raise ConfigError("max_basis must be at least 1")
        if self.max_newton < 1:
            raise ConfigError("max_newton must be at least 1")
        try:
            Preconditioner(self.preconditioner)
        except ValueError:
            raise ConfigError(f"unknown preconditioner {self.preconditioner!r}")
        if self.projection_target not in ("assembled-rhs", "composed-coupling"):
            raise ConfigError(
                f"unknown projection target {self.projection_target!r}")
        if not self.model:
            raise ConfigError("model source must not be empty")
        return self

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def _coerce(cls, name: str, value):
        if name in cls._PARSERS:
            return cls._PARSERS[name](value)
        ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
        try:
            if ftype == "int":
                return int(value)
            if ftype == "float":
                return float(value)
            return str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {name}: {value!r}")

    @classmethod
    def from_sources(cls, config_file=None, env=None, overrides=None
                     ) -> "RunConfig":
        """Layer defaults < config file < environment < overrides."""
        values: dict = {}
        if config_file is not None:
            path = Path(config_file)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                loaded = json.loads(path.read_text())
            except json.JSONDecodeError as err:
                raise ConfigError(f"config file is not valid JSON: {err}")
            if not isinstance(loaded, dict):
                raise ConfigError("config file must hold a JSON object")
            for key, value in loaded.items():
                if key not in cls.field_names():
                    raise ConfigError(f"unknown config key {key!r}")
                values[key] = cls._coerce(key, value)
        env = os.environ if env is None else env
        for name in cls.field_names():
            env_key = ENV_PREFIX + name.upper()
            if env_key in env:
                values[name] = cls._coerce(name, env[env_key])
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in cls.field_names():
                raise ConfigError(f"unknown option {key!r}")
            values[key] = cls._coerce(key, value)
        return cls(**values).validate()

    def pcg_config(self) -> PcgConfig:
        return PcgConfig(rel_tol=self.tol, max_iter=5000,
                         preconditioner=Preconditioner(self.preconditioner))

    def newton_config(self) -> NewtonConfig:
        return NewtonConfig(
            tol=self.newton_tol, max_newton=self.max_newton,
            linear_solver=PcgConfig(
                rel_tol=1e-10, max_iter=50000,
                preconditioner=Preconditioner(self.preconditioner)))


def _require(manifest: dict, key: str, context: str):
    if key not in manifest:
        raise ConfigError(f"{context} is missing {key!r}")
    return manifest[key]


def load_model(path) -> tuple[PartitionedSystem, Model | None, dict]:
    """Load a model directory written by :func:`mqsolve.model.export_model`.

    Returns ``(system, model, manifest)``. When the manifest carries builtin
    parameters the model is rebuilt (restoring the nonlinearity and probe)
    and the stored blocks are checked against the rebuilt ones; otherwise the
    stored blocks define a frozen-linear system and ``model`` is None.
    """
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    directory = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"manifest is not valid JSON: {err}")
    if manifest.get("format") != "mqsolve-model":
        raise ConfigError("manifest format marker missing or unknown")
    blocks = _require(manifest, "blocks", "manifest")
    loaded = {}
    for name in ("m_c", "k_c", "k_cn", "k_n", "source_pattern"):
        entry = _require(blocks, name, "manifest blocks section")
        file_path = directory / _require(entry, "file", f"block {name!r}")
        if not file_path.exists():
            raise ConfigError(f"block {name!r} file not found: {file_path}")
        if name == "source_pattern":
            loaded[name] = read_dense_vector(file_path)
        else:
            loaded[name] = read_matrix_market(file_path)

    m_c, k_c, k_cn, k_n = (loaded["m_c"], loaded["k_c"], loaded["k_cn"],
                           loaded["k_n"])
    pattern = loaded["source_pattern"]
    n_c, n_n = k_cn.shape
    for name, block, shape in (("m_c", m_c, (n_c, n_c)),
                               ("k_c", k_c, (n_c, n_c)),
                               ("k_n", k_n, (n_n, n_n))):
        if block.shape != shape:
            raise ConfigError(f"block {name!r} has shape {block.shape}, "
                              f"expected {shape}")
    if pattern.size != n_n:
        raise ConfigError(f"block 'source_pattern' has length {pattern.size}, "
                          f"expected {n_n}")
    for name, block in (("k_c", k_c), ("k_n", k_n)):
        scale = np.abs(block.values).max() if block.nnz else 1.0
        if not symmetric_check(block, 1e-12 * scale):
            raise ConfigError(f"block {name!r} is asymmetric beyond "
                              f"a relative tolerance of 1e-12")
    waveform_info = _require(manifest, "waveform", "manifest")
    if waveform_info.get("kind") != "exponential_ramp":
        raise ConfigError(
            f"unknown waveform kind {waveform_info.get('kind')!r}")
    tau = float(_require(waveform_info, "tau", "waveform section"))

    builtin = manifest.get("builtin")
    if builtin:
        model = builtin_model(
            cells=int(builtin["cells"]), h=float(builtin["h"]),
            kappa=float(builtin["kappa"]),
            brauer=tuple(builtin["brauer"]), amps=float(builtin["amps"]),
            tau=float(builtin["tau"]), linear=bool(builtin["linear"]),
            probe_cells=builtin.get("probe_cells"))
        rebuilt = {"m_c": model.system.mc,
                   "k_c": model.system.kc_matrix(np.zeros(model.n_c)),
                   "k_cn": model.system.kcn, "k_n": model.system.kn}
        for name, ours in rebuilt.items():
            stored = loaded[name]
            same = (stored.shape == ours.shape
                    and np.array_equal(stored.row_ptr, ours.row_ptr)
                    and np.array_equal(stored.col_idx, ours.col_idx)
                    and np.array_equal(stored.values, ours.values))
            if not same:
                raise ConfigError(
                    f"stored block {name!r} disagrees with the builtin "
                    f"parameters in the manifest")
        if not np.array_equal(pattern, model.pattern_n):
            raise ConfigError("stored source pattern disagrees with the "
                              "builtin parameters in the manifest")
        return model.system, model, manifest

    source = ScaledPatternSource(pattern, exponential_ramp(tau))
    system = PartitionedSystem.linear(mc=m_c, kcn=k_cn, kn=k_n, kc=k_c,
                                      source=source)
    system.validate()
    return system, None, manifest


def _model_from_config(config: RunConfig) -> tuple[PartitionedSystem,
                                                   Model | None]:
    if config.model == "builtin":
        model = builtin_model(cells=config.cells, h=config.h,
                              kappa=config.kappa, amps=config.amps,
                              tau=config.tau, linear=config.linear)
        return model.system, model
    system, model, _ = load_model(config.model)
    return system, model


def _model_checksum(system: PartitionedSystem) -> str:
    """Stable content hash over the system blocks at the zero state."""
    pattern = getattr(system.source, "pattern", np.zeros(0))
    digest = hashlib.sha256()
    kc0 = system.kc_matrix(np.zeros(system.n_c))
    for block in (system.mc, kc0, system.kcn, system.kn):
        digest.update(np.asarray(block.shape, dtype=np.int64).tobytes())
        digest.update(block.row_ptr.tobytes())
        digest.update(block.col_idx.tobytes())
        digest.update(block.values.tobytes())
    digest.update(pattern.tobytes())
    return digest.hexdigest()


def trace_bytes(result: TransientResult) -> bytes:
    """CSV rendering of a transient result, one row per output time."""
    if result.n_rows == 0:
        raise ValueError("refusing to write an empty trace")
    lines = [TRACE_HEADER]
    for i in range(result.n_rows):
        lines.append(",".join([
            repr(float(result.times[i])),
            repr(float(result.probe_b[i])),
            repr(float(result.iters_src[i])),
            repr(float(result.iters_cpl_prev[i])),
            repr(float(result.iters_cpl_cur[i])),
            str(int(result.basis_cols[i])),
            str(int(result.pod_k[i])),
            repr(float(result.pod_info[i])),
        ]))
    return ("\n".join(lines) + "\n").encode("ascii")


def write_trace(result: TransientResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(trace_bytes(result))
    return path


def run_single(config: RunConfig) -> tuple[TransientResult, dict]:
    """Run one integrator per the config; returns (result, run metadata)."""
    config.validate()
    system, model = _model_from_config(config)
    probe = model.probe_callable() if model is not None else None
    if config.integrator == "implicit":
        dt = config.implicit_dt if config.dt == "auto" else float(config.dt)
        result = run_implicit(system, config.t_end, dt,
                              config=config.newton_config(), probe=probe,
                              output_period=config.output_period)
    else:
        result = run_explicit(
            system, config.t_end, dt=config.dt, strategy=config.strategy,
            pcg=config.pcg_config(),
            preconditioner=Preconditioner(config.preconditioner),
            output_period=config.output_period, probe=probe,
            reestimate_every=config.reestimate_every, safety=config.safety,
            power_iters=config.power_iters, power_tol=config.power_tol,
            seed=config.seed, cache_source_solve=config.cache_source_solve,
            projection_target=config.projection_target,
            max_cols=config.max_basis, n_pod=config.n_pod,
            eps_pod=config.eps_pod)
    meta = {
        "model": config.model,
        "model_checksum": _model_checksum(system),
        "integrator": config.integrator,
    }
    return result, meta


@dataclass(frozen=True)
class StrategyRow:
    """One benchmark line: iteration averages and cost counters."""

    name: str
    steps: int
    mean_iters_src: float
    mean_iters_cpl_prev: float
    mean_iters_cpl_cur: float
    operator_applies: int
    wall_seconds: float
    solver_seconds: float
    trace_sha256: str


@dataclass
class BenchmarkSummary:
    """All strategies plus the implicit reference under shared settings."""

    rows: list[StrategyRow]
    metadata: dict = field(default_factory=dict)

    _CSV_COLUMNS = ("strategy", "steps", "mean_iters_src",
                    "mean_iters_cpl_prev", "mean_iters_cpl_cur",
                    "operator_applies", "trace_sha256")

    def to_csv(self) -> str:
        """Deterministic summary: no timing columns (see module docstring)."""
        lines = [",".join(self._CSV_COLUMNS)]
        for row in self.rows:
            lines.append(",".join([
                row.name, str(row.steps),
                repr(float(row.mean_iters_src)),
                repr(float(row.mean_iters_cpl_prev)),
                repr(float(row.mean_iters_cpl_cur)),
                str(row.operator_applies), row.trace_sha256,
            ]))
        meta = self.metadata
        lines.append("")
        lines.append("# shared settings: " + json.dumps(
            {k: meta[k] for k in sorted(meta) if k not in ("timings",)},
            sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned table including (non-deterministic) wall times."""
        header = (f"{'strategy':<10} {'steps':>6} {'it/src':>8} "
                  f"{'it/prev':>8} {'it/cur':>8} {'op applies':>11} "
                  f"{'wall [s]':>9} {'solver [s]':>10}")
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append(
                f"{row.name:<10} {row.steps:>6d} {row.mean_iters_src:>8.2f} "
                f"{row.mean_iters_cpl_prev:>8.2f} "
                f"{row.mean_iters_cpl_cur:>8.2f} "
                f"{row.operator_applies:>11d} {row.wall_seconds:>9.2f} "
                f"{row.solver_seconds:>10.2f}")
        meta = self.metadata
        shared = (f"model={meta.get('model')} dt={meta.get('dt')} "
                  f"tol={meta.get('tol')} "
                  f"preconditioner={meta.get('preconditioner')} "
                  f"seed={meta.get('seed')} t_end={meta.get('t_end')}")
        lines.append("")
        lines.append("shared: " + shared)
        lines.append(f"model checksum: {meta.get('model_checksum')}")
        lines.append(f"implicit reference dt: {meta.get('implicit_dt')}")
        return "\n".join(lines) + "\n"


def _result_row(name: str, result: TransientResult) -> StrategyRow:
    agg = result.aggregates
    mean = agg.get("mean_iterations", {})
    return StrategyRow(
        name=name, steps=int(agg["steps"]),
        mean_iters_src=float(mean.get("source", agg.get(
            "mean_linear_per_newton", 0.0))),
        mean_iters_cpl_prev=float(mean.get("coupling_previous", 0.0)),
        mean_iters_cpl_cur=float(mean.get("coupling_current", 0.0)),
        operator_applies=int(agg.get("operator_applies",
                                     agg.get("linear_iterations", 0))),
        wall_seconds=float(agg["wall_seconds"]),
        solver_seconds=float(agg["solver_seconds"]),
        trace_sha256=hashlib.sha256(trace_bytes(result)).hexdigest())


def run_benchmark(config: RunConfig, out_dir) -> BenchmarkSummary:
    """Run the three start strategies plus the implicit reference.

    All explicit runs share one model, one dt (auto-estimated once unless
    the config pins it), one tolerance, and one preconditioner; equal step
    counts across strategies are asserted. Artifacts land in *out_dir*:
    ``trace_<name>.csv``, ``summary.csv``, ``summary.txt``, ``timings.json``.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    system, model = _model_from_config(config)
    probe = model.probe_callable() if model is not None else None

    if config.dt == "auto":
        op = SchurOperator(system, pcg=config.pcg_config(),
                           strategy="previous",
                           preconditioner=Preconditioner(config.preconditioner))
        estimate = estimate_cfl(op, power_iters=config.power_iters,
                                power_tol=config.power_tol,
                                safety=config.safety, seed=config.seed)
        dt = estimate.dt_max
    else:
        dt = float(config.dt)

    rows = []
    results: dict[str, TransientResult] = {}
    for strategy in STRATEGIES:
        result = run_explicit(
            system, config.t_end, dt=dt, strategy=strategy,
            pcg=config.pcg_config(),
            preconditioner=Preconditioner(config.preconditioner),
            output_period=config.output_period, probe=probe,
            reestimate_every=config.reestimate_every, safety=config.safety,
            power_iters=config.power_iters, power_tol=config.power_tol,
            seed=config.seed, cache_source_solve=config.cache_source_solve,
            projection_target=config.projection_target,
            max_cols=config.max_basis, n_pod=config.n_pod,
            eps_pod=config.eps_pod)
        results[strategy] = result
        write_trace(result, out_dir / f"trace_{strategy}.csv")
        rows.append(_result_row(strategy, result))

    step_counts = {row.steps for row in rows}
    if len(step_counts) != 1:
        raise RuntimeError(f"strategies diverged in step count: {step_counts}")

    implicit_result = run_implicit(system, config.t_end, config.implicit_dt,
                                   config=config.newton_config(), probe=probe,
                                   output_period=config.output_period)
    results["implicit"] = implicit_result
    write_trace(implicit_result, out_dir / "trace_implicit.csv")
    rows.append(_result_row("implicit", implicit_result))

    summary = BenchmarkSummary(rows=rows, metadata={
        "model": config.model,
        "model_checksum": _model_checksum(system),
        "dt": dt,
        "t_end": config.t_end,
        "tol": config.tol,
        "preconditioner": config.preconditioner,
        "seed": config.seed,
        "implicit_dt": config.implicit_dt,
        "strategies": list(STRATEGIES),
    })
    (out_dir / "summary.csv").write_text(summary.to_csv())
    (out_dir / "summary.txt").write_text(summary.to_text())
    timings = {row.name: {"wall_seconds": row.wall_seconds,
                          "solver_seconds": row.solver_seconds}
               for row in rows}
    (out_dir / "timings.json").write_text(json.dumps(timings, indent=1,
                                                     sort_keys=True) + "\n")
    return summary
