"""Configuration files, chromatogram tables, and run reports.

A problem configuration is a JSON document with ``column``, ``grid``,
``injection``, ``model``, ``parameters``, ``experiments`` and
``optimizer`` sections (plus an optional ``benchmark`` section for the
convergence study).  Chromatograms are CSV tables with header
``t,c1,...,cm`` and 17-significant-digit decimals, so a write/read
cycle is bit-faithful.  Reports are JSON with deterministic key order
and no timestamps: rerunning the same seed reproduces the bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import isotherms, transport
from .identification import (
    BenchmarkReport,
    BenchmarkScenario,
    Experiment,
    IdentificationProblem,
    IdentifyReport,
    IdentifySettings,
    ParamSpec,
    _resolve_kprime,
)


class ConfigError(ValueError):
    """Configuration parsing or validation failure, naming the field at fault."""


class ChromatogramFormatError(ValueError):
    """Malformed chromatogram table; carries the offending row when known."""


# ---------------------------------------------------------------------------
# chromatogram files
# ---------------------------------------------------------------------------


def write_chromatogram(path, chrom: transport.Chromatogram) -> None:
    """Write ``t,c1,...,cm`` rows at 17 significant digits."""
    path = Path(path)
    m = chrom.species_count
    header = "t," + ",".join(f"c{i + 1}" for i in range(m))
    lines = [header]
    for n, row in enumerate(chrom.values):
        cells = [f"{n * chrom.dt:.17g}"] + [f"{v:.17g}" for v in row]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def read_chromatogram(path) -> transport.Chromatogram:
    """Parse a chromatogram table, validating header, row shape and spacing."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ChromatogramFormatError(f"{path}: empty file")
    header = lines[0].strip()
    fields = header.split(",")
    m = len(fields) - 1
    expected = "t," + ",".join(f"c{i + 1}" for i in range(m))
    if m < 1 or header != expected:
        raise ChromatogramFormatError(
            f"{path}: bad header {header!r}, expected 't,c1,...,cm'"
        )
    rows = []
    times = []
    for idx, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != m + 1:
            raise ChromatogramFormatError(
                f"{path}: row {idx} has {len(cells)} columns, expected {m + 1}"
            )
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise ChromatogramFormatError(f"{path}: row {idx}: {exc}") from exc
        times.append(values[0])
        rows.append(values[1:])
    if len(rows) < 2:
        raise ChromatogramFormatError(f"{path}: need at least two data rows")
    t = np.asarray(times)
    values = np.asarray(rows)
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(values)):
        raise ChromatogramFormatError(f"{path}: non-finite entries")
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise ChromatogramFormatError(f"{path}: time column must strictly increase")
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if np.max(np.abs(steps - dt)) > 1e-9 * dt:
        raise ChromatogramFormatError(f"{path}: time column is not uniformly spaced")
    return transport.Chromatogram(dt=float(t[1] - t[0]), values=values)


# ---------------------------------------------------------------------------
# problem configuration
# ---------------------------------------------------------------------------


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ConfigError(f"missing section {name!r}")
    if not isinstance(doc[name], dict):
        raise ConfigError(f"section {name!r} must be an object")
    return doc[name]


def _number(obj: dict, section: str, key: str, default=None) -> float:
    if key not in obj:
        if default is not None:
            return default
        raise ConfigError(f"missing field {section}.{key}")
    value = obj[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{section}.{key} must be a number")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"{section}.{key} must be finite")
    return value


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _parse_column(doc: dict) -> transport.ColumnConfig:
    sec = _section(doc, "column")
    try:
        return transport.ColumnConfig(
            length=_number(sec, "column", "length"),
            velocity=_number(sec, "column", "velocity"),
            porosity=_number(sec, "column", "porosity"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_injection(doc: dict, species_count: int, section="injection") -> transport.InjectionProfile:
    sec = _section(doc, section)
    duration = _number(sec, section, "duration")
    segments = []
    for i, seg in enumerate(sec.get("segments", [])):
        if not isinstance(seg, dict):
            raise ConfigError(f"{section}.segments[{i}] must be an object")
        conc = seg.get("concentration")
        if not isinstance(conc, list):
            raise ConfigError(f"{section}.segments[{i}].concentration must be a list")
        segments.append(
            (
                _number(seg, f"{section}.segments[{i}]", "start"),
                _number(seg, f"{section}.segments[{i}]", "end"),
                conc,
            )
        )
    try:
        return transport.InjectionProfile(
            species_count=species_count, duration=duration, segments=tuple(segments)
        )
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _parse_template(doc: dict) -> isotherms.ModelTemplate:
    sec = _section(doc, "model")
    family = sec.get("family")
    if family not in isotherms.FAMILIES:
        raise ConfigError(
            f"model.family must be one of {list(isotherms.FAMILIES)}, got {family!r}"
        )
    species = sec.get("species_count")
    if not isinstance(species, int) or isinstance(species, bool) or species < 1:
        raise ConfigError("model.species_count must be a positive integer")
    kwargs = {}
    if "degree" in sec:
        if not isinstance(sec["degree"], int) or sec["degree"] < 2:
            raise ConfigError("model.degree must be an integer >= 2")
        kwargs["degree"] = sec["degree"]
    if "temperature" in sec:
        kwargs["temperature"] = _number(sec, "model", "temperature")
    try:
        return isotherms.ModelTemplate(family=family, species_count=species, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _parse_parameters(
    doc: dict, template
) -> tuple[tuple[ParamSpec, ...], np.ndarray | None, tuple[str, ...]]:
    """Parameter specs, the value vector (when every entry carries one),
    and the names of entries that came without a range."""
    if "parameters" not in doc or not isinstance(doc["parameters"], list):
        raise ConfigError("missing section 'parameters' (a list)")
    entries = doc["parameters"]
    n = isotherms.param_count(template)
    if len(entries) != n:
        raise ConfigError(
            f"parameters: expected {n} entries for {template.family} with "
            f"m={template.species_count}, got {len(entries)}"
        )
    specs = []
    values = []
    missing_ranges = []
    for i, entry in enumerate(entries):
        where = f"parameters[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where} must be an object")
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise ConfigError(f"{where}.name must be a non-empty string")
        rng = entry.get("range")
        if rng is None:
            lo, hi = 0.0, 1.0  # placeholder; the entry is flagged below
            missing_ranges.append(name)
        else:
            if not (isinstance(rng, list) and len(rng) == 2):
                raise ConfigError(f"{where}.range must be [lower, upper]")
            lo, hi = float(rng[0]), float(rng[1])
            if not np.isfinite(lo) or not np.isfinite(hi) or not lo < hi:
                raise ConfigError(f"{where}.range must satisfy lower < upper")
        guess = entry.get("guess")
        if guess is not None:
            guess = _number(entry, where, "guess")
            if rng is None:
                guess = None
        try:
            specs.append(
                ParamSpec(
                    name=name,
                    lower=lo,
                    upper=hi,
                    positive=bool(entry.get("positivity", True)),
                    guess=guess,
                    kprime=bool(entry.get("kprime", False)),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        values.append(entry.get("value"))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("parameters: names must be unique")
    if all(v is not None for v in values):
        vec = np.array([float(v) for v in values])
    else:
        vec = None
    return tuple(specs), vec, tuple(missing_ranges)


@dataclass
class LoadedConfig:
    """Everything a CLI command can need from one configuration file."""

    path: Path
    digest: str
    template: isotherms.ModelTemplate
    column: transport.ColumnConfig
    injection: transport.InjectionProfile
    specs: tuple[ParamSpec, ...]
    values: np.ndarray | None
    grid: transport.GridConfig
    problem: IdentificationProblem | None
    settings: IdentifySettings
    seed: int
    benchmark_runs: int
    scenarios: tuple[BenchmarkScenario, ...]

    def model_from_values(self):
        if self.values is None:
            raise ConfigError("parameters: every entry needs a 'value' to simulate")
        theta = _resolve_kprime(self.template, self.specs, self.values)
        return isotherms.unpack(self.template, theta)


def _calibration_model(template, specs, values):
    """Model used to fix the grid: explicit values, expert guesses, or midpoints."""
    if values is not None:
        theta = np.asarray(values, dtype=float)
    elif all(s.guess is not None for s in specs):
        theta = np.array([s.guess for s in specs])
    else:
        theta = np.array([(s.lower + s.upper) / 2.0 for s in specs])
    return isotherms.unpack(template, _resolve_kprime(template, specs, theta))


def _parse_grid(doc, template, specs, values, column, injections) -> transport.GridConfig:
    sec = _section(doc, "grid")
    dt = _number(sec, "grid", "dt")
    duration = injections[0].duration
    if "dz" in sec:
        dz = _number(sec, "grid", "dz")
        if dz <= 0:
            raise ConfigError("grid.dz must be positive")
        n_space = int(round(column.length / dz))
        if n_space < 1 or abs(n_space * dz - column.length) > 1e-9 * column.length:
            raise ConfigError("grid.dz must divide the column length")
        n_time = int(round(duration / dt))
        if n_time < 2 or abs(n_time * dt - duration) > 1e-9 * duration:
            raise ConfigError("grid.dt must divide the injection duration")
        cfl = _number(sec, "grid", "cfl_target", default=0.8)
        try:
            return transport.GridConfig(
                dt=dt, dz=dz, n_time=n_time, n_space=n_space, cfl_target=cfl
            )
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc
    cfl = _number(sec, "grid", "cfl_target", default=0.8)
    if not 0.0 < cfl < 1.0:
        raise ConfigError("grid.cfl_target must lie in (0, 1)")
    model = _calibration_model(template, specs, values)
    c_max = np.max([transport.default_cmax(inj) for inj in injections], axis=0)
    try:
        return transport.calibrate_grid(
            model, column, dt, duration, c_max, cfl_target=cfl
        )
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def load_bundle(path) -> LoadedConfig:
    """Parse and validate a configuration file for any CLI command."""
    path = Path(path)
    doc = load_config(path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    template = _parse_template(doc)
    column = _parse_column(doc)
    specs, values, missing_ranges = _parse_parameters(doc, template)
    injection = _parse_injection(doc, template.species_count)

    experiments_sec = doc.get("experiments", [])
    if not isinstance(experiments_sec, list):
        raise ConfigError("section 'experiments' must be a list")
    injections = [injection]
    for i, exp in enumerate(experiments_sec):
        if not isinstance(exp, dict):
            raise ConfigError(f"experiments[{i}] must be an object")
        if "injection" in exp:
            injections.append(
                _parse_injection(exp, template.species_count, section="injection")
            )
    grid = _parse_grid(doc, template, specs, values, column, injections)

    problem = None
    if experiments_sec:
        if missing_ranges:
            raise ConfigError(
                "parameters: every entry needs a 'range' to identify; missing for "
                + ", ".join(missing_ranges)
            )
        experiments = []
        for i, exp in enumerate(experiments_sec):
            chrom_path = exp.get("chromatogram_path")
            if not isinstance(chrom_path, str):
                raise ConfigError(f"experiments[{i}].chromatogram_path is required")
            full = (path.parent / chrom_path).resolve()
            if not full.exists():
                raise ConfigError(
                    f"experiments[{i}].chromatogram_path: no such file {full}"
                )
            observed = read_chromatogram(full)
            inj = (
                _parse_injection(exp, template.species_count, section="injection")
                if "injection" in exp
                else injection
            )
            try:
                experiments.append(
                    Experiment(column=column, injection=inj, grid=grid, observed=observed)
                )
            except ValueError as exc:
                raise ConfigError(f"experiments[{i}]: {exc}") from exc
        try:
            problem = IdentificationProblem(
                template=template, specs=specs, experiments=tuple(experiments)
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    opt = doc.get("optimizer", {})
    if not isinstance(opt, dict):
        raise ConfigError("section 'optimizer' must be an object")
    settings = IdentifySettings(
        target_fitness=_number(opt, "optimizer", "target_fitness", default=1e-14),
        max_restarts=int(_number(opt, "optimizer", "max_restarts", default=5)),
        use_expert_guess=bool(opt.get("use_expert_guess", False)),
    )
    if "lambda_override" in opt:
        settings.lambda_override = int(_number(opt, "optimizer", "lambda_override"))
    if "max_evals" in opt:
        settings.max_evals = int(_number(opt, "optimizer", "max_evals"))
    seed = int(_number(opt, "optimizer", "seed", default=0))
    if seed < 0:
        raise ConfigError("optimizer.seed must be >= 0")

    bench = doc.get("benchmark", {})
    if not isinstance(bench, dict):
        raise ConfigError("section 'benchmark' must be an object")
    benchmark_runs = int(_number(bench, "benchmark", "runs", default=50))
    scenarios = []
    for i, sc in enumerate(bench.get("scenarios", [])):
        if not isinstance(sc, dict) or not isinstance(sc.get("name"), str):
            raise ConfigError(f"benchmark.scenarios[{i}] needs a 'name'")
        ranges = None
        if "ranges" in sc:
            if not isinstance(sc["ranges"], dict):
                raise ConfigError(f"benchmark.scenarios[{i}].ranges must be an object")
            ranges = {
                k: (float(v[0]), float(v[1])) for k, v in sc["ranges"].items()
            }
        scenarios.append(
            BenchmarkScenario(
                name=sc["name"],
                ranges=ranges,
                use_expert_guess=bool(sc.get("use_expert_guess", False)),
            )
        )
    if not scenarios:
        scenarios.append(BenchmarkScenario(name="default"))

    return LoadedConfig(
        path=path,
        digest=digest,
        template=template,
        column=column,
        injection=injection,
        specs=specs,
        values=values,
        grid=grid,
        problem=problem,
        settings=settings,
        seed=seed,
        benchmark_runs=benchmark_runs,
        scenarios=tuple(scenarios),
    )


def load_problem(path) -> IdentificationProblem:
    """Load a configuration into a fully validated identification problem."""
    bundle = load_bundle(path)
    if bundle.problem is None:
        raise ConfigError(
            "configuration has no experiments with observed chromatograms"
        )
    return bundle.problem


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_report(path, report: dict) -> None:
    """Serialize a report dict as deterministic JSON."""
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def identify_report_dict(
    report: IdentifyReport, seed: int, digest: str, target_fitness: float
) -> dict:
    return {
        "seed": seed,
        "config_digest": digest,
        "target_fitness": target_fitness,
        "best_fitness": report.best_fitness,
        "best_parameters": report.best_params,
        "evaluations": report.evals,
        "restarts": report.restarts,
        "termination": report.termination,
        "runs": [
            {
                "lambda": r.lam,
                "generations": r.generations,
                "evaluations": r.evals,
                "best_fitness": r.best_fitness,
                "termination": r.termination,
            }
            for r in report.runs
        ],
    }


def benchmark_report_dict(reports: list[BenchmarkReport], seed: int, digest: str) -> dict:
    out = {"seed": seed, "config_digest": digest, "scenarios": {}}
    for rep in reports:
        entry = {
            "runs": rep.runs,
            "threshold": rep.threshold,
            "p_converge": {str(k): v for k, v in rep.p_converge.items()},
            "per_run": [
                {
                    "seed_index": r.seed_index,
                    "converged": r.converged,
                    "restarts": r.restarts,
                    "evaluations": r.evals,
                    "best_fitness": r.best_fitness,
                }
                for r in rep.per_run
            ],
        }
        if rep.mean_evals_converged is not None:
            entry["mean_evals_converged"] = rep.mean_evals_converged
        if rep.perf is not None:
            entry["perf"] = rep.perf
        out["scenarios"][rep.scenario] = entry
    return out
