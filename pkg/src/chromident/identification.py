"""Inverse problem: recover isotherm parameters from observed chromatograms.

The optimizer works in the unit cube [-1, 1]^n; each coordinate maps
affinely onto an expert range.  Candidate vectors with a non-positive
value in a positivity-required slot cost 1e20 without running a
simulation; candidates whose simulation goes unstable cost 1e7; feasible
candidates cost the time-discretized least-squares mismatch summed over
all experiments, which is below 1e6 for any sane configuration, so the
penalty levels never shadow a real fit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import cmaes, isotherms, transport

PENALTY_NEGATIVE = 1e20
PENALTY_INSTABILITY = 1e7
VALID_LIMIT = 1e6

SIGMA0 = 0.3
"""Initial step-size of every run, in unit-cube coordinates."""


class InitializationFailure(RuntimeError):
    """No feasible individual found while seeding the first population."""


@dataclass(frozen=True)
class ParamSpec:
    """One optimized parameter: expert range, feasibility, optional guess.

    ``kprime`` marks a parameter stored as the measurable product
    K' = K * N*; it is divided by its paired saturation coefficient
    before the model is built.
    """

    name: str
    lower: float
    upper: float
    positive: bool = True
    guess: float | None = None
    kprime: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"parameter {self.name}: range must satisfy lower < upper")
        if self.guess is not None and not self.lower <= self.guess <= self.upper:
            raise ValueError(f"parameter {self.name}: guess outside its range")


@dataclass(frozen=True)
class Experiment:
    """One (setup, observation) pair sharing the problem's fixed grid."""

    column: transport.ColumnConfig
    injection: transport.InjectionProfile
    grid: transport.GridConfig
    observed: transport.Chromatogram

    def __post_init__(self):
        n_rows = self.grid.n_time + 1
        if self.observed.values.shape[0] != n_rows:
            raise ValueError(
                f"observed chromatogram has {self.observed.values.shape[0]} rows, "
                f"grid expects {n_rows}"
            )
        if self.observed.species_count != self.injection.species_count:
            raise ValueError("observed chromatogram and injection species counts differ")
        if abs(self.observed.dt - self.grid.dt) > 1e-12 * self.grid.dt:
            raise ValueError("observed chromatogram dt differs from the grid dt")


@dataclass(frozen=True)
class IdentificationProblem:
    template: isotherms.ModelTemplate
    specs: tuple[ParamSpec, ...]
    experiments: tuple[Experiment, ...]

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "experiments", tuple(self.experiments))
        n = isotherms.param_count(self.template)
        if len(self.specs) != n:
            raise ValueError(
                f"{self.template.family} template needs {n} parameter specs, "
                f"got {len(self.specs)}"
            )
        if not self.experiments:
            raise ValueError("at least one experiment is required")
        for exp in self.experiments:
            if exp.injection.species_count != self.template.species_count:
                raise ValueError("experiment species count differs from the template")

    @property
    def n(self) -> int:
        return len(self.specs)


@dataclass(frozen=True)
class FitnessOutcome:
    value: float
    kind: str  # "valid" | "negative_param" | "instability"


def scale_to_unit(specs, theta_physical) -> np.ndarray:
    """Map physical parameters onto [-1, 1]^n (inverse of ``unscale``)."""
    theta = np.asarray(theta_physical, dtype=float)
    if theta.shape != (len(specs),):
        raise ValueError(f"expected {len(specs)} parameters, got shape {theta.shape}")
    lo = np.array([s.lower for s in specs])
    hi = np.array([s.upper for s in specs])
    return 2.0 * (theta - lo) / (hi - lo) - 1.0


def unscale(specs, theta_unit) -> np.ndarray:
    """Map unit-cube coordinates onto the physical expert ranges."""
    u = np.asarray(theta_unit, dtype=float)
    if u.shape != (len(specs),):
        raise ValueError(f"expected {len(specs)} parameters, got shape {u.shape}")
    lo = np.array([s.lower for s in specs])
    hi = np.array([s.upper for s in specs])
    return lo + (u + 1.0) / 2.0 * (hi - lo)


def kprime_pair_index(template: isotherms.ModelTemplate, index: int) -> int:
    """Packing slot of the saturation coefficient paired with K slot ``index``."""
    m = template.species_count
    family = template.family
    if family == "langmuir":
        n_k = m
    elif family == "bi_langmuir":
        n_k = 2 * m
    elif family == "lattice":
        n_k = 1
    else:
        n_k = m
    if index >= n_k:
        raise ValueError(f"slot {index} is not a K entry for family {family}")
    if family == "modified_langmuir":
        return n_k + index
    if family == "bi_langmuir":
        return n_k + index // m
    return n_k  # single shared saturation coefficient


def _resolve_kprime(template, specs, theta_physical) -> np.ndarray:
    theta = np.array(theta_physical, dtype=float)
    for i, spec in enumerate(specs):
        if spec.kprime:
            theta[i] = theta[i] / theta[kprime_pair_index(template, i)]
    return theta


def build_model(problem: IdentificationProblem, theta_physical) -> isotherms.IsothermModel:
    """Physical parameter vector -> model instance, applying K' slots."""
    return isotherms.unpack(
        problem.template, _resolve_kprime(problem.template, problem.specs, theta_physical)
    )


def discrete_cost(
    simulated: transport.Chromatogram, observed: transport.Chromatogram
) -> float:
    """Time-discretized squared-L2 chromatogram mismatch: dt * sum ||sim - obs||^2."""
    if simulated.values.shape != observed.values.shape:
        raise ValueError(
            f"chromatogram shapes differ: {simulated.values.shape} vs "
            f"{observed.values.shape}"
        )
    if abs(simulated.dt - observed.dt) > 1e-12 * observed.dt:
        raise ValueError("chromatogram time steps differ")
    diff = simulated.values - observed.values
    return float(simulated.dt * np.sum(diff * diff))


def fitness(problem: IdentificationProblem, theta_unit) -> FitnessOutcome:
    """Cost of a unit-cube candidate, with infeasibility mapped to penalties."""
    theta = unscale(problem.specs, theta_unit)
    for value, spec in zip(theta, problem.specs):
        if spec.positive and value <= 0.0:
            return FitnessOutcome(PENALTY_NEGATIVE, "negative_param")
    model = build_model(problem, theta)
    total = 0.0
    for exp in problem.experiments:
        try:
            sim = transport.simulate(model, exp.column, exp.grid, exp.injection)
        except transport.InstabilityDetected:
            return FitnessOutcome(PENALTY_INSTABILITY, "instability")
        total += discrete_cost(sim, exp.observed)
    if total >= VALID_LIMIT:
        # only near-blowup oscillation gets this large; grade it like instability
        return FitnessOutcome(PENALTY_INSTABILITY, "instability")
    return FitnessOutcome(total, "valid")


def fitness_value(problem: IdentificationProblem, theta_unit) -> float:
    return fitness(problem, theta_unit).value


@dataclass
class InitResult:
    mean0: np.ndarray
    sigma0: float
    certificate: np.ndarray
    certificate_fitness: float
    evals: int


def initialize_run(
    problem: IdentificationProblem,
    seed,
    use_expert_guess: bool = False,
    lam: int | None = None,
) -> InitResult:
    """Pick the starting mean and certify that a feasible individual exists.

    The mean is the unit-scaled expert guess when requested (all specs
    must then carry one), otherwise uniform in [-1, 1]^n.  Up to
    100 * lambda candidates are sampled around the mean (falling back to
    uniform draws over the cube), rejecting out-of-cube and
    penalty-valued ones; failure to find any feasible individual raises
    InitializationFailure.
    """
    rng = np.random.default_rng(seed)
    n = problem.n
    if use_expert_guess:
        guesses = [s.guess for s in problem.specs]
        if any(g is None for g in guesses):
            raise ValueError("expert guess requested but some parameters have none")
        mean0 = scale_to_unit(problem.specs, np.array(guesses, dtype=float))
    else:
        mean0 = rng.uniform(-1.0, 1.0, n)
    if lam is None:
        lam = cmaes.default_params(n).lam

    best = {"x": None, "f": math.inf}

    def tracker(x, f):
        if f < best["f"]:
            best["x"], best["f"] = np.array(x), f

    lower, upper = -np.ones(n), np.ones(n)
    point, evals = cmaes.search_feasible(
        lambda u: fitness_value(problem, u),
        mean0,
        SIGMA0,
        lower,
        upper,
        rng,
        cap=100 * lam,
        threshold=VALID_LIMIT,
        tracker=tracker,
    )
    if point is None:
        raise InitializationFailure(
            f"no feasible individual among {evals} candidates; the configured "
            "ranges appear to be entirely infeasible"
        )
    return InitResult(
        mean0=mean0,
        sigma0=SIGMA0,
        certificate=point,
        certificate_fitness=best["f"] if best["x"] is not None else math.inf,
        evals=evals,
    )


@dataclass
class IdentifySettings:
    """Knobs of one identification; defaults follow the synthetic protocol."""

    target_fitness: float = 1e-14
    max_restarts: int = 5
    lambda_override: int | None = None
    use_expert_guess: bool = False
    n_workers: int = 1
    max_evals: int | None = None
    tol_fun: float | None = None  # default 1e-12 * sigma0
    tol_x: float | None = None  # default 1e-12 * sigma0
    cond_max: float = 1e14


@dataclass
class IdentifyReport:
    best_params: dict[str, float]
    best_vector: np.ndarray
    best_unit: np.ndarray
    best_fitness: float
    evals: int
    restarts: int
    termination: str
    runs: list[cmaes.RunSummary]
    trace: list[tuple[int, float]]
    seed: int | None


def identify(
    problem: IdentificationProblem,
    seed,
    settings: IdentifySettings | None = None,
) -> IdentifyReport:
    """Full inverse run: seed, certify feasibility, optimize with restarts."""
    settings = settings or IdentifySettings()
    rng = np.random.default_rng(seed)
    init_result = initialize_run(
        problem, rng, use_expert_guess=settings.use_expert_guess,
        lam=settings.lambda_override,
    )
    n = problem.n
    params = cmaes.default_params(n, settings.lambda_override)
    restart = cmaes.RestartConfig(
        tol_fun=settings.tol_fun if settings.tol_fun is not None else 1e-12 * SIGMA0,
        tol_x=settings.tol_x if settings.tol_x is not None else 1e-12 * SIGMA0,
        target_fitness=settings.target_fitness,
        cond_max=settings.cond_max,
        max_restarts=settings.max_restarts,
        max_evals=settings.max_evals,
    )
    init = cmaes.InitConfig(
        lower=-np.ones(n),
        upper=np.ones(n),
        sigma0=init_result.sigma0,
        mean0=init_result.mean0,
        seed=rng,
        bounded_gen0=True,
        gen0_inject=init_result.certificate,
        feasibility_threshold=VALID_LIMIT,
    )
    report = cmaes.optimize_with_restarts(
        lambda u: fitness_value(problem, u),
        init,
        restart,
        params=params,
        n_workers=settings.n_workers,
    )
    best_unit = report.best_point
    best_physical = unscale(problem.specs, best_unit)
    names = [s.name for s in problem.specs]
    total_evals = report.evals + init_result.evals
    trace = [(idx + init_result.evals, f) for idx, f in report.trace]
    if init_result.certificate_fitness < math.inf:
        trace.insert(0, (init_result.evals, init_result.certificate_fitness))
        trace = _monotone_trace(trace)
    return IdentifyReport(
        best_params=dict(zip(names, best_physical.tolist())),
        best_vector=best_physical,
        best_unit=np.array(best_unit),
        best_fitness=report.best_fitness,
        evals=total_evals,
        restarts=report.restarts,
        termination=report.termination,
        runs=report.runs,
        trace=trace,
        seed=int(seed) if isinstance(seed, (int, np.integer)) else None,
    )


def _monotone_trace(trace):
    """Keep only strictly improving (eval, best) pairs, in eval order."""
    out = []
    best = math.inf
    for idx, f in sorted(trace, key=lambda t: t[0]):
        if f < best:
            out.append((idx, f))
            best = f
    return out


# ---------------------------------------------------------------------------
# synthetic roundtrip protocol
# ---------------------------------------------------------------------------


def synthetic_problem(
    template: isotherms.ModelTemplate,
    true_params,
    specs,
    column: transport.ColumnConfig,
    injections,
    dt: float,
    cfl_target: float = 0.8,
    c_max=None,
) -> tuple[IdentificationProblem, transport.GridConfig]:
    """Simulate-then-identify fixture: generate observations from known
    parameters on a calibrated grid, then pose the inverse problem on the
    same grid (so the generating parameters cost exactly zero).

    ``true_params`` are in spec space (K' slots included); ``injections``
    is one profile per experiment.
    """
    specs = tuple(specs)
    if isinstance(injections, transport.InjectionProfile):
        injections = [injections]
    model = isotherms.unpack(
        template, _resolve_kprime(template, specs, np.asarray(true_params, dtype=float))
    )
    if c_max is None:
        c_max = np.max(
            [transport.default_cmax(inj) for inj in injections], axis=0
        )
    duration = injections[0].duration
    grid = transport.calibrate_grid(
        model, column, dt, duration, c_max, cfl_target=cfl_target
    )
    experiments = []
    for inj in injections:
        if inj.duration != duration:
            raise ValueError("all experiments must share one duration (one grid)")
        observed = transport.simulate(model, column, grid, inj)
        experiments.append(
            Experiment(column=column, injection=inj, grid=grid, observed=observed)
        )
    return (
        IdentificationProblem(template=template, specs=specs, experiments=tuple(experiments)),
        grid,
    )


# ---------------------------------------------------------------------------
# benchmark protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkScenario:
    """Range/guess variant of a problem for the convergence-probability study."""

    name: str
    ranges: dict[str, tuple[float, float]] | None = None
    use_expert_guess: bool = False


@dataclass
class BenchmarkRun:
    seed_index: int
    converged: bool
    restarts: int
    evals: int
    best_fitness: float


@dataclass
class BenchmarkReport:
    scenario: str
    runs: int
    threshold: float
    p_converge: dict[int, float]
    mean_evals_converged: float | None
    perf: float | None
    per_run: list[BenchmarkRun] = field(default_factory=list)


BENCHMARK_THRESHOLD = 1e-12
BENCHMARK_BUDGETS = (0, 1, 2)


def apply_scenario(
    problem: IdentificationProblem, scenario: BenchmarkScenario
) -> IdentificationProblem:
    if not scenario.ranges:
        return problem
    unknown = set(scenario.ranges) - {s.name for s in problem.specs}
    if unknown:
        raise ValueError(f"scenario overrides unknown parameters: {sorted(unknown)}")
    specs = []
    for spec in problem.specs:
        if spec.name in scenario.ranges:
            lo, hi = scenario.ranges[spec.name]
            guess = spec.guess if spec.guess is not None and lo <= spec.guess <= hi else None
            specs.append(replace(spec, lower=float(lo), upper=float(hi), guess=guess))
        else:
            specs.append(spec)
    return replace(problem, specs=tuple(specs))


def _benchmark_one(args) -> BenchmarkRun:
    problem, scenario_use_guess, base_seed, index, lambda_override = args
    run_seed = np.random.SeedSequence([base_seed, index])
    settings = IdentifySettings(
        target_fitness=BENCHMARK_THRESHOLD,
        max_restarts=max(BENCHMARK_BUDGETS),
        use_expert_guess=scenario_use_guess,
        lambda_override=lambda_override,
    )
    report = identify(problem, run_seed, settings)
    return BenchmarkRun(
        seed_index=index,
        converged=report.termination == "target_fitness",
        restarts=report.restarts,
        evals=report.evals,
        best_fitness=report.best_fitness,
    )


def summarize_benchmark(
    scenario_name: str, runs: list[BenchmarkRun], threshold: float = BENCHMARK_THRESHOLD
) -> BenchmarkReport:
    """Aggregate per-run outcomes into convergence probabilities and the
    performance ratio (mean converged evals / p at the largest budget)."""
    total = len(runs)
    p = {
        b: sum(1 for r in runs if r.converged and r.restarts <= b) / total
        for b in BENCHMARK_BUDGETS
    }
    converged_evals = [r.evals for r in runs if r.converged]
    mean_evals = float(np.mean(converged_evals)) if converged_evals else None
    p_final = p[max(BENCHMARK_BUDGETS)]
    perf = mean_evals / p_final if converged_evals and p_final > 0 else None
    return BenchmarkReport(
        scenario=scenario_name,
        runs=total,
        threshold=threshold,
        p_converge=p,
        mean_evals_converged=mean_evals,
        perf=perf,
        per_run=runs,
    )


def benchmark(
    problem: IdentificationProblem,
    scenario: BenchmarkScenario,
    runs: int,
    seed: int,
    n_workers: int = 1,
    lambda_override: int | None = None,
) -> BenchmarkReport:
    """Repeated seeded identifications of one scenario.

    Convergence means reaching the 1e-12 fitness threshold; probabilities
    are reported for restart budgets 0, 1 and 2 and runs execute with the
    largest budget.  Per-run seeds derive from (seed, run index), so
    reports are independent of the worker count.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    scenario_problem = apply_scenario(problem, scenario)
    tasks = [
        (scenario_problem, scenario.use_expert_guess, seed, i, lambda_override)
        for i in range(runs)
    ]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_benchmark_one, tasks))
    else:
        results = [_benchmark_one(t) for t in tasks]
    return summarize_benchmark(scenario.name, results)
