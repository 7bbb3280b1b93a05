"""Covariance matrix adaptation evolution strategy with doubling restarts.

Self-contained (mu/mu_w, lambda) CMA-ES: weighted recombination, rank-one
plus rank-mu covariance adaptation, and path-length step-size control.
A run ends when one of four stagnation criteria fires (best-fitness
range, search-spread collapse, no-effect principal axis, covariance
condition number); the optimizer then restarts from a fresh uniform mean
with the offspring count doubled, up to a restart budget.

Selection uses fitness ranks only, so the sampled trajectory is invariant
under any strictly increasing transformation of the objective.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


class CovarianceDegenerate(RuntimeError):
    """Covariance update lost positive definiteness; consumed by restart logic."""


@dataclass
class CmaParams:
    """Static strategy constants for one run (fixed offspring count)."""

    n: int
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_c: float
    c_sigma: float
    c_cov: float
    d_sigma: float
    chi_n: float


def default_params(n: int, lambda_override: int | None = None) -> CmaParams:
    """Standard strategy constants for dimension n.

    lambda defaults to floor(4 + 3 ln n), mu to lambda // 2, with
    log-rank recombination weights.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if lambda_override is None:
        lam = int(math.floor(4 + 3 * math.log(n)))
    else:
        lam = int(lambda_override)
        if lam < 2:
            raise ValueError("lambda must be >= 2")
    mu = lam // 2
    weights = np.log(mu + 1.0) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mu_eff = 1.0 / float(weights @ weights)
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 3.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = 4.0 / (n + 4.0)
    c_cov = (1.0 / mu_eff) * 2.0 / (n + math.sqrt(2.0)) ** 2 + (1.0 - 1.0 / mu_eff) * min(
        1.0, (2.0 * mu_eff - 1.0) / ((n + 2.0) ** 2 + mu_eff)
    )
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n**2))
    return CmaParams(
        n=n,
        lam=lam,
        mu=mu,
        weights=weights,
        mu_eff=mu_eff,
        c_c=c_c,
        c_sigma=c_sigma,
        c_cov=c_cov,
        d_sigma=d_sigma,
        chi_n=chi_n,
    )


def default_history_len(params: CmaParams) -> int:
    """Best-fitness window for the stagnation criterion."""
    return 10 + math.ceil(30.0 * params.n / params.lam)


@dataclass
class CmaState:
    """Mutable state of one CMA-ES run."""

    mean: np.ndarray
    sigma: float
    C: np.ndarray
    B: np.ndarray
    D: np.ndarray  # square roots of the eigenvalues of C
    p_c: np.ndarray
    p_sigma: np.ndarray
    generation: int = 0
    evals: int = 0


def fresh_state(mean, sigma: float) -> CmaState:
    mean = np.asarray(mean, dtype=float).copy()
    n = mean.size
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return CmaState(
        mean=mean,
        sigma=float(sigma),
        C=np.eye(n),
        B=np.eye(n),
        D=np.ones(n),
        p_c=np.zeros(n),
        p_sigma=np.zeros(n),
    )


def sample(state: CmaState, params: CmaParams, rng: np.random.Generator) -> np.ndarray:
    """Draw lambda offspring: mean + sigma * B D z with z ~ N(0, I)."""
    z = rng.standard_normal((params.lam, state.mean.size))
    return state.mean + state.sigma * (z * state.D) @ state.B.T


def update_mean(params: CmaParams, ranked_points: np.ndarray) -> np.ndarray:
    """Weighted recombination of the mu best offspring (best first)."""
    ranked_points = np.asarray(ranked_points, dtype=float)
    if ranked_points.shape[0] != params.mu:
        raise ValueError(f"expected {params.mu} ranked points, got {ranked_points.shape[0]}")
    return params.weights @ ranked_points


def update_paths(
    state: CmaState, params: CmaParams, old_mean: np.ndarray, new_mean: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulate the mean displacement into both evolution paths.

    p_c accumulates the raw step, p_sigma the whitened step
    B D^-1 B^T (new - old) / sigma.
    """
    delta = (new_mean - old_mean) / state.sigma
    p_c = (1.0 - params.c_c) * state.p_c + math.sqrt(
        params.c_c * (2.0 - params.c_c) * params.mu_eff
    ) * delta
    whitened = state.B @ ((state.B.T @ delta) / state.D)
    p_sigma = (1.0 - params.c_sigma) * state.p_sigma + math.sqrt(
        params.c_sigma * (2.0 - params.c_sigma) * params.mu_eff
    ) * whitened
    return p_c, p_sigma


def update_covariance(
    state: CmaState, params: CmaParams, p_c: np.ndarray, steps: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-one plus rank-mu covariance update; returns (C, B, D).

    ``steps`` are the mu selected displacement vectors
    (x_i:lambda - old_mean) / sigma, best first.  Raises
    CovarianceDegenerate if the refreshed eigenvalues are not positive.
    """
    steps = np.asarray(steps, dtype=float)
    rank_mu = (params.weights[:, None] * steps).T @ steps
    c_cov = params.c_cov
    cov = (1.0 - c_cov) * state.C + c_cov * (
        (1.0 / params.mu_eff) * np.outer(p_c, p_c)
        + (1.0 - 1.0 / params.mu_eff) * rank_mu
    )
    cov = (cov + cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] <= 0.0 or not np.all(np.isfinite(eigvals)):
        raise CovarianceDegenerate(f"covariance eigenvalues {eigvals}")
    return cov, eigvecs, np.sqrt(eigvals)


def update_step_size(state: CmaState, params: CmaParams, p_sigma: np.ndarray) -> float:
    """Path length control: compare |p_sigma| with its random-selection expectation."""
    norm = float(np.linalg.norm(p_sigma))
    return state.sigma * math.exp(
        (params.c_sigma / params.d_sigma) * (norm / params.chi_n - 1.0)
    )


@dataclass
class RestartConfig:
    """Stagnation thresholds, restart budget, and stopping target."""

    tol_fun: float
    tol_x: float
    target_fitness: float
    cond_max: float = 1e14
    max_restarts: int = 5
    history_len: int | None = None
    max_evals: int | None = None

    def __post_init__(self):
        if not self.tol_fun > 0 or not self.tol_x > 0:
            raise ValueError("tol_fun and tol_x must be positive")
        if self.cond_max < 1:
            raise ValueError("cond_max must be >= 1")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")


def check_termination(
    state: CmaState,
    params: CmaParams,
    restart: RestartConfig,
    fitness_history,
) -> str | None:
    """First triggered restart criterion, or None.

    TolFun: per-generation best fitness has stagnated over a full
    history window.  TolX: the search spread sigma * sqrt(diag C) and
    the scaled path sigma * p_c are below tol_x in every coordinate.
    NoEffectAxis: a 0.1-standard-deviation probe along the cycled
    principal axis does not change the mean.  CondCov: the covariance
    condition number exceeds cond_max.
    """
    window = restart.history_len or default_history_len(params)
    history = list(fitness_history)[-window:]
    if len(history) >= window and max(history) - min(history) < restart.tol_fun:
        return "TolFun"
    spread = state.sigma * np.sqrt(np.diag(state.C))
    if np.all(spread < restart.tol_x) and np.all(
        np.abs(state.sigma * state.p_c) < restart.tol_x
    ):
        return "TolX"
    axis = state.generation % params.n
    probe = state.mean + 0.1 * state.sigma * state.D[axis] * state.B[:, axis]
    if np.array_equal(probe, state.mean):
        return "NoEffectAxis"
    if (state.D.max() / state.D.min()) ** 2 > restart.cond_max:
        return "CondCov"
    return None


@dataclass
class InitConfig:
    """Run initialization: start mean, step-size, box, and seeding.

    ``mean0`` None draws the first mean uniformly in the box, like every
    restart.  When ``bounded_gen0`` is set, generation-0 offspring
    falling outside the box are redrawn (later generations are free).
    ``gen0_inject`` places a known point in the first generation of the
    first run; if ``feasibility_threshold`` is set, each restart searches
    the box for a point with fitness below the threshold and injects it
    into its first generation.
    """

    lower: np.ndarray
    upper: np.ndarray
    sigma0: float = 0.3
    mean0: np.ndarray | None = None
    seed: int | np.random.Generator | None = None
    bounded_gen0: bool = False
    gen0_inject: np.ndarray | None = None
    feasibility_threshold: float | None = None
    feasibility_cap_factor: int = 100

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or np.any(self.lower >= self.upper):
            raise ValueError("bounds must satisfy lower < upper componentwise")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if self.mean0 is not None:
            self.mean0 = np.asarray(self.mean0, dtype=float)
            if self.mean0.shape != self.lower.shape:
                raise ValueError("mean0 has wrong dimension")


@dataclass
class RunSummary:
    """One CMA-ES run between restarts."""

    lam: int
    generations: int
    evals: int
    best_fitness: float
    termination: str


@dataclass
class RunReport:
    """Outcome of optimize_with_restarts."""

    best_point: np.ndarray
    best_fitness: float
    evals: int
    restarts: int
    termination: str
    runs: list[RunSummary] = field(default_factory=list)
    trace: list[tuple[int, float]] = field(default_factory=list)


def search_feasible(
    objective,
    mean: np.ndarray,
    sigma: float,
    lower: np.ndarray,
    upper: np.ndarray,
    rng: np.random.Generator,
    cap: int,
    threshold: float,
    tracker=None,
):
    """Look for a point with fitness below ``threshold``.

    Draws up to ``cap`` candidates from N(mean, sigma^2 I), skipping
    (but counting) those outside the box; if none qualifies, falls back
    to up to ``cap`` uniform draws over the box so that a healthy
    problem always yields a certificate.  Returns (point or None,
    evaluations used).  ``tracker(x, f)`` observes every evaluation.
    """
    n = mean.size
    evals = 0
    for _ in range(cap):
        x = mean + sigma * rng.standard_normal(n)
        if np.any(x < lower) or np.any(x > upper):
            continue
        f = objective(x)
        evals += 1
        if tracker is not None:
            tracker(x, f)
        if f < threshold:
            return x, evals
    for _ in range(cap):
        x = rng.uniform(lower, upper)
        f = objective(x)
        evals += 1
        if tracker is not None:
            tracker(x, f)
        if f < threshold:
            return x, evals
    return None, evals


def _sample_gen0(
    state: CmaState,
    params: CmaParams,
    rng: np.random.Generator,
    lower: np.ndarray,
    upper: np.ndarray,
    inject: np.ndarray | None,
    bounded: bool,
    max_tries: int = 100,
) -> np.ndarray:
    """First-generation sampling: optional injected point, optional box rejection."""
    n = state.mean.size
    points = np.empty((params.lam, n))
    start = 0
    if inject is not None:
        points[0] = inject
        start = 1
    for k in range(start, params.lam):
        for _ in range(max_tries):
            x = state.mean + state.sigma * state.B @ (state.D * rng.standard_normal(n))
            if not bounded or (np.all(x >= lower) and np.all(x <= upper)):
                break
        points[k] = x
    return points


def optimize_with_restarts(
    objective,
    init: InitConfig,
    restart: RestartConfig,
    params: CmaParams | None = None,
    n_workers: int = 1,
) -> RunReport:
    """Minimize ``objective`` with CMA-ES, doubling lambda on every restart.

    Stops as soon as the best seen fitness reaches the target, the
    restart budget is exhausted, or the optional evaluation budget runs
    out.  All randomness comes from the single generator seeded by
    ``init.seed``; within a generation the lambda evaluations are
    independent and may run on a thread pool, with results merged in
    sampling order so reports are identical to sequential execution.
    """
    rng = np.random.default_rng(init.seed)
    n = init.lower.size
    base = params if params is not None else default_params(n)

    best_x: np.ndarray | None = None
    best_f = math.inf
    evals = 0
    trace: list[tuple[int, float]] = []
    runs: list[RunSummary] = []
    termination = "restarts_exhausted"

    def note(x, f, eval_index):
        nonlocal best_x, best_f
        if f < best_f:
            best_x, best_f = np.array(x), float(f)
            trace.append((eval_index, float(f)))

    def counted(x, f):
        nonlocal evals
        evals += 1
        note(x, f, evals)

    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        for run_index in range(restart.max_restarts + 1):
            if run_index == 0:
                p = base
            else:
                p = default_params(n, base.lam * 2**run_index)
            if run_index == 0 and init.mean0 is not None:
                mean = np.array(init.mean0)
            else:
                mean = rng.uniform(init.lower, init.upper)

            inject = init.gen0_inject if run_index == 0 else None
            if inject is None and init.feasibility_threshold is not None:
                inject, _ = search_feasible(
                    objective,
                    mean,
                    init.sigma0,
                    init.lower,
                    init.upper,
                    rng,
                    init.feasibility_cap_factor * p.lam,
                    init.feasibility_threshold,
                    tracker=counted,
                )
                if best_f <= restart.target_fitness:
                    runs.append(RunSummary(p.lam, 0, 0, best_f, "target_fitness"))
                    termination = "target_fitness"
                    break

            state = fresh_state(mean, init.sigma0)
            window = restart.history_len or default_history_len(p)
            history = deque(maxlen=window)
            run_best = math.inf
            run_term = None

            while True:
                if state.generation == 0 and (init.bounded_gen0 or inject is not None):
                    points = _sample_gen0(
                        state, p, rng, init.lower, init.upper, inject, init.bounded_gen0
                    )
                else:
                    points = sample(state, p, rng)
                if pool is not None:
                    fitnesses = list(pool.map(objective, points))
                else:
                    fitnesses = [objective(x) for x in points]
                state.evals += p.lam
                evals_before = evals
                evals += p.lam
                for k, (x, f) in enumerate(zip(points, fitnesses)):
                    run_best = min(run_best, float(f))
                    note(x, f, evals_before + k + 1)

                order = np.argsort(fitnesses, kind="stable")
                selected = points[order[: p.mu]]
                old_mean = state.mean
                new_mean = update_mean(p, selected)
                p_c, p_sigma = update_paths(state, p, old_mean, new_mean)
                try:
                    cov, eigvecs, eigroots = update_covariance(
                        state, p, p_c, (selected - old_mean) / state.sigma
                    )
                except CovarianceDegenerate:
                    run_term = "CovarianceDegenerate"
                    break
                state.sigma = update_step_size(state, p, p_sigma)
                state.mean = new_mean
                state.p_c, state.p_sigma = p_c, p_sigma
                state.C, state.B, state.D = cov, eigvecs, eigroots
                state.generation += 1
                history.append(float(fitnesses[order[0]]))

                if best_f <= restart.target_fitness:
                    run_term = "target_fitness"
                    break
                if restart.max_evals is not None and evals >= restart.max_evals:
                    run_term = "max_evals"
                    break
                run_term = check_termination(state, p, restart, history)
                if run_term is not None:
                    break

            runs.append(
                RunSummary(
                    lam=p.lam,
                    generations=state.generation,
                    evals=state.evals,
                    best_fitness=run_best,
                    termination=run_term,
                )
            )
            if run_term in ("target_fitness", "max_evals"):
                termination = run_term
                break
    finally:
        if pool is not None:
            pool.shutdown()

    return RunReport(
        best_point=best_x,
        best_fitness=best_f,
        evals=evals,
        restarts=len(runs) - 1,
        termination=termination,
        runs=runs,
        trace=trace,
    )
