"""Scaling, cost, penalties, initialization, identify, and benchmark aggregation."""

import numpy as np
import pytest

from chromident import (
    Chromatogram,
    ColumnConfig,
    GridConfig,
    InjectionProfile,
    Langmuir,
    ModelTemplate,
)
from chromident.identification import (
    PENALTY_INSTABILITY,
    PENALTY_NEGATIVE,
    BenchmarkRun,
    BenchmarkScenario,
    Experiment,
    IdentificationProblem,
    IdentifySettings,
    InitializationFailure,
    ParamSpec,
    apply_scenario,
    benchmark,
    build_model,
    discrete_cost,
    fitness,
    identify,
    initialize_run,
    kprime_pair_index,
    scale_to_unit,
    summarize_benchmark,
    synthetic_problem,
    unscale,
)

from conftest import (
    TRUE_K,
    TRUE_NSTAR,
    coarse_problem,
    standard_column,
    standard_injection,
    table1_specs,
)


class TestScaling:
    SPECS = (
        ParamSpec("K1", 0.01, 0.05),
        ParamSpec("Nstar", 50.0, 150.0),
    )

    def test_midpoint(self):
        assert unscale(self.SPECS, [0.0, 0.0]) == pytest.approx([0.03, 100.0])

    def test_endpoints(self):
        assert unscale(self.SPECS, [-1.0, -1.0]) == pytest.approx([0.01, 50.0])
        assert unscale(self.SPECS, [1.0, 1.0]) == pytest.approx([0.05, 150.0])

    def test_inverse_pair(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            u = rng.uniform(-1.5, 1.5, 2)
            assert scale_to_unit(self.SPECS, unscale(self.SPECS, u)) == pytest.approx(
                u, abs=1e-12
            )

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            unscale(self.SPECS, [0.0])
        with pytest.raises(ValueError):
            scale_to_unit(self.SPECS, [0.0, 0.0, 0.0])

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="lower < upper"):
            ParamSpec("bad", 2.0, 1.0)
        with pytest.raises(ValueError, match="guess"):
            ParamSpec("bad", 0.0, 1.0, guess=3.0)


class TestDiscreteCost:
    def test_identical_is_zero(self):
        chrom = Chromatogram(dt=0.1, values=np.random.default_rng(0).random((11, 2)))
        assert discrete_cost(chrom, chrom) == 0.0

    def test_constant_gap(self):
        n_rows, dt, delta = 51, 0.1, 0.3
        a = Chromatogram(dt=dt, values=np.zeros((n_rows, 1)))
        b = Chromatogram(dt=dt, values=np.full((n_rows, 1), delta))
        assert discrete_cost(a, b) == pytest.approx(delta**2 * n_rows * dt, rel=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = Chromatogram(dt=0.2, values=rng.random((21, 3)))
        b = Chromatogram(dt=0.2, values=rng.random((21, 3)))
        assert discrete_cost(a, b) == discrete_cost(b, a)

    def test_shape_mismatch(self):
        a = Chromatogram(dt=0.1, values=np.zeros((5, 1)))
        b = Chromatogram(dt=0.1, values=np.zeros((6, 1)))
        with pytest.raises(ValueError, match="shapes"):
            discrete_cost(a, b)


class TestKprime:
    def test_pairing_modified_langmuir(self):
        tpl = ModelTemplate("modified_langmuir", 3)
        assert [kprime_pair_index(tpl, i) for i in range(3)] == [3, 4, 5]

    def test_pairing_langmuir_shared(self):
        tpl = ModelTemplate("langmuir", 2)
        assert kprime_pair_index(tpl, 0) == 2
        assert kprime_pair_index(tpl, 1) == 2

    def test_build_model_divides_by_paired_saturation(self):
        tpl = ModelTemplate("modified_langmuir", 2)
        specs = (
            ParamSpec("Kp1", 0.1, 10.0, kprime=True),
            ParamSpec("Kp2", 0.1, 10.0, kprime=True),
            ParamSpec("N1", 1.0, 100.0),
            ParamSpec("N2", 1.0, 100.0),
        )
        grid = GridConfig(dt=0.1, dz=0.1, n_time=10, n_space=5)
        observed = Chromatogram(dt=0.1, values=np.zeros((11, 2)))
        problem = IdentificationProblem(
            template=tpl,
            specs=specs,
            experiments=(
                Experiment(
                    column=ColumnConfig(0.5, 1.0, 0.5),
                    injection=InjectionProfile(species_count=2, duration=1.0),
                    grid=grid,
                    observed=observed,
                ),
            ),
        )
        model = build_model(problem, [2.0, 6.0, 40.0, 60.0])
        assert model.K == pytest.approx([2.0 / 40.0, 6.0 / 60.0])
        assert model.Nstar == pytest.approx([40.0, 60.0])


class TestFitness:
    def test_generating_parameters_cost_nothing(self, coarse):
        problem, _ = coarse
        u = scale_to_unit(problem.specs, [TRUE_K, TRUE_NSTAR])
        outcome = fitness(problem, u)
        assert outcome.kind == "valid"
        assert outcome.value <= 1e-20

    def test_negative_parameter_penalty(self, coarse):
        problem, _ = coarse
        # u far below -1 extrapolates K below zero
        lo, hi = problem.specs[0].lower, problem.specs[0].upper
        u_k = 2.0 * (-0.01 - lo) / (hi - lo) - 1.0
        outcome = fitness(problem, np.array([u_k, 0.0]))
        assert outcome.kind == "negative_param"
        assert outcome.value == PENALTY_NEGATIVE

    def test_instability_penalty(self):
        # a deliberately mis-sized grid makes every candidate blow up
        column = ColumnConfig(length=2.0, velocity=1.0, porosity=0.5)
        grid = GridConfig(dt=0.02, dz=2.0 / 15, n_time=500, n_space=15)
        inj = InjectionProfile(
            species_count=1, duration=10.0, segments=[(0.0, 1.0, [10.0])]
        )
        observed = Chromatogram(dt=0.02, values=np.zeros((501, 1)))
        problem = IdentificationProblem(
            template=ModelTemplate("langmuir", 1),
            specs=table1_specs(guess=False),
            experiments=(
                Experiment(column=column, injection=inj, grid=grid, observed=observed),
            ),
        )
        outcome = fitness(problem, np.zeros(2))
        assert outcome.kind == "instability"
        assert outcome.value == PENALTY_INSTABILITY

    def test_penalty_ordering(self, coarse):
        problem, _ = coarse
        valid = fitness(problem, np.zeros(2)).value
        assert valid < PENALTY_INSTABILITY < PENALTY_NEGATIVE


class TestInitializeRun:
    def test_expert_guess_becomes_mean(self, coarse):
        problem, _ = coarse
        result = initialize_run(problem, seed=4, use_expert_guess=True)
        expected = scale_to_unit(problem.specs, [0.03, 100.0])
        assert np.allclose(result.mean0, expected)
        assert result.sigma0 == 0.3

    def test_uniform_mean_without_guess(self, coarse):
        problem, _ = coarse
        result = initialize_run(problem, seed=4, use_expert_guess=False)
        assert np.all(np.abs(result.mean0) <= 1.0)

    def test_certificate_is_feasible(self, coarse):
        problem, _ = coarse
        result = initialize_run(problem, seed=4)
        assert fitness(problem, result.certificate).kind == "valid"

    def test_entirely_infeasible_ranges_fail(self, coarse):
        problem, _ = coarse
        bad = IdentificationProblem(
            template=problem.template,
            specs=(
                ParamSpec("K1", -2.0, -1.0),  # positivity required, range negative
                ParamSpec("Nstar", 50.0, 150.0),
            ),
            experiments=problem.experiments,
        )
        with pytest.raises(InitializationFailure):
            initialize_run(bad, seed=4)


class TestIdentify:
    def test_roundtrip_recovers_parameters(self, table1):
        problem, _ = table1
        report = identify(
            problem, seed=1, settings=IdentifySettings(target_fitness=1e-14)
        )
        assert report.best_fitness <= 1e-12
        assert report.best_params["K1"] == pytest.approx(TRUE_K, rel=1e-3)
        assert report.best_params["Nstar"] == pytest.approx(TRUE_NSTAR, rel=1e-3)
        assert report.termination == "target_fitness"

    def test_unreachable_target_uses_all_restarts(self):
        problem, _ = coarse_problem(n_time=60)
        report = identify(
            problem,
            seed=2,
            settings=IdentifySettings(target_fitness=-1.0, max_restarts=5),
        )
        assert report.termination == "restarts_exhausted"
        assert report.restarts == 5
        assert [r.lam for r in report.runs] == [6, 12, 24, 48, 96, 192]

    def test_deterministic_reports(self, coarse):
        problem, _ = coarse
        a = identify(problem, seed=9, settings=IdentifySettings())
        b = identify(problem, seed=9, settings=IdentifySettings())
        assert np.array_equal(a.best_vector, b.best_vector)
        assert a.best_fitness == b.best_fitness
        assert a.evals == b.evals
        assert a.trace == b.trace

    def test_parallel_matches_sequential(self, coarse):
        problem, _ = coarse
        a = identify(problem, seed=9, settings=IdentifySettings(n_workers=1))
        b = identify(problem, seed=9, settings=IdentifySettings(n_workers=2))
        assert np.array_equal(a.best_vector, b.best_vector)
        assert a.evals == b.evals

    def test_scaling_transparency(self):
        # exact reparametrization: K doubled, N* and concentrations halved;
        # powers of two keep every float operation bit-identical, so the
        # unit-space landscape is unchanged up to an exact 1/4 cost factor.
        # The absolute fitness thresholds map by the same factor.
        def build(alpha):
            specs = (
                ParamSpec("K1", 0.01 * alpha, 0.05 * alpha),
                ParamSpec("Nstar", 50.0 / alpha, 150.0 / alpha),
            )
            inj = InjectionProfile(
                species_count=1,
                duration=8.0,
                segments=[(0.0, 1.0, [10.0 / alpha])],
            )
            problem, _ = synthetic_problem(
                ModelTemplate("langmuir", 1),
                [TRUE_K * alpha, TRUE_NSTAR / alpha],
                specs,
                standard_column(),
                inj,
                dt=0.1,
            )
            return problem

        def settings(cost_scale):
            return IdentifySettings(
                target_fitness=1e-14 * cost_scale,
                tol_fun=3e-13 * cost_scale,
            )

        base = identify(build(1.0), seed=3, settings=settings(1.0))
        scaled = identify(build(2.0), seed=3, settings=settings(0.25))
        assert np.array_equal(base.best_unit, scaled.best_unit)
        assert base.evals == scaled.evals
        assert scaled.best_fitness == base.best_fitness / 4.0


class TestBenchmarkAggregation:
    def test_perf_ratio_arithmetic(self):
        runs = [
            BenchmarkRun(seed_index=i, converged=i < 19, restarts=0, evals=950, best_fitness=0.0)
            for i in range(20)
        ]
        report = summarize_benchmark("demo", runs)
        assert report.p_converge == {0: 0.95, 1: 0.95, 2: 0.95}
        assert report.mean_evals_converged == pytest.approx(950.0)
        assert report.perf == pytest.approx(1000.0)

    def test_perf_absent_without_convergence(self):
        runs = [
            BenchmarkRun(seed_index=i, converged=False, restarts=2, evals=100, best_fitness=1.0)
            for i in range(5)
        ]
        report = summarize_benchmark("none", runs)
        assert report.perf is None
        assert report.mean_evals_converged is None

    def test_probabilities_non_decreasing(self):
        runs = [
            BenchmarkRun(0, True, 0, 100, 0.0),
            BenchmarkRun(1, True, 1, 200, 0.0),
            BenchmarkRun(2, True, 2, 300, 0.0),
            BenchmarkRun(3, False, 2, 400, 1.0),
        ]
        p = summarize_benchmark("mix", runs).p_converge
        assert p[0] <= p[1] <= p[2]
        assert p == {0: 0.25, 1: 0.5, 2: 0.75}

    def test_scenario_range_override(self, coarse):
        problem, _ = coarse
        scenario = BenchmarkScenario("wide", ranges={"K1": (0.001, 1.0)})
        changed = apply_scenario(problem, scenario)
        assert changed.specs[0].lower == 0.001
        assert changed.specs[0].upper == 1.0
        assert changed.specs[1].lower == problem.specs[1].lower
        with pytest.raises(ValueError, match="unknown parameters"):
            apply_scenario(problem, BenchmarkScenario("bad", ranges={"zzz": (0, 1)}))

    def test_small_benchmark_runs_and_workers_agree(self):
        problem, _ = coarse_problem(n_time=60)
        scenario = BenchmarkScenario("expert")
        seq = benchmark(problem, scenario, runs=4, seed=123, n_workers=1)
        par = benchmark(problem, scenario, runs=4, seed=123, n_workers=2)
        assert [r.evals for r in seq.per_run] == [r.evals for r in par.per_run]
        assert seq.p_converge == par.p_converge
        assert all(
            seq.p_converge[a] <= seq.p_converge[b] for a, b in [(0, 1), (1, 2)]
        )
