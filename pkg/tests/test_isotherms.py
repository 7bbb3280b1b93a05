"""Isotherm family values, identities, Jacobians, and the vector codec."""

import math

import numpy as np
import pytest

from chromident import isotherms
from chromident.isotherms import (
    R_GAS,
    BiLangmuir,
    Langmuir,
    LatticeSingle,
    ModelTemplate,
    ModifiedLangmuir,
    evaluate,
    jacobian,
    pack,
    param_count,
    param_names,
    unpack,
)


def random_feasible(family, rng, m=2):
    """A random feasible model of the given family."""
    if family == "langmuir":
        return Langmuir(K=rng.uniform(0.01, 0.5, m), Nstar=rng.uniform(20, 200))
    if family == "bi_langmuir":
        return BiLangmuir(
            K1=rng.uniform(0.01, 0.5, m),
            K2=rng.uniform(0.01, 0.5, m),
            Nstar1=rng.uniform(20, 200),
            Nstar2=rng.uniform(20, 200),
        )
    if family == "lattice":
        return LatticeSingle(
            K=rng.uniform(0.01, 0.5),
            Nstar=rng.uniform(20, 200),
            energies=rng.uniform(-3000, 3000, 2),
            degree=3,
        )
    return ModifiedLangmuir(
        K=rng.uniform(0.01, 0.5, m), Nstar=rng.uniform(20, 200, m)
    )


class TestEvaluate:
    def test_langmuir_at_zero(self):
        model = Langmuir(K=[0.0388], Nstar=107.0)
        assert evaluate(model, [0.0]) == pytest.approx([0.0], abs=0.0)

    def test_langmuir_reference_value(self):
        # oracle: 107 * 0.388 / 1.388 evaluated independently at high precision
        model = Langmuir(K=[0.0388], Nstar=107.0)
        assert evaluate(model, [10.0])[0] == pytest.approx(
            29.910662824207492, rel=1e-12
        )

    def test_lattice_degree2_closed_form(self):
        # two-site closed form written out directly
        k, nstar, energy, temp = 0.07, 90.0, -1200.0, 300.0
        model = LatticeSingle(K=k, Nstar=nstar, energies=[energy], degree=2, temperature=temp)
        for c in [0.3, 2.0, 9.5]:
            x = k * c
            e = math.exp(-energy / (R_GAS * temp))
            expected = (nstar / 2) * (x + e * x * x) / (1 + 2 * x + e * x * x)
            assert evaluate(model, [c])[0] == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("degree", [2, 3, 5])
    def test_lattice_zero_energy_is_half_langmuir(self, degree):
        k, nstar = 0.0388, 107.0
        lattice = LatticeSingle(
            K=k, Nstar=nstar, energies=np.zeros(degree - 1), degree=degree
        )
        langmuir = Langmuir(K=[k], Nstar=nstar)
        c = np.linspace(0.0, 40.0, 1000)[:, None]
        ratio = evaluate(lattice, c)[1:] / evaluate(langmuir, c)[1:]
        assert np.allclose(ratio, 0.5, rtol=1e-12)

    def test_modified_equal_nstar_matches_langmuir(self):
        modified = ModifiedLangmuir(K=[0.1, 0.2], Nstar=[80.0, 80.0])
        plain = Langmuir(K=[0.1, 0.2], Nstar=80.0)
        c = np.random.default_rng(3).uniform(0, 20, (50, 2))
        assert np.allclose(evaluate(modified, c), evaluate(plain, c), rtol=1e-14)

    def test_bilangmuir_is_sum_of_site_terms(self):
        model = BiLangmuir(K1=[0.1, 0.3], K2=[0.05, 0.2], Nstar1=60.0, Nstar2=40.0)
        a = Langmuir(K=[0.1, 0.3], Nstar=60.0)
        b = Langmuir(K=[0.05, 0.2], Nstar=40.0)
        c = [4.0, 1.5]
        assert evaluate(model, c) == pytest.approx(evaluate(a, c) + evaluate(b, c))

    @pytest.mark.parametrize("family", isotherms.FAMILIES)
    def test_h_of_zero_is_zero(self, family):
        model = random_feasible(family, np.random.default_rng(1))
        m = model.species_count
        assert np.all(evaluate(model, np.zeros(m)) == 0.0)

    def test_clamps_small_negative_undershoot(self):
        model = Langmuir(K=[0.0388], Nstar=107.0)
        assert np.array_equal(evaluate(model, [-1e-12]), evaluate(model, [0.0]))

    def test_rejects_non_finite(self):
        model = Langmuir(K=[0.0388], Nstar=107.0)
        with pytest.raises(ValueError, match="finite"):
            evaluate(model, [np.nan])
        with pytest.raises(ValueError, match="finite"):
            evaluate(model, [np.inf])

    def test_monotone_in_own_concentration(self):
        model = Langmuir(K=[0.0388], Nstar=107.0)
        c = np.linspace(0.0, 50.0, 400)[:, None]
        h = evaluate(model, c)[:, 0]
        assert np.all(np.diff(h) > 0)

    def test_saturation_bounds(self):
        rng = np.random.default_rng(7)
        lang = random_feasible("langmuir", rng)
        bi = random_feasible("bi_langmuir", rng)
        c = rng.uniform(0, 1e4, (200, 2))
        assert np.all(evaluate(lang, c) < lang.Nstar)
        assert np.all(evaluate(bi, c) < bi.Nstar1 + bi.Nstar2)


def finite_difference_jacobian(model, c, h=1e-6):
    """Independent central-difference oracle for dH/dc."""
    m = model.species_count
    out = np.empty((m, m))
    for j in range(m):
        step = np.zeros(m)
        step[j] = h * max(1.0, abs(c[j]))
        out[:, j] = (evaluate(model, c + step) - evaluate(model, c - step)) / (2 * step[j])
    return out


def lattice_analytic_derivative(model, c):
    """Analytic H'(c) for the lattice family, via polynomial calculus."""
    a = model.partition_coefficients()
    i = np.arange(a.size)
    x = model.K * c
    z = np.polynomial.polynomial.polyval(x, a)
    zp = np.polynomial.polynomial.polyval(x, (a * i)[1:])  # Z'
    xzp = x * zp
    # d/dx (x Z' / Z) = (Z' + x Z'') Z - x Z'^2, all over Z^2
    zpp = np.polynomial.polynomial.polyval(x, (a * i * (i - 1))[2:])
    num = (zp + x * zpp) * z - xzp * zp
    return 0.5 * model.Nstar * model.K * num / (model.degree * z * z)


class TestJacobian:
    def test_langmuir_slope_at_zero(self):
        model = Langmuir(K=[0.0388], Nstar=107.0)
        assert jacobian(model, [0.0])[0, 0] == pytest.approx(4.1516, rel=1e-12)

    def test_decoupled_species_off_diagonal_zero(self):
        model = Langmuir(K=[0.1, 0.0], Nstar=107.0)
        jac = jacobian(model, [5.0, 3.0])
        assert jac[0, 1] == 0.0

    @pytest.mark.parametrize("family", isotherms.FAMILIES)
    def test_matches_finite_differences(self, family):
        rng = np.random.default_rng(42)
        for _ in range(100):
            model = random_feasible(family, rng)
            c = rng.uniform(0.5, 30.0, model.species_count)
            jac = jacobian(model, c)
            ref = finite_difference_jacobian(model, c)
            scale = np.abs(ref).max()
            assert np.allclose(jac, ref, atol=1e-6 * max(scale, 1.0), rtol=1e-6)

    def test_lattice_matches_analytic_derivative(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            model = random_feasible("lattice", rng)
            c = rng.uniform(0.1, 25.0)
            assert jacobian(model, [c])[0, 0] == pytest.approx(
                lattice_analytic_derivative(model, c), rel=1e-6
            )

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            jacobian(Langmuir(K=[0.1], Nstar=10.0), [np.nan])


class TestCodec:
    CASES = [
        (ModelTemplate("langmuir", 2), 3),
        (ModelTemplate("langmuir", 3), 4),
        (ModelTemplate("bi_langmuir", 2), 6),
        (ModelTemplate("lattice", 1, degree=4), 5),
        (ModelTemplate("lattice", 1, degree=3), 4),
        (ModelTemplate("modified_langmuir", 3), 6),
    ]

    @pytest.mark.parametrize("template,n", CASES)
    def test_param_count(self, template, n):
        assert param_count(template) == n
        assert len(param_names(template)) == n

    @pytest.mark.parametrize("template,n", CASES)
    def test_pack_unpack_roundtrip(self, template, n):
        rng = np.random.default_rng(11)
        theta = rng.uniform(0.5, 2.0, n)
        assert np.array_equal(pack(unpack(template, theta)), theta)

    def test_unpack_pack_identity_on_models(self):
        rng = np.random.default_rng(13)
        for family in isotherms.FAMILIES:
            model = random_feasible(family, rng)
            template = isotherms.template_of(model)
            rebuilt = unpack(template, pack(model))
            assert np.array_equal(pack(rebuilt), pack(model))

    def test_langmuir_names_order(self):
        names = param_names(ModelTemplate("langmuir", 2))
        assert names == ["K1", "K2", "Nstar"]

    def test_lattice_names_order(self):
        assert param_names(ModelTemplate("lattice", 1, degree=4)) == [
            "K", "Nstar", "E2", "E3", "E4",
        ]

    def test_unpack_rejects_wrong_length(self):
        with pytest.raises(ValueError, match="parameters"):
            unpack(ModelTemplate("langmuir", 2), [0.1, 0.2])

    def test_unpack_allows_non_positive_entries(self):
        model = unpack(ModelTemplate("langmuir", 1), [-0.5, 107.0])
        assert model.K[0] == -0.5

    def test_lattice_requires_single_species(self):
        with pytest.raises(ValueError, match="single species"):
            ModelTemplate("lattice", 2, degree=2)
