"""Parametric adsorption isotherm families.

Four families are supported: single-site Langmuir, two-site Bi-Langmuir,
a single-component lattice model with aggregate interaction energies, and
a Langmuir variant with one saturation coefficient per species.  Each
family provides the adsorbed amount H(c), its Jacobian, and a codec
between model instances and flat parameter vectors (the representation
the optimizer works on).

Positivity of K and N* is a feasibility requirement of the physics, but
it is deliberately *not* enforced by the constructors or by ``unpack``:
the inverse solver explores unconstrained parameter vectors and maps
infeasible ones to a penalty instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

R_GAS = 8.314462618
"""Universal gas constant, J/(mol K)."""

FAMILIES = ("langmuir", "bi_langmuir", "lattice", "modified_langmuir")


def _vector(x, name: str, length: int | None = None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if length is not None and arr.size != length:
        raise ValueError(f"{name} must have length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Langmuir:
    """Competitive single-site isotherm: H_i = N* K_i c_i / (1 + sum K_l c_l)."""

    K: np.ndarray
    Nstar: float

    def __post_init__(self):
        object.__setattr__(self, "K", _vector(self.K, "K"))
        object.__setattr__(self, "Nstar", float(self.Nstar))

    @property
    def species_count(self) -> int:
        return self.K.size


@dataclass(frozen=True, eq=False)
class BiLangmuir:
    """Two-site Langmuir: the sum of two competitive terms, one per site kind."""

    K1: np.ndarray
    K2: np.ndarray
    Nstar1: float
    Nstar2: float

    def __post_init__(self):
        object.__setattr__(self, "K1", _vector(self.K1, "K1"))
        object.__setattr__(self, "K2", _vector(self.K2, "K2", self.K1.size))
        object.__setattr__(self, "Nstar1", float(self.Nstar1))
        object.__setattr__(self, "Nstar2", float(self.Nstar2))

    @property
    def species_count(self) -> int:
        return self.K1.size


@dataclass(frozen=True, eq=False)
class LatticeSingle:
    """Single-component lattice isotherm of aggregate degree d >= 2.

    ``energies[i]`` is the interaction energy (J/mol) of aggregates of
    order i + 2, i.e. orders 2..d.  With x = K c and the aggregate
    partition function

        Z(x) = 1 + d x + sum_{i=2..d} binom(d, i) exp(-E_i / RT) x^i,

    the adsorbed amount is H(c) = (N*/2) (x Z'(x)) / (d Z(x)).  At d = 2
    this is the classical two-site lattice formula, and with all energies
    zero it collapses to half a Langmuir isotherm for every degree.
    """

    K: float
    Nstar: float
    energies: np.ndarray
    degree: int
    temperature: float = 300.0

    def __post_init__(self):
        d = int(self.degree)
        if d < 2:
            raise ValueError(f"degree must be >= 2, got {d}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive (Kelvin)")
        object.__setattr__(self, "degree", d)
        object.__setattr__(self, "K", float(self.K))
        object.__setattr__(self, "Nstar", float(self.Nstar))
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(
            self, "energies", _vector(self.energies, "energies", d - 1)
        )

    @property
    def species_count(self) -> int:
        return 1

    def partition_coefficients(self) -> np.ndarray:
        """Coefficients a_0..a_d of Z(x), low order first."""
        d = self.degree
        a = np.empty(d + 1)
        a[0] = 1.0
        a[1] = float(d)
        rt = R_GAS * self.temperature
        for i in range(2, d + 1):
            a[i] = math.comb(d, i) * math.exp(-self.energies[i - 2] / rt)
        return a


@dataclass(frozen=True, eq=False)
class ModifiedLangmuir:
    """Langmuir with a separate saturation coefficient per species."""

    K: np.ndarray
    Nstar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", _vector(self.K, "K"))
        object.__setattr__(self, "Nstar", _vector(self.Nstar, "Nstar", self.K.size))

    @property
    def species_count(self) -> int:
        return self.K.size


IsothermModel = Langmuir | BiLangmuir | LatticeSingle | ModifiedLangmuir


def _clean_concentration(model, c) -> np.ndarray:
    """Validate a concentration array and clamp solver undershoot to zero."""
    arr = np.asarray(c, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != model.species_count:
        raise ValueError(
            f"concentration has {arr.shape[-1]} species, model has "
            f"{model.species_count}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("concentration must be finite")
    return np.maximum(arr, 0.0)


def evaluate(model: IsothermModel, c) -> np.ndarray:
    """Adsorbed amount H(c).

    ``c`` is a concentration vector of length m, or any array whose last
    axis has length m (evaluated pointwise).  Negative entries are
    clamped to zero before evaluation.
    """
    c = _clean_concentration(model, c)
    if isinstance(model, Langmuir):
        denom = 1.0 + c @ model.K
        return model.Nstar * (c * model.K) / denom[..., None]
    if isinstance(model, BiLangmuir):
        d1 = 1.0 + c @ model.K1
        d2 = 1.0 + c @ model.K2
        return (
            model.Nstar1 * (c * model.K1) / d1[..., None]
            + model.Nstar2 * (c * model.K2) / d2[..., None]
        )
    if isinstance(model, ModifiedLangmuir):
        denom = 1.0 + c @ model.K
        return (model.Nstar * model.K) * c / denom[..., None]
    if isinstance(model, LatticeSingle):
        x = model.K * c[..., 0]
        a = model.partition_coefficients()
        xa = a * np.arange(a.size)  # coefficients of x Z'(x)
        z = npoly.polyval(x, a)
        num = npoly.polyval(x, xa)
        h = 0.5 * model.Nstar * num / (model.degree * z)
        return h[..., None]
    raise TypeError(f"unknown isotherm model {type(model).__name__}")


def _langmuir_term_jacobian(K: np.ndarray, c: np.ndarray) -> np.ndarray:
    """d/dc_j of K_i c_i / (1 + sum K_l c_l), as an m x m matrix."""
    s = 1.0 + c @ K
    return (np.diag(K) * s - np.outer(K * c, K)) / s**2


def jacobian(model: IsothermModel, c) -> np.ndarray:
    """Jacobian dH_i/dc_j at a single concentration vector, shape (m, m).

    Closed form for the Langmuir-type families; central finite
    differences (one-sided against the c >= 0 boundary) for the lattice
    model, with step h = max(1e-6, 1e-6 |c|).
    """
    c = _clean_concentration(model, c)
    if c.ndim != 1:
        raise ValueError("jacobian expects a single concentration vector")
    if isinstance(model, Langmuir):
        return model.Nstar * _langmuir_term_jacobian(model.K, c)
    if isinstance(model, BiLangmuir):
        return model.Nstar1 * _langmuir_term_jacobian(
            model.K1, c
        ) + model.Nstar2 * _langmuir_term_jacobian(model.K2, c)
    if isinstance(model, ModifiedLangmuir):
        return model.Nstar[:, None] * _langmuir_term_jacobian(model.K, c)
    if isinstance(model, LatticeSingle):
        x = c[0]
        h = max(1e-6, 1e-6 * abs(x))
        if x >= h:
            d = (evaluate(model, [x + h]) - evaluate(model, [x - h]))[0] / (2 * h)
        else:
            d = (evaluate(model, [x + h]) - evaluate(model, [x]))[0] / h
        return d.reshape(1, 1)
    raise TypeError(f"unknown isotherm model {type(model).__name__}")


@dataclass(frozen=True)
class ModelTemplate:
    """Shape of an isotherm model: family plus the fixed structural settings."""

    family: str
    species_count: int
    degree: int | None = None
    temperature: float = 300.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.species_count < 1:
            raise ValueError("species_count must be >= 1")
        if self.family == "lattice":
            if self.species_count != 1:
                raise ValueError("the lattice model supports a single species only")
            if self.degree is None or self.degree < 2:
                raise ValueError("lattice template needs degree >= 2")
            if not self.temperature > 0:
                raise ValueError("temperature must be positive (Kelvin)")


def param_count(template: ModelTemplate) -> int:
    m = template.species_count
    if template.family == "langmuir":
        return m + 1
    if template.family == "bi_langmuir":
        return 2 * (m + 1)
    if template.family == "lattice":
        return template.degree + 1
    return 2 * m  # modified_langmuir


def param_names(template: ModelTemplate) -> list[str]:
    """Canonical parameter names in packing order: K entries, N* entries, E entries."""
    m = template.species_count
    if template.family == "langmuir":
        return [f"K{i + 1}" for i in range(m)] + ["Nstar"]
    if template.family == "bi_langmuir":
        ks = [f"K{i + 1}_s{s + 1}" for s in range(2) for i in range(m)]
        return ks + ["Nstar_s1", "Nstar_s2"]
    if template.family == "lattice":
        return ["K", "Nstar"] + [f"E{i}" for i in range(2, template.degree + 1)]
    return [f"K{i + 1}" for i in range(m)] + [f"Nstar{i + 1}" for i in range(m)]


def pack(model: IsothermModel) -> np.ndarray:
    """Flatten a model to its canonical parameter vector."""
    if isinstance(model, Langmuir):
        return np.concatenate([model.K, [model.Nstar]])
    if isinstance(model, BiLangmuir):
        return np.concatenate([model.K1, model.K2, [model.Nstar1, model.Nstar2]])
    if isinstance(model, LatticeSingle):
        return np.concatenate([[model.K, model.Nstar], model.energies])
    if isinstance(model, ModifiedLangmuir):
        return np.concatenate([model.K, model.Nstar])
    raise TypeError(f"unknown isotherm model {type(model).__name__}")


def unpack(template: ModelTemplate, theta) -> IsothermModel:
    """Build a model from a flat parameter vector (inverse of ``pack``).

    Does not check positivity: infeasible vectors yield models whose
    feasibility is decided by the caller.
    """
    theta = np.asarray(theta, dtype=float)
    n = param_count(template)
    if theta.shape != (n,):
        raise ValueError(
            f"{template.family} with m={template.species_count} expects "
            f"{n} parameters, got shape {theta.shape}"
        )
    m = template.species_count
    if template.family == "langmuir":
        return Langmuir(K=theta[:m], Nstar=theta[m])
    if template.family == "bi_langmuir":
        return BiLangmuir(
            K1=theta[:m],
            K2=theta[m : 2 * m],
            Nstar1=theta[2 * m],
            Nstar2=theta[2 * m + 1],
        )
    if template.family == "lattice":
        return LatticeSingle(
            K=theta[0],
            Nstar=theta[1],
            energies=theta[2:],
            degree=template.degree,
            temperature=template.temperature,
        )
    return ModifiedLangmuir(K=theta[:m], Nstar=theta[m:])


def template_of(model: IsothermModel) -> ModelTemplate:
    if isinstance(model, Langmuir):
        return ModelTemplate("langmuir", model.species_count)
    if isinstance(model, BiLangmuir):
        return ModelTemplate("bi_langmuir", model.species_count)
    if isinstance(model, LatticeSingle):
        return ModelTemplate("lattice", 1, degree=model.degree, temperature=model.temperature)
    if isinstance(model, ModifiedLangmuir):
        return ModelTemplate("modified_langmuir", model.species_count)
    raise TypeError(f"unknown isotherm model {type(model).__name__}")
