"""Column transport solver for the chromatography conservation law.

The column equation is d_z c + d_t F(c) = 0 with flux
F(c) = (c + rho H(c)) / u, rho = (1 - porosity) / porosity, so the space
coordinate plays the evolution role.  The solver marches layer by layer
in z with the first-order upwind (Godunov) update

    c[k+1, n] = c[k, n] - (dz/dt) (F(c[k, n]) - F(c[k, n-1]))

which is stable while (dz/dt) max |eig F'(c)| stays below one.  Layer 0
is the time-sampled injection, the n = 0 entry of every layer is the
initial column loading (zero by default), and the outlet layer k = K is
returned as the chromatogram.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels, isotherms

BLOWUP_LIMIT = 1e12
"""Any intermediate |value| at or above this aborts the march as unstable."""


class InstabilityDetected(RuntimeError):
    """The upwind march produced a non-finite or absurdly large value."""

    def __init__(self, space_index: int, time_index: int):
        self.space_index = space_index
        self.time_index = time_index
        super().__init__(
            f"numerical instability at space layer {space_index}, "
            f"time index {time_index}"
        )


class DegenerateModelError(ValueError):
    """Flux Jacobian has zero spectral radius everywhere sampled."""


@dataclass(frozen=True)
class ColumnConfig:
    """Column geometry and flow: length, interstitial velocity, porosity."""

    length: float
    velocity: float
    porosity: float

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("column.length must be positive")
        if not self.velocity > 0:
            raise ValueError("column.velocity must be positive")
        if not 0.0 < self.porosity < 1.0:
            raise ValueError("column.porosity must lie in (0, 1)")

    @property
    def rho(self) -> float:
        """Solid-to-void volume ratio (1 - porosity) / porosity."""
        return (1.0 - self.porosity) / self.porosity


@dataclass(frozen=True)
class InjectionProfile:
    """Piecewise-constant inlet concentration over [0, duration].

    ``segments`` is a sequence of (t_start, t_end, concentration vector)
    with closed intervals; outside all segments the inlet is zero.
    """

    species_count: int
    duration: float
    segments: tuple = ()

    def __post_init__(self):
        if self.species_count < 1:
            raise ValueError("species_count must be >= 1")
        if not self.duration > 0:
            raise ValueError("injection.duration must be positive")
        norm = []
        for seg in self.segments:
            start, end, conc = seg
            conc = np.asarray(conc, dtype=float).reshape(-1)
            if conc.size != self.species_count:
                raise ValueError(
                    f"segment concentration has {conc.size} species, "
                    f"expected {self.species_count}"
                )
            if not np.all(np.isfinite(conc)) or np.any(conc < 0):
                raise ValueError("segment concentrations must be finite and >= 0")
            start, end = float(start), float(end)
            if not (0.0 <= start < end <= self.duration):
                raise ValueError(
                    f"segment [{start}, {end}] must lie within [0, {self.duration}]"
                )
            conc.setflags(write=False)
            norm.append((start, end, conc))
        norm.sort(key=lambda s: s[0])
        for a, b in zip(norm, norm[1:]):
            if b[0] < a[1]:
                raise ValueError("injection segments must not overlap")
        object.__setattr__(self, "segments", tuple(norm))

    def concentration_at(self, times) -> np.ndarray:
        """Inlet concentration sampled at the given times, shape (len(times), m)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.zeros((times.size, self.species_count))
        for start, end, conc in self.segments:
            mask = (times >= start) & (times <= end)
            out[mask] = conc
        return out

    def max_concentration(self) -> np.ndarray:
        """Componentwise maximum injected concentration."""
        out = np.zeros(self.species_count)
        for _, _, conc in self.segments:
            out = np.maximum(out, conc)
        return out


@dataclass(frozen=True)
class GridConfig:
    """Uniform space-time grid: n_space * dz spans the column, n_time * dt the run."""

    dt: float
    dz: float
    n_time: int
    n_space: int
    cfl_target: float = 0.8

    def __post_init__(self):
        if not self.dt > 0 or not self.dz > 0:
            raise ValueError("grid steps must be positive")
        if self.n_time < 2:
            raise ValueError("grid.n_time must be >= 2")
        if self.n_space < 1:
            raise ValueError("grid.n_space must be >= 1")
        if not 0.0 < self.cfl_target < 1.0:
            raise ValueError("grid.cfl_target must lie in (0, 1)")

    @property
    def duration(self) -> float:
        return self.n_time * self.dt


@dataclass
class Chromatogram:
    """Outlet concentration history: values[n, i] is species i at time n * dt."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("chromatogram values must be a 2-D array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("chromatogram values must be finite")
        if not self.dt > 0:
            raise ValueError("chromatogram dt must be positive")

    @property
    def species_count(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.dt


def flux(model, column: ColumnConfig, c) -> np.ndarray:
    """Conserved flux F(c) = (c + rho H(c)) / velocity, vectorized like ``evaluate``."""
    c = np.maximum(np.asarray(c, dtype=float), 0.0)
    return (c + column.rho * isotherms.evaluate(model, c)) / column.velocity


def _site_parameters(model) -> tuple[np.ndarray, np.ndarray]:
    """Langmuir-type models as site-group arrays (sites, m) for the kernels."""
    if isinstance(model, isotherms.Langmuir):
        ones = np.ones_like(model.K)
        return model.K[None, :].copy(), (model.Nstar * ones)[None, :]
    if isinstance(model, isotherms.ModifiedLangmuir):
        return model.K[None, :].copy(), model.Nstar[None, :].copy()
    if isinstance(model, isotherms.BiLangmuir):
        site_k = np.stack([model.K1, model.K2])
        site_n = np.stack(
            [model.Nstar1 * np.ones_like(model.K1), model.Nstar2 * np.ones_like(model.K2)]
        )
        return site_k, site_n
    raise TypeError(f"no site decomposition for {type(model).__name__}")


def flux_jacobian(model, column: ColumnConfig, c) -> np.ndarray:
    """F'(c) = (I + rho H'(c)) / velocity at a single concentration vector."""
    m = model.species_count
    return (np.eye(m) + column.rho * isotherms.jacobian(model, c)) / column.velocity


def spectral_radius_flux_jacobian(
    model, column: ColumnConfig, c, tol: float = 1e-10, max_iter: int = 500
) -> float:
    """Largest |eigenvalue| of F'(c).

    Exact for one species; otherwise power iteration from the all-ones
    vector until successive Rayleigh estimates agree to ``tol`` relative.
    Warns and returns the last estimate if it fails to settle.
    """
    jac = flux_jacobian(model, column, c)
    m = jac.shape[0]
    if m == 1:
        return abs(jac[0, 0])
    v = np.ones(m) / np.sqrt(m)
    estimate = None
    for _ in range(max_iter):
        w = jac @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        new_estimate = float(v @ w)
        v = w / norm_w
        if estimate is not None and abs(new_estimate - estimate) <= tol * abs(new_estimate):
            return abs(new_estimate)
        estimate = new_estimate
    warnings.warn(
        "power iteration for the flux spectral radius did not converge in "
        f"{max_iter} iterations; using the last estimate",
        RuntimeWarning,
    )
    return abs(estimate)


def _sample_concentration_domain(c_max: np.ndarray, points_per_axis: int = 33) -> np.ndarray:
    """Concentration probe points in [0, c_max]: a tensor grid for m <= 2,
    1000 fixed pseudo-random points otherwise."""
    m = c_max.size
    if m == 1:
        return np.linspace(0.0, c_max[0], points_per_axis)[:, None]
    if m == 2:
        axes = [np.linspace(0.0, c_max[i], points_per_axis) for i in range(m)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)
    rng = np.random.default_rng(0)  # fixed seed: calibration must be reproducible
    pts = rng.uniform(0.0, 1.0, size=(1000, m)) * c_max
    return np.vstack([np.zeros(m), pts])


def max_spectral_radius(model, column: ColumnConfig, c_max) -> float:
    """Maximum flux spectral radius over the sampled domain [0, c_max]."""
    c_max = np.atleast_1d(np.asarray(c_max, dtype=float))
    if c_max.size != model.species_count:
        raise ValueError("c_max must have one entry per species")
    points = _sample_concentration_domain(np.maximum(c_max, 0.0))
    return max(spectral_radius_flux_jacobian(model, column, p) for p in points)


def default_cmax(injection: InjectionProfile) -> np.ndarray:
    """Calibration concentration bound: twice the injection maxima."""
    return 2.0 * injection.max_concentration()


def calibrate_grid(
    model,
    column: ColumnConfig,
    dt: float,
    duration: float,
    c_max,
    cfl_target: float = 0.8,
) -> GridConfig:
    """Choose dz so the march satisfies the stability bound for this model.

    dz = cfl_target * dt / lambda_max, rounded so that an integer number
    of cells spans the column exactly; lambda_max is the flux spectral
    radius maximized over concentrations in [0, c_max].
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not 0.0 < cfl_target < 1.0:
        raise ValueError("cfl_target must lie in (0, 1)")
    n_time = int(round(duration / dt))
    if abs(n_time * dt - duration) > 1e-9 * duration or n_time < 2:
        raise ValueError(f"duration {duration} is not an exact multiple of dt {dt}")
    lam_max = max_spectral_radius(model, column, c_max)
    if not np.isfinite(lam_max) or lam_max <= 0.0:
        raise DegenerateModelError(
            f"flux spectral radius bound is {lam_max}; cannot set a grid"
        )
    dz_raw = cfl_target * dt / lam_max
    n_space = max(1, int(np.floor(column.length / dz_raw + 1e-12)))
    dz = column.length / n_space
    return GridConfig(
        dt=dt, dz=dz, n_time=n_time, n_space=n_space, cfl_target=cfl_target
    )


def simulate(
    model,
    column: ColumnConfig,
    grid: GridConfig,
    injection: InjectionProfile,
    c0=None,
) -> Chromatogram:
    """March the upwind scheme across the column and return the outlet layer.

    ``c0`` is the initial column loading as a function z -> concentration
    vector; None means a clean column.  Raises InstabilityDetected as
    soon as any layer value is non-finite or reaches ``BLOWUP_LIMIT``.
    """
    if injection.species_count != model.species_count:
        raise ValueError("injection and model species counts differ")
    if abs(grid.n_space * grid.dz - column.length) > 1e-9 * column.length:
        raise ValueError("grid does not span the column: n_space * dz != length")
    if abs(grid.duration - injection.duration) > 1e-9 * injection.duration:
        raise ValueError("grid does not span the injection duration")

    n_time, n_space = grid.n_time, grid.n_space
    times = np.arange(n_time + 1) * grid.dt
    if c0 is None:
        initial = np.zeros((n_space + 1, model.species_count))
    else:
        z = np.arange(n_space + 1) * grid.dz
        initial = np.asarray([np.asarray(c0(zk), dtype=float).reshape(-1) for zk in z])
        if initial.shape != (n_space + 1, model.species_count):
            raise ValueError("c0 must return one concentration vector per species")

    layer = injection.concentration_at(times)
    layer[0] = initial[0]
    ratio = grid.dz / grid.dt

    if _kernels.HAVE_NUMBA:
        layer = np.ascontiguousarray(layer)
        initial = np.ascontiguousarray(initial)
        if isinstance(model, isotherms.LatticeSingle):
            k_bad, n_bad = _kernels.march_lattice(
                layer,
                initial,
                model.K,
                model.Nstar,
                model.partition_coefficients(),
                model.degree,
                column.rho,
                column.velocity,
                ratio,
                BLOWUP_LIMIT,
            )
        else:
            site_k, site_n = _site_parameters(model)
            k_bad, n_bad = _kernels.march_sites(
                layer,
                initial,
                site_k,
                site_n,
                column.rho,
                column.velocity,
                ratio,
                BLOWUP_LIMIT,
            )
        if k_bad >= 0:
            raise InstabilityDetected(k_bad, n_bad)
        return Chromatogram(dt=grid.dt, values=layer)

    for k in range(n_space):
        f = flux(model, column, layer)
        nxt = np.empty_like(layer)
        nxt[0] = initial[k + 1]
        nxt[1:] = layer[1:] - ratio * (f[1:] - f[:-1])
        if not (np.abs(nxt) < BLOWUP_LIMIT).all():
            bad = ~(np.abs(nxt) < BLOWUP_LIMIT)
            time_index = int(np.nonzero(bad.any(axis=1))[0][0])
            raise InstabilityDetected(k + 1, time_index)
        layer = nxt
    return Chromatogram(dt=grid.dt, values=layer)
