"""Compiled marching kernels for the transport solver.

The upwind march is a tight loop over space layers; these numba kernels
remove the per-layer array-dispatch overhead of the reference numpy
implementation in ``transport.simulate``.  Both paths compute the same
update in the same order; the solver falls back to the numpy loop when
numba is unavailable or ``CHROMIDENT_NO_NUMBA`` is set.

All Langmuir-type families are expressed as a sum over site groups s of
N[s, i] * K[s, i] * c_i / (1 + sum_l K[s, l] * c_l); the lattice family
gets its own polynomial kernel.  Kernels return (-1, -1) on success or
the (space, time) index of the first non-finite / out-of-bound value.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by the dispatch tests
    if os.environ.get("CHROMIDENT_NO_NUMBA"):
        raise ImportError("numba disabled by CHROMIDENT_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def march_sites(layer, initial, site_k, site_n, rho, velocity, ratio, blowup):
    """In-place upwind march for site-sum isotherms.

    ``layer`` enters as the inlet history (time on axis 0) and leaves as
    the outlet layer.  ``site_k``/``site_n`` have shape (sites, m).
    """
    n_rows, m = layer.shape
    n_layers = initial.shape[0] - 1
    sites = site_k.shape[0]
    flux = np.empty((n_rows, m))
    for k in range(n_layers):
        for n in range(n_rows):
            for s in range(sites):
                denom = 1.0
                for j in range(m):
                    c = layer[n, j]
                    if c < 0.0:
                        c = 0.0
                    denom += site_k[s, j] * c
                for j in range(m):
                    c = layer[n, j]
                    if c < 0.0:
                        c = 0.0
                    term = rho * site_n[s, j] * site_k[s, j] * c / denom
                    if s == 0:
                        flux[n, j] = (c + term) / velocity
                    else:
                        flux[n, j] += term / velocity
        for n in range(n_rows - 1, 0, -1):
            for j in range(m):
                value = layer[n, j] - ratio * (flux[n, j] - flux[n - 1, j])
                if not (abs(value) < blowup):
                    return k + 1, n
                layer[n, j] = value
        for j in range(m):
            layer[0, j] = initial[k + 1, j]
    return -1, -1


@njit(cache=True)
def march_lattice(layer, initial, kcoef, nstar, coeffs, degree, rho, velocity, ratio, blowup):
    """In-place upwind march for the single-species lattice isotherm.

    ``coeffs`` are the partition polynomial coefficients a_0..a_d; the
    adsorbed amount is (N*/2) (x Z'(x)) / (d Z(x)) with x = K c.
    """
    n_rows = layer.shape[0]
    n_layers = initial.shape[0] - 1
    flux = np.empty(n_rows)
    for k in range(n_layers):
        for n in range(n_rows):
            c = layer[n, 0]
            if c < 0.0:
                c = 0.0
            x = kcoef * c
            z = coeffs[degree]
            xzp = degree * coeffs[degree]
            for i in range(degree - 1, 0, -1):
                z = z * x + coeffs[i]
                xzp = xzp * x + i * coeffs[i]
            z = z * x + coeffs[0]
            xzp = xzp * x
            h = 0.5 * nstar * xzp / (degree * z)
            flux[n] = (c + rho * h) / velocity
        for n in range(n_rows - 1, 0, -1):
            value = layer[n, 0] - ratio * (flux[n] - flux[n - 1])
            if not (abs(value) < blowup):
                return k + 1, n
            layer[n, 0] = value
        layer[0, 0] = initial[k + 1, 0]
    return -1, -1
