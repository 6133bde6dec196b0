# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Battery terminal power models.

The physical model branches on the sign of traction power: discharging divides
by the drivetrain efficiencies, regeneration multiplies by them and by a speed
dependent recovery factor. The polynomial surrogate keeps eight monomials in
``(v, a)`` and is fitted against the physical model; freezing the higher order
speed factor at a reference speed turns it into a quadratic form that the
controller can use as a convex cost.
"""
import dataclasses
import functools
import hashlib
import json
import logging
import pathlib

import numpy as np
import scipy.optimize

from .common import PadeepcException, __version__

log = logging.getLogger(__name__)

#: Monomials ``v**i * a**j`` kept by the surrogate, as ``(i, j)``.
RETAINED = ((0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (3, 0))

#: Cross terms pinned to zero.
PINNED = ((1, 1), (2, 2), (3, 1), (3, 2))

DEFAULT_V_RANGE = (0.0, 25.0)
DEFAULT_A_RANGE = (-5.0, 4.0)


class EnergyModelError(PadeepcException):
    """
    Raised on invalid energy model parameters, inputs or fits.
    """


class NonConvexPowerError(EnergyModelError):
    """
    Raised when a convex power form would have an indefinite Hessian.
    """

    def __init__(self, v_bar, min_eig):
        self.v_bar = v_bar
        self.min_eig = min_eig
        super().__init__(
            f"Power form at v_bar={v_bar:.3f} m/s is not convex "
            f"(min eigenvalue {min_eig:.3e})"
        )


@dataclasses.dataclass(frozen=True)
class PhysicalEnergyParams:
    """
    Vehicle parameters of the physical power model.
    """

    mass: float = 1500.0
    f_roll: float = 0.015
    g: float = 9.81
    rho: float = 1.225
    C_D: float = 0.30
    A_f: float = 2.2
    delta_mass: float = 1.05
    eta_t: float = 0.95
    eta_m: float = 0.90
    grade: float = 0.0

    def __post_init__(self):
        for name in ("mass", "f_roll", "g", "rho", "C_D", "A_f", "delta_mass"):
            if not getattr(self, name) > 0:
                raise EnergyModelError(f"{name} must be positive")
        for name in ("eta_t", "eta_m"):
            if not 0 < getattr(self, name) <= 1:
                raise EnergyModelError(f"{name} must be in (0, 1]")

    def digest(self):
        """
        Return a short hash identifying these parameters.
        """
        text = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclasses.dataclass
class PolyCoefficients:
    """
    Coefficients ``p[i, j]`` of ``sum p_ij v**i a**j`` in watts.
    """

    p: np.ndarray
    rms: float = float("nan")
    v_range: tuple = DEFAULT_V_RANGE
    a_range: tuple = DEFAULT_A_RANGE
    params_hash: str = ""

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (4, 3):
            raise EnergyModelError(f"Coefficient grid has shape {self.p.shape}")
        if not np.all(np.isfinite(self.p)):
            raise EnergyModelError("Coefficients must be finite")
        for i, j in PINNED:
            if self.p[i, j] != 0.0:
                raise EnergyModelError(f"Cross term p_{i}{j} must be zero")


def regen_factor(v):
    """
    Fraction of braking power recovered by the motor at speed ``v``.

    Rises linearly to 0.5 at 5 m/s and then by 0.3 per 20 m/s.

    :raises EnergyModelError: On negative speed
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0):
        raise EnergyModelError("Speed must be nonnegative")
    k = np.where(v_arr < 5.0, 0.5 * v_arr / 5.0, 0.5 + 0.3 * (v_arr - 5.0) / 20.0)
    return float(k) if k.ndim == 0 else k


def physical_power(v, a, p=None):
    """
    Battery terminal power in watts, negative while regenerating.

    :param v: Speed(s) in m/s
    :param a: Acceleration(s) in m/s^2
    :param p: Vehicle parameters, nominal when omitted
    :type p: :class:`PhysicalEnergyParams`
    """
    if p is None:
        p = PhysicalEnergyParams()
    v_arr, a_arr = np.broadcast_arrays(
        np.asarray(v, dtype=float), np.asarray(a, dtype=float)
    )
    k = np.asarray(regen_factor(v_arr))
    force = (
        p.mass * p.g * (p.f_roll * np.cos(p.grade) + np.sin(p.grade))
        + 0.5 * p.rho * p.C_D * p.A_f * v_arr**2
        + p.mass * p.delta_mass * a_arr
    )
    traction = v_arr * force
    eta = p.eta_t * p.eta_m
    power = np.where(traction >= 0, traction / eta, k * eta * traction)
    return float(power) if power.ndim == 0 else power


def poly_power(v, a, c):
    """
    Evaluate the polynomial surrogate in watts.

    :type c: :class:`PolyCoefficients`
    """
    v_arr, a_arr = np.broadcast_arrays(
        np.asarray(v, dtype=float), np.asarray(a, dtype=float)
    )
    total = np.zeros(v_arr.shape)
    for i in range(4):
        for j in range(3):
            if c.p[i, j]:
                total = total + c.p[i, j] * v_arr**i * a_arr**j
    return float(total) if total.ndim == 0 else total


def _design(v, a):
    return np.column_stack([v**i * a**j for i, j in RETAINED])


def _index(i, j):
    return RETAINED.index((i, j))


def _is_convex(q):
    q20, q02, q30, q12, q21 = (
        q[_index(2, 0)],
        q[_index(0, 2)],
        q[_index(3, 0)],
        q[_index(1, 2)],
        q[_index(2, 1)],
    )
    return min(q20, q02, q30, q12) >= 0 and q21**2 <= 4 * q30 * q12


def _project_convex(q):
    q = q.copy()
    for ij in ((2, 0), (0, 2), (3, 0), (1, 2)):
        q[_index(*ij)] = max(q[_index(*ij)], 0.0)
    limit = 2.0 * np.sqrt(q[_index(3, 0)] * q[_index(1, 2)]) * (1.0 - 1e-9)
    q[_index(2, 1)] = float(np.clip(q[_index(2, 1)], -limit, limit))
    return q


def _convex_fit(X, y, q_start):
    i30, i12, i21 = _index(3, 0), _index(1, 2), _index(2, 1)
    count = float(len(y))

    def objective(q):
        resid = X @ q - y
        return 0.5 * float(resid @ resid) / count

    def gradient(q):
        return X.T @ (X @ q - y) / count

    def curvature(q):
        return 4.0 * q[i30] * q[i12] - q[i21] ** 2

    def curvature_jac(q):
        jac = np.zeros_like(q)
        jac[i30] = 4.0 * q[i12]
        jac[i12] = 4.0 * q[i30]
        jac[i21] = -2.0 * q[i21]
        return jac

    bounds = [
        (0.0, None) if ij in ((2, 0), (0, 2), (3, 0), (1, 2)) else (None, None)
        for ij in RETAINED
    ]
    result = scipy.optimize.minimize(
        objective,
        _project_convex(q_start),
        jac=gradient,
        method="SLSQP",
        bounds=bounds,
        constraints=[{"type": "ineq", "fun": curvature, "jac": curvature_jac}],
        options={"maxiter": 1000, "ftol": 1e-14},
    )
    if not result.success:
        log.warning("Convex power fit did not converge: %s", result.message)
    return _project_convex(result.x)


def fit_poly_surface(v, a, power, convex=True):
    """
    Least-squares fit of the eight retained monomials to samples of a surface.

    When ``convex`` is set and the unconstrained optimum would give an
    indefinite :class:`ConvexPowerForm` for some reference speed, the fit is
    re-solved subject to ``p20, p02, p30, p12 >= 0`` and
    ``p21**2 <= 4 p30 p12``.

    :param v: Sample speeds
    :param a: Sample accelerations
    :param power: Sample powers in watts
    :param convex: Enforce convexity of the derived power forms
    :type convex: bool

    :raises EnergyModelError: If the monomials are rank deficient on the samples

    :rtype: :class:`PolyCoefficients`
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    power = np.asarray(power, dtype=float).reshape(-1)
    if not v.size == a.size == power.size:
        raise EnergyModelError("Sample arrays differ in length")
    v_scale = max(float(np.abs(v).max(initial=0.0)), 1.0)
    a_scale = max(float(np.abs(a).max(initial=0.0)), 1.0)
    p_scale = max(float(np.abs(power).max(initial=0.0)), 1.0)
    X = _design(v / v_scale, a / a_scale)
    if np.linalg.matrix_rank(X) < len(RETAINED):
        raise EnergyModelError("Rank deficient normal equations for the power fit")
    y = power / p_scale
    q, *_ = np.linalg.lstsq(X, y, rcond=None)
    if convex and not _is_convex(q):
        log.debug("Unconstrained power fit is not convex, refitting with constraints")
        q = _convex_fit(X, y, q)
    grid = np.zeros((4, 3))
    for value, (i, j) in zip(q, RETAINED):
        grid[i, j] = p_scale * value / (v_scale**i * a_scale**j)
    coeffs = PolyCoefficients(p=grid)
    coeffs.rms = float(np.sqrt(np.mean((poly_power(v, a, coeffs) - power) ** 2)))
    coeffs.v_range = (float(v.min()), float(v.max()))
    coeffs.a_range = (float(a.min()), float(a.max()))
    return coeffs


def fit_poly_coeffs(p=None, v_grid=None, a_grid=None, convex=True):
    """
    Fit the polynomial surrogate to :func:`physical_power` on a grid.

    :param p: Vehicle parameters, nominal when omitted
    :type p: :class:`PhysicalEnergyParams`
    :param v_grid: Speeds, defaults to 51 points over [0, 25]
    :param a_grid: Accelerations, defaults to 46 points over [-5, 4]

    :rtype: :class:`PolyCoefficients`
    """
    if p is None:
        p = PhysicalEnergyParams()
    if v_grid is None:
        v_grid = np.linspace(*DEFAULT_V_RANGE, 51)
    if a_grid is None:
        a_grid = np.linspace(*DEFAULT_A_RANGE, 46)
    v_grid = np.asarray(v_grid, dtype=float)
    a_grid = np.asarray(a_grid, dtype=float)
    if v_grid.size < 20 or a_grid.size < 20:
        raise EnergyModelError("Fit grids need at least 20 points per axis")
    vv, aa = np.meshgrid(v_grid, a_grid, indexing="ij")
    coeffs = fit_poly_surface(vv, aa, physical_power(vv, aa, p), convex=convex)
    coeffs.params_hash = p.digest()
    log.info("Fitted power surrogate with RMS %.1f W", coeffs.rms)
    return coeffs


@functools.lru_cache(maxsize=8)
def nominal_coefficients(p=None):
    """
    Return (and cache) the surrogate fitted for ``p`` on the default grid.
    """
    return fit_poly_coeffs(p)


def save_coefficients(c, path):
    """
    Write a coefficient fixture as JSON.
    """
    doc = {
        "version": __version__,
        "p_ij": c.p.tolist(),
        "v_range": list(c.v_range),
        "a_range": list(c.a_range),
        "rms": c.rms,
        "params_hash": c.params_hash,
    }
    pathlib.Path(path).write_text(json.dumps(doc, indent=2))


def load_coefficients(path):
    """
    Read a coefficient fixture written by :func:`save_coefficients`.
    """
    try:
        doc = json.loads(pathlib.Path(path).read_text())
        return PolyCoefficients(
            p=np.array(doc["p_ij"], dtype=float),
            rms=float(doc["rms"]),
            v_range=tuple(doc["v_range"]),
            a_range=tuple(doc["a_range"]),
            params_hash=doc.get("params_hash", ""),
        )
    except (OSError, KeyError, ValueError) as exc:
        raise EnergyModelError(f"Unable to read coefficients from {path}: {exc}")


@dataclasses.dataclass(frozen=True)
class ConvexPowerForm:
    """
    Quadratic power estimate in ``(v, a)`` around a reference speed.

    ``P(v, a) = c_vv v**2 + c_aa a**2 + c_va v a + c_v v + c_a a + c_0``
    """

    v_bar: float
    c_vv: float
    c_aa: float
    c_va: float
    c_v: float
    c_a: float
    c_0: float

    def __post_init__(self):
        hess = self.hessian()
        scale = max(1.0, float(np.abs(hess).max()))
        min_eig = float(np.linalg.eigvalsh(hess)[0])
        if min_eig < -1e-9 * scale:
            raise NonConvexPowerError(self.v_bar, min_eig)

    def hessian(self):
        return np.array([[2 * self.c_vv, self.c_va], [self.c_va, 2 * self.c_aa]])

    def evaluate(self, v, a):
        v = np.asarray(v, dtype=float)
        a = np.asarray(a, dtype=float)
        value = (
            self.c_vv * v**2
            + self.c_aa * a**2
            + self.c_va * v * a
            + self.c_v * v
            + self.c_a * a
            + self.c_0
        )
        return float(value) if np.ndim(value) == 0 else value


def convex_power_form(v_bar, c):
    """
    Freeze the higher order speed factor of the surrogate at ``v_bar``.

    :param v_bar: Reference speed in m/s
    :type v_bar: float
    :param c: Surrogate coefficients
    :type c: :class:`PolyCoefficients`

    :raises NonConvexPowerError: If the resulting form is not convex

    :rtype: :class:`ConvexPowerForm`
    """
    if v_bar < 0:
        raise EnergyModelError("Reference speed must be nonnegative")
    p = c.p
    return ConvexPowerForm(
        v_bar=float(v_bar),
        c_vv=float(p[3, 0] * v_bar + p[2, 0]),
        c_aa=float(p[1, 2] * v_bar + p[0, 2]),
        c_va=float(p[2, 1] * v_bar),
        c_v=float(p[1, 0]),
        c_a=float(p[0, 1]),
        c_0=float(p[0, 0]),
    )


def trip_energy(trajectory, c):
    """
    Integrate surrogate power over a trajectory.

    :param trajectory: A trajectory with ``velocity``/``acceleration`` arrays of shape
        ``(steps, vehicles)`` and a ``dt`` attribute
    :type trajectory: :class:`padeepc.trajectory.TrajectoryLog`
    :param c: Surrogate coefficients
    :type c: :class:`PolyCoefficients`

    :return: Energy per vehicle in kJ
    :rtype: ``numpy.ndarray``
    """
    velocity = np.asarray(trajectory.velocity, dtype=float)
    if velocity.size == 0:
        raise EnergyModelError("Cannot integrate energy over an empty log")
    power = np.asarray(poly_power(velocity, trajectory.acceleration, c))
    if power.ndim == 1:
        power = power[:, None]
    return power.sum(axis=0) * trajectory.dt / 1000.0
