# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Dense convex quadratic programming.

Problems have the form::

    minimize    1/2 z'Hz + f'z
    subject to  A_eq z  = b_eq
                lb_in  <= A_in z <= ub_in
                lb     <= z      <= ub

All constraints are stacked into a single two sided system ``l <= A z <= u``
which is solved with an operator splitting (ADMM) iteration on a Ruiz scaled
copy of the data. Once the iterate is close, the active set it identifies is
used to solve the reduced KKT system directly ("polishing"), which brings the
residuals down to the requested tolerances.
"""
import dataclasses
import enum
import json
import logging
import pathlib

import numpy as np
import scipy.linalg

from .common import PadeepcException

log = logging.getLogger(__name__)

RHO_MIN = 1e-6
RHO_MAX = 1e6
SCALING_MIN = 1e-4
SCALING_MAX = 1e4


class QpError(PadeepcException):
    """
    Raised when a problem is malformed: bad dimensions or a non-PSD Hessian.
    """


class Status(enum.Enum):
    """
    Termination status of :func:`solve_qp`.
    """

    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"


@dataclasses.dataclass(frozen=True)
class SolverSettings:
    """
    Tuning knobs of the ADMM iteration.

    The defaults follow the usual operator splitting choices: relaxation 1.6,
    a tiny proximal term and a much stiffer penalty on equality rows.
    """

    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eq_rho_scale: float = 1e3
    scaling_iter: int = 10
    adaptive_rho: bool = True
    adaptive_rho_tolerance: float = 5.0
    check_interval: int = 25
    eps_pinf: float = 1e-5
    eps_dinf: float = 1e-5
    polish: bool = True
    polish_delta: float = 1e-7
    polish_refine_iter: int = 40
    polish_trigger: float = 1e-3
    max_polish_attempts: int = 4


@dataclasses.dataclass
class Duals:
    """
    Lagrange multipliers split by constraint family.

    Positive entries push against upper bounds, negative ones against lower
    bounds.
    """

    eq: np.ndarray
    ineq: np.ndarray
    bounds: np.ndarray


@dataclasses.dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float


@dataclasses.dataclass
class QpSolution:
    """
    The outcome of :func:`solve_qp`.
    """

    z_star: np.ndarray
    objective: float
    status: Status
    residuals: Residuals
    iterations: int
    duals: Duals
    polished: bool = False


def _as_matrix(value, cols, name):
    if value is None:
        return np.zeros((0, cols))
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.size == 0:
        return np.zeros((0, cols))
    if arr.shape[1] != cols:
        raise QpError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    return arr


def _as_vector(value, size, name, fill=0.0):
    if value is None:
        return np.full(size, fill, dtype=float)
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1 and size != 1:
        arr = np.full(size, float(arr[0]))
    if arr.size != size:
        raise QpError(f"{name} has length {arr.size}, expected {size}")
    return arr


@dataclasses.dataclass
class QpProblem:
    """
    A dense convex quadratic program.

    The Hessian is symmetrized on construction and checked for positive
    semi-definiteness; a problem that fails the check raises :class:`QpError`.
    """

    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    lb_in: np.ndarray = None
    ub_in: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    psd_tol: float = 1e-9

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        n = self.f.size
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if n == 0 and H.size == 0:
            H = np.zeros((0, 0))
        if H.shape != (n, n):
            raise QpError(f"H has shape {H.shape}, expected {(n, n)}")
        self.H = 0.5 * (H + H.T)
        self.A_eq = _as_matrix(self.A_eq, n, "A_eq")
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0], "b_eq")
        self.A_in = _as_matrix(self.A_in, n, "A_in")
        self.lb_in = _as_vector(self.lb_in, self.A_in.shape[0], "lb_in", -np.inf)
        self.ub_in = _as_vector(self.ub_in, self.A_in.shape[0], "ub_in", np.inf)
        self.lb = _as_vector(self.lb, n, "lb", -np.inf)
        self.ub = _as_vector(self.ub, n, "ub", np.inf)
        for name in ("H", "f", "A_eq", "b_eq", "A_in"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise QpError(f"{name} contains non-finite entries")
        for name in ("lb", "lb_in"):
            if np.any(getattr(self, name) == np.inf):
                raise QpError(f"{name} contains +inf")
        for name in ("ub", "ub_in"):
            if np.any(getattr(self, name) == -np.inf):
                raise QpError(f"{name} contains -inf")
        self._check_psd()

    @property
    def n(self):
        return self.f.size

    def _check_psd(self):
        if self.n == 0:
            return
        scale = max(1.0, float(np.abs(self.H).max()))
        shift = self.psd_tol * scale * max(1, self.n)
        try:
            scipy.linalg.cho_factor(self.H + shift * np.eye(self.n), lower=True)
        except np.linalg.LinAlgError:
            min_eig = float(np.linalg.eigvalsh(self.H)[0])
            raise QpError(
                f"Hessian is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )

    def objective(self, z):
        """
        Evaluate ``1/2 z'Hz + f'z``.
        """
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def stacked(self):
        """
        Stack every constraint into ``l <= A z <= u``.

        Variable bounds contribute identity rows only for variables with at
        least one finite bound.

        :return: ``(A, l, u, bound_index)`` where ``bound_index`` lists the
            variables that received a bound row
        :rtype: tuple
        """
        bound_index = np.flatnonzero(np.isfinite(self.lb) | np.isfinite(self.ub))
        eye_rows = np.eye(self.n)[bound_index]
        A = np.vstack([self.A_eq, self.A_in, eye_rows])
        l = np.concatenate([self.b_eq, self.lb_in, self.lb[bound_index]])
        u = np.concatenate([self.b_eq, self.ub_in, self.ub[bound_index]])
        return A, l, u, bound_index

    def split_duals(self, y, bound_index):
        """
        Split a stacked multiplier vector back into :class:`Duals`.
        """
        me = self.A_eq.shape[0]
        mi = self.A_in.shape[0]
        bounds = np.zeros(self.n)
        bounds[bound_index] = y[me + mi :]
        return Duals(eq=y[:me].copy(), ineq=y[me : me + mi].copy(), bounds=bounds)


def kkt_residuals(p, z, duals=None):
    """
    Compute infinity-norm primal and dual residuals of a candidate point.

    :param p: The problem
    :type p: :class:`QpProblem`
    :param z: The primal point
    :type z: ``numpy.ndarray``
    :param duals: Multipliers; zero multipliers are assumed when omitted
    :type duals: :class:`Duals`

    :return: The residuals
    :rtype: :class:`Residuals`
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != p.n:
        raise QpError(f"Point has length {z.size}, expected {p.n}")
    if duals is None:
        duals = Duals(
            eq=np.zeros(p.A_eq.shape[0]),
            ineq=np.zeros(p.A_in.shape[0]),
            bounds=np.zeros(p.n),
        )
    violations = [0.0]
    if p.A_eq.shape[0]:
        violations.append(np.abs(p.A_eq @ z - p.b_eq).max())
    if p.A_in.shape[0]:
        Az = p.A_in @ z
        violations.append(np.maximum(Az - p.ub_in, p.lb_in - Az).max())
    if p.n:
        violations.append(np.maximum(z - p.ub, p.lb - z).max())
    stationarity = p.H @ z + p.f + duals.bounds
    if p.A_eq.shape[0]:
        stationarity = stationarity + p.A_eq.T @ duals.eq
    if p.A_in.shape[0]:
        stationarity = stationarity + p.A_in.T @ duals.ineq
    dual = float(np.abs(stationarity).max()) if p.n else 0.0
    return Residuals(primal=float(max(0.0, max(violations))), dual=dual)


def _inf_norm(vec):
    return float(np.abs(vec).max()) if vec.size else 0.0


def _violation(Az, l, u):
    if not Az.size:
        return 0.0
    return float(max(0.0, np.maximum(Az - u, l - Az).max()))


def _limit(values):
    values = np.where(values < SCALING_MIN, 1.0, values)
    return np.minimum(values, SCALING_MAX)


class _Scaling:
    """
    Modified Ruiz equilibration of ``(P, q, A)``.
    """

    def __init__(self, P, q, A, iterations):
        n = P.shape[0]
        m = A.shape[0]
        self.D = np.ones(n)
        self.E = np.ones(m)
        self.c = 1.0
        P = P.copy()
        q = q.copy()
        A = A.copy()
        for _ in range(iterations):
            col_norm = np.abs(P).max(axis=0) if n else np.zeros(0)
            if m:
                col_norm = np.maximum(col_norm, np.abs(A).max(axis=0))
            d = 1.0 / np.sqrt(_limit(col_norm))
            if m:
                e = 1.0 / np.sqrt(_limit(np.abs(A).max(axis=1)))
            else:
                e = np.ones(0)
            P = d[:, None] * P * d[None, :]
            q = d * q
            A = e[:, None] * A * d[None, :]
            self.D *= d
            self.E *= e
            mean_col = float(np.abs(P).max(axis=0).mean()) if n else 0.0
            gamma = max(mean_col, _inf_norm(q))
            gamma = float(_limit(np.array([gamma]))[0])
            cost = 1.0 / gamma
            P *= cost
            q *= cost
            self.c *= cost
        self.P = P
        self.q = q
        self.A = A


def _polish(p, A, l, u, x, z, y, settings, tol_primal, tol_dual):
    """
    Solve the equality-constrained KKT system of the guessed active set.

    :return: ``(x, y)`` on success, ``None`` when the guess does not verify
    """
    n = p.n
    equality = l == u
    lower = (equality | (z - l < -y)) & np.isfinite(l)
    upper = ~lower & (u - z < y) & np.isfinite(u)
    active = np.flatnonzero(lower | upper)
    rhs_bound = np.where(lower, l, u)[active]
    A_red = A[active]
    k = active.size
    delta = settings.polish_delta
    K = np.zeros((n + k, n + k))
    K[:n, :n] = p.H
    K[:n, n:] = A_red.T
    K[n:, :n] = A_red
    K_reg = K.copy()
    K_reg[:n, :n] += delta * np.eye(n)
    K_reg[n:, n:] -= delta * np.eye(k)
    rhs = np.concatenate([-p.f, rhs_bound])
    try:
        factor = scipy.linalg.lu_factor(K_reg, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return None
    sol = scipy.linalg.lu_solve(factor, rhs, check_finite=False)
    scale = max(1.0, _inf_norm(rhs))
    for _ in range(settings.polish_refine_iter):
        resid = rhs - K @ sol
        if _inf_norm(resid) <= 1e-14 * scale:
            break
        sol = sol + scipy.linalg.lu_solve(factor, resid, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None
    x_pol = sol[:n]
    y_pol = np.zeros(A.shape[0])
    y_pol[active] = sol[n:]
    prim = _violation(A @ x_pol, l, u)
    dual = _inf_norm(p.H @ x_pol + p.f + A.T @ y_pol)
    wrong_sign = np.concatenate(
        [
            y_pol[lower & ~equality].clip(min=0.0),
            (-y_pol[upper & ~equality]).clip(min=0.0),
        ]
    )
    if prim <= tol_primal and dual <= tol_dual and _inf_norm(wrong_sign) <= tol_dual:
        return x_pol, y_pol
    log.debug(
        "Polish rejected: primal %.2e dual %.2e sign %.2e",
        prim,
        dual,
        _inf_norm(wrong_sign),
    )
    return None


def _solution(p, x, y, status, iterations, bound_index, polished=False):
    duals = p.split_duals(y, bound_index)
    return QpSolution(
        z_star=x,
        objective=p.objective(x),
        status=status,
        residuals=kkt_residuals(p, x, duals),
        iterations=iterations,
        duals=duals,
        polished=polished,
    )


def solve_qp(
    p, tol_primal=1e-6, tol_dual=1e-6, max_iter=4000, settings=None, warm_start=None
):
    """
    Solve a convex quadratic program.

    Infeasibility is reported through :attr:`QpSolution.status` rather than
    raised.

    :param p: The problem
    :type p: :class:`QpProblem`
    :param tol_primal: Constraint violation tolerance (infinity norm)
    :type tol_primal: float
    :param tol_dual: Stationarity tolerance (infinity norm)
    :type tol_dual: float
    :param max_iter: Iteration cap of the ADMM loop
    :type max_iter: int
    :param settings: Solver tuning, defaults to :class:`SolverSettings`
    :type settings: :class:`SolverSettings`
    :param warm_start: A previous solution or primal point of the same size
    :type warm_start: :class:`QpSolution` or ``numpy.ndarray``

    :return: The solution record
    :rtype: :class:`QpSolution`
    """
    if settings is None:
        settings = SolverSettings()
    n = p.n
    A, l, u, bound_index = p.stacked()
    m = A.shape[0]

    if np.any(l > u + tol_primal):
        log.debug("Inconsistent constraint bounds, problem is primal infeasible")
        return _solution(
            p, np.zeros(n), np.zeros(m), Status.PRIMAL_INFEASIBLE, 0, bound_index
        )
    u = np.maximum(u, l)

    equality = l == u
    if settings.polish and (m == 0 or equality.all()):
        polished = _polish(
            p, A, l, u, np.zeros(n), np.zeros(m), np.zeros(m), settings,
            tol_primal, tol_dual,
        )
        if polished is not None:
            return _solution(
                p, polished[0], polished[1], Status.OPTIMAL, 0, bound_index, True
            )

    scaling = _Scaling(p.H, p.f, A, settings.scaling_iter)
    P_s, q_s, A_s = scaling.P, scaling.q, scaling.A
    D, E, c = scaling.D, scaling.E, scaling.c
    l_s = E * l
    u_s = E * u

    def rho_vector(rho):
        vec = np.full(m, rho)
        vec[equality] = settings.eq_rho_scale * rho
        vec[np.isinf(l) & np.isinf(u)] = RHO_MIN
        return vec

    rho = settings.rho
    rho_vec = rho_vector(rho)

    def factor(rho_vec):
        M = P_s + settings.sigma * np.eye(n) + A_s.T @ (rho_vec[:, None] * A_s)
        return scipy.linalg.cho_factor(M, lower=True, check_finite=False)

    kkt = factor(rho_vec)

    x = np.zeros(n)
    y = np.zeros(m)
    if warm_start is not None:
        if isinstance(warm_start, QpSolution):
            x0 = warm_start.z_star
            y0 = np.concatenate(
                [
                    warm_start.duals.eq,
                    warm_start.duals.ineq,
                    warm_start.duals.bounds[bound_index],
                ]
            )
        else:
            x0 = np.asarray(warm_start, dtype=float).reshape(-1)
            y0 = None
        if x0.size == n:
            x = x0 / D
        if y0 is not None and y0.size == m:
            y = c * y0 / E if m else y
    z = np.clip(A_s @ x, l_s, u_s)

    prim_tol = tol_primal
    dual_tol = tol_dual
    polish_trigger = settings.polish_trigger
    polish_attempts = 0
    alpha = settings.alpha
    sigma = settings.sigma

    iteration = 0
    for iteration in range(1, max_iter + 1):
        x_prev = x
        y_prev = y
        rhs = sigma * x - q_s + A_s.T @ (rho_vec * z - y)
        x_tilde = scipy.linalg.cho_solve(kkt, rhs, check_finite=False)
        z_tilde = A_s @ x_tilde
        x = alpha * x_tilde + (1.0 - alpha) * x_prev
        z_relax = alpha * z_tilde + (1.0 - alpha) * z
        z = np.clip(z_relax + y / rho_vec, l_s, u_s)
        y = y + rho_vec * (z_relax - z)

        if iteration % settings.check_interval and iteration != max_iter:
            continue

        x_u = D * x
        y_u = E * y / c
        z_u = z / E
        Ax_s = A_s @ x
        r_prim = _inf_norm((Ax_s - z) / E)
        Px_s = P_s @ x
        Aty_s = A_s.T @ y
        r_dual = _inf_norm((Px_s + q_s + Aty_s) / D) / c

        if r_prim <= prim_tol and r_dual <= dual_tol:
            if settings.polish:
                polished = _polish(
                    p, A, l, u, x_u, z_u, y_u, settings, tol_primal, tol_dual
                )
                if polished is not None:
                    return _solution(
                        p, polished[0], polished[1], Status.OPTIMAL, iteration,
                        bound_index, True,
                    )
            log.debug("ADMM converged in %d iterations", iteration)
            return _solution(p, x_u, y_u, Status.OPTIMAL, iteration, bound_index)

        prim_scale = max(1.0, _inf_norm(A @ x_u), _inf_norm(z_u))
        dual_scale = max(
            1.0, _inf_norm(p.H @ x_u), _inf_norm(A.T @ y_u), _inf_norm(p.f)
        )
        if (
            settings.polish
            and polish_attempts < settings.max_polish_attempts
            and r_prim <= polish_trigger * prim_scale
            and r_dual <= polish_trigger * dual_scale
        ):
            polish_attempts += 1
            polish_trigger *= 0.1
            polished = _polish(
                p, A, l, u, x_u, z_u, y_u, settings, tol_primal, tol_dual
            )
            if polished is not None:
                return _solution(
                    p, polished[0], polished[1], Status.OPTIMAL, iteration,
                    bound_index, True,
                )

        status = _certify_infeasibility(
            p, A, l, u, D * (x - x_prev), E * (y - y_prev) / c, settings
        )
        if status is not None:
            log.debug("%s detected after %d iterations", status.value, iteration)
            return _solution(p, x_u, y_u, status, iteration, bound_index)

        if settings.adaptive_rho and m:
            num = _inf_norm(Ax_s - z) / max(_inf_norm(Ax_s), _inf_norm(z), 1e-12)
            den = _inf_norm(Px_s + q_s + Aty_s) / max(
                _inf_norm(Px_s), _inf_norm(Aty_s), _inf_norm(q_s), 1e-12
            )
            if num > 0 and den > 0:
                rho_new = float(np.clip(rho * np.sqrt(num / den), RHO_MIN, RHO_MAX))
                tolerance = settings.adaptive_rho_tolerance
                if rho_new > tolerance * rho or rho_new < rho / tolerance:
                    rho = rho_new
                    rho_vec = rho_vector(rho)
                    kkt = factor(rho_vec)

    x_u = D * x
    y_u = E * y / c
    if settings.polish:
        polished = _polish(
            p, A, l, u, x_u, np.clip(A @ x_u, l, u), y_u, settings,
            tol_primal, tol_dual,
        )
        if polished is not None:
            return _solution(
                p, polished[0], polished[1], Status.OPTIMAL, iteration,
                bound_index, True,
            )
    log.debug("ADMM hit the iteration cap of %d", max_iter)
    return _solution(p, x_u, y_u, Status.MAX_ITER, iteration, bound_index)


def _certify_infeasibility(p, A, l, u, dx, dy, settings):
    """
    Test the latest iterate differences for infeasibility certificates.
    """
    dy_norm = _inf_norm(dy)
    if dy_norm > 1e-10:
        eps = settings.eps_pinf * dy_norm
        dy = np.where(np.abs(dy) <= eps, 0.0, dy)
        if _inf_norm(A.T @ dy) <= eps:
            pos = dy > 0
            neg = dy < 0
            if np.all(np.isfinite(u[pos])) and np.all(np.isfinite(l[neg])):
                support = float(u[pos] @ dy[pos] + l[neg] @ dy[neg])
                if support < -eps:
                    return Status.PRIMAL_INFEASIBLE
    dx_norm = _inf_norm(dx)
    if dx_norm > 1e-10:
        eps = settings.eps_dinf * dx_norm
        if _inf_norm(p.H @ dx) <= eps and float(p.f @ dx) < -eps:
            Adx = A @ dx
            upper_ok = np.all(Adx[np.isfinite(u)] <= eps)
            lower_ok = np.all(Adx[np.isfinite(l)] >= -eps)
            if upper_ok and lower_ok:
                return Status.DUAL_INFEASIBLE
    return None


def _jsonable(arr):
    arr = np.asarray(arr, dtype=float)
    return np.where(np.isfinite(arr), arr, np.nan).tolist()


def dump_problem(p, path, solution=None, tol_primal=1e-6, tol_dual=1e-6):
    """
    Write a problem (and optionally its solution) as JSON for debugging.

    Matrices are written row-major; infinite bounds become ``null``.

    :param p: The problem
    :type p: :class:`QpProblem`
    :param path: The file to write
    :type path: str
    """
    doc = {
        "H": p.H.tolist(),
        "f": p.f.tolist(),
        "A_eq": p.A_eq.tolist(),
        "b_eq": p.b_eq.tolist(),
        "A_in": p.A_in.tolist(),
        "lb_in": _jsonable(p.lb_in),
        "ub_in": _jsonable(p.ub_in),
        "lb": _jsonable(p.lb),
        "ub": _jsonable(p.ub),
        "tol_primal": tol_primal,
        "tol_dual": tol_dual,
    }
    if solution is not None:
        doc["status"] = solution.status.value
        doc["z_star"] = solution.z_star.tolist()
        doc["objective"] = solution.objective
        doc["iterations"] = solution.iterations
    text = json.dumps(doc).replace("NaN", "null")
    pathlib.Path(path).write_text(text)


def load_problem(path):
    """
    Read a problem written by :func:`dump_problem`.

    :rtype: :class:`QpProblem`
    """
    doc = json.loads(pathlib.Path(path).read_text())

    def bound(key, fill):
        return np.array(
            [fill if value is None else value for value in doc[key]], dtype=float
        )

    n = len(doc["f"])
    return QpProblem(
        H=np.array(doc["H"], dtype=float).reshape(n, n),
        f=np.array(doc["f"], dtype=float),
        A_eq=np.array(doc["A_eq"], dtype=float).reshape(-1, n),
        b_eq=np.array(doc["b_eq"], dtype=float),
        A_in=np.array(doc["A_in"], dtype=float).reshape(-1, n),
        lb_in=bound("lb_in", -np.inf),
        ub_in=bound("ub_in", np.inf),
        lb=bound("lb", -np.inf),
        ub=bound("ub", np.inf),
    )
