# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Data matrices and the regularized data-enabled predictive control program.

Signals are stored time-major: a length ``L`` window of a ``d`` channel signal
stacks as ``[x_0[0..d-1], x_1[0..d-1], ...]``. Every Hankel matrix, window and
prediction in the package uses this ordering.
"""
import dataclasses
import functools
import json
import logging
import math
import pathlib

import numpy as np
import pandas as pd

from .common import ConfigError, PadeepcException, __version__
from .qp import QpProblem

log = logging.getLogger(__name__)

RANK_SAFETY_FACTOR = 100.0


class DeepcError(PadeepcException):
    """
    Raised on malformed data matrices, windows or weights.
    """


class PersistencyError(DeepcError):
    """
    Raised when input data is not persistently exciting.
    """


class ExcitationError(DeepcError):
    """
    Raised when no persistently exciting excitation could be generated.
    """


def _as_signal(seq):
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DeepcError(f"Signals must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def build_hankel(seq, L):
    """
    Build the block Hankel matrix of depth ``L``.

    :param seq: ``T`` samples of a ``d`` channel signal, shape ``(T,)`` or ``(T, d)``
    :param L: Window length
    :type L: int

    :raises DeepcError: If ``L`` is not in ``1..T``

    :return: Matrix of shape ``(L * d, T - L + 1)``; column ``j`` stacks samples
        ``j..j+L-1``
    :rtype: ``numpy.ndarray``
    """
    arr = _as_signal(seq)
    T, d = arr.shape
    if L < 1 or T < L:
        raise DeepcError(f"Cannot build a depth {L} Hankel matrix from {T} samples")
    windows = np.lib.stride_tricks.sliding_window_view(arr, L, axis=0)
    return np.ascontiguousarray(windows.transpose(2, 1, 0).reshape(L * d, T - L + 1))


def numerical_rank(matrix):
    """
    Rank from singular values above ``s_max * max(shape) * eps * 100``.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    tol = sv[0] * max(matrix.shape) * np.finfo(float).eps * RANK_SAFETY_FACTOR
    return int(np.count_nonzero(sv > tol))


def check_pe(u_seq, L):
    """
    Whether ``u_seq`` is persistently exciting of order ``L``.

    :return: ``True`` when the depth ``L`` Hankel matrix has full row rank
    :rtype: bool
    """
    arr = _as_signal(u_seq)
    if L < 1 or arr.shape[0] < L:
        return False
    hankel = build_hankel(arr, L)
    if hankel.shape[0] > hankel.shape[1]:
        return False
    return numerical_rank(hankel) == hankel.shape[0]


def min_data_length(m, L, n):
    """
    Shortest input sequence that can be persistently exciting of order
    ``L + n`` for an ``m`` input system.
    """
    return (m + 1) * L + n - 1


def gen_excitation(m, T, levels=5, hold=1, amp=1.0, seed=0, order=None, retries=10):
    """
    Multilevel pseudo random excitation.

    Each channel picks one of ``levels`` values evenly spaced in
    ``[-amp, amp]`` and holds it for ``hold`` steps. With ``order`` set the
    signal is redrawn with a derived seed until it is persistently exciting of
    that order.

    :raises ExcitationError: If ``retries`` draws all fail the check

    :return: Array of shape ``(T, m)``
    :rtype: ``numpy.ndarray``
    """
    if levels < 2:
        raise ExcitationError("Excitation needs at least two levels")
    if not (amp > 0 and hold >= 1 and T >= 1 and m >= 1):
        raise ExcitationError("Invalid excitation dimensions")
    values = np.linspace(-amp, amp, levels)
    blocks = -(-T // hold)
    for attempt in range(retries):
        rng = np.random.default_rng([int(seed), attempt])
        picks = rng.integers(levels, size=(blocks, m))
        signal = np.repeat(values[picks], hold, axis=0)[:T]
        if order is None or check_pe(signal, order):
            if attempt:
                log.debug("Excitation passed after %d redraws", attempt)
            return signal
        log.debug("Excitation draw %d is not exciting of order %d", attempt, order)
    raise ExcitationError(
        f"No excitation exciting of order {order} after {retries} attempts"
    )


@dataclasses.dataclass(frozen=True)
class HankelLibrary:
    """
    Input and output data columns of length ``T_ini + N``.

    ``H_u`` has shape ``(m * L, K)`` and ``H_y`` has shape ``(p * L, K)``. The
    input block must have full row rank.
    """

    H_u: np.ndarray
    H_y: np.ndarray
    m: int
    p: int
    T_ini: int
    N: int

    def __post_init__(self):
        H_u = np.atleast_2d(np.asarray(self.H_u, dtype=float))
        H_y = np.atleast_2d(np.asarray(self.H_y, dtype=float))
        if self.T_ini < 1 or self.N < 1:
            raise DeepcError("T_ini and N must be positive")
        if H_u.shape[0] != self.m * self.L or H_y.shape[0] != self.p * self.L:
            raise DeepcError(
                f"Hankel blocks {H_u.shape} and {H_y.shape} do not match "
                f"m={self.m}, p={self.p}, L={self.L}"
            )
        if H_u.shape[1] != H_y.shape[1] or H_u.shape[1] < 1:
            raise DeepcError("Input and output blocks need the same, nonzero, columns")
        H_u.setflags(write=False)
        H_y.setflags(write=False)
        object.__setattr__(self, "H_u", H_u)
        object.__setattr__(self, "H_y", H_y)
        if self.input_rank != H_u.shape[0]:
            raise PersistencyError(
                f"Input block rank {self.input_rank} < {H_u.shape[0]} rows"
            )

    @classmethod
    def from_data(cls, u, y, T_ini, N, n=None):
        """
        Build a library from one recorded trajectory.

        :param u: Inputs, shape ``(T, m)``
        :param y: Outputs, shape ``(T, p)``
        :param n: State dimension bound; when given the inputs must be
            persistently exciting of order ``T_ini + N + n``

        :raises PersistencyError: If the inputs are not exciting enough
        """
        u = _as_signal(u)
        y = _as_signal(y)
        if u.shape[0] != y.shape[0]:
            raise DeepcError("Input and output records differ in length")
        L = T_ini + N
        if n is not None and not check_pe(u, L + n):
            raise PersistencyError(f"Inputs are not persistently exciting of order {L + n}")
        return cls(
            H_u=build_hankel(u, L),
            H_y=build_hankel(y, L),
            m=u.shape[1],
            p=y.shape[1],
            T_ini=T_ini,
            N=N,
        )

    @property
    def L(self):
        return self.T_ini + self.N

    @property
    def K(self):
        return self.H_u.shape[1]

    @property
    def T(self):
        return self.K + self.L - 1

    @functools.cached_property
    def input_rank(self):
        return numerical_rank(self.H_u)

    @property
    def U_p(self):
        return self.H_u[: self.m * self.T_ini]

    @property
    def U_f(self):
        return self.H_u[self.m * self.T_ini :]

    @property
    def Y_p(self):
        return self.H_y[: self.p * self.T_ini]

    @property
    def Y_f(self):
        return self.H_y[self.p * self.T_ini :]

    @property
    def dims(self):
        return {
            "m": self.m,
            "p": self.p,
            "T": self.T,
            "T_ini": self.T_ini,
            "N": self.N,
            "K": self.K,
        }

    def with_columns(self, H_u, H_y):
        """
        A library with the same dimensions and new columns.
        """
        return HankelLibrary(H_u, H_y, self.m, self.p, self.T_ini, self.N)

    def save(self, path):
        """
        Write ``<path>.npz`` and a ``<path>.json`` metadata sidecar.

        :return: The paths written
        :rtype: tuple
        """
        path = pathlib.Path(path).with_suffix(".npz")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, H_u=self.H_u, H_y=self.H_y)
        meta = dict(self.dims)
        meta.update(
            {
                "input_rank": self.input_rank,
                "pe": self.input_rank == self.H_u.shape[0],
                "version": __version__,
            }
        )
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path, sidecar

    @classmethod
    def load(cls, path):
        """
        Read a library written by :meth:`save`.
        """
        path = pathlib.Path(path).with_suffix(".npz")
        try:
            meta = json.loads(path.with_suffix(".json").read_text())
            with np.load(path, allow_pickle=False) as data:
                H_u, H_y = data["H_u"], data["H_y"]
        except (OSError, ValueError, KeyError) as exc:
            raise DeepcError(f"Unable to load library {path}: {exc}")
        return cls(H_u, H_y, meta["m"], meta["p"], meta["T_ini"], meta["N"])


@dataclasses.dataclass(frozen=True)
class RecentWindow:
    """
    The last ``T_ini`` inputs and outputs, flattened time-major.
    """

    u_ini: np.ndarray
    y_ini: np.ndarray

    @classmethod
    def from_history(cls, u_hist, y_hist):
        """
        :param u_hist: Inputs, shape ``(T_ini, m)``
        :param y_hist: Outputs, shape ``(T_ini, p)``
        """
        u_hist = _as_signal(u_hist)
        y_hist = _as_signal(y_hist)
        if u_hist.shape[0] != y_hist.shape[0]:
            raise DeepcError("Window inputs and outputs differ in length")
        return cls(u_ini=u_hist.reshape(-1), y_ini=y_hist.reshape(-1))

    def check(self, lib):
        if self.u_ini.size != lib.m * lib.T_ini or self.y_ini.size != lib.p * lib.T_ini:
            raise DeepcError(
                f"Window of {self.u_ini.size}/{self.y_ini.size} samples does not "
                f"match m={lib.m}, p={lib.p}, T_ini={lib.T_ini}"
            )


def _weights(value, size, name, strict=False):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.full(size, float(arr[0]))
    if arr.size != size:
        raise DeepcError(f"{name} has {arr.size} weights, expected {size}")
    if np.any(arr < 0) or (strict and np.any(arr <= 0)):
        raise DeepcError(f"{name} must be {'positive' if strict else 'nonnegative'}")
    return arr


@dataclasses.dataclass(frozen=True)
class DeepcWeights:
    """
    Diagonal stage weights and regularization.

    ``Q`` and ``R`` are scalars or one weight per output/input channel.
    ``lambda_y = inf`` forces the output slack to zero.
    """

    Q: object = 1.0
    R: object = 1.0
    lambda_g: float = 20.0
    lambda_y: float = 1000.0

    def __post_init__(self):
        if self.lambda_g < 0 or self.lambda_y < 0:
            raise DeepcError("Regularization weights must be nonnegative")


@dataclasses.dataclass(frozen=True)
class SignalBounds:
    """
    Per-channel boxes on future inputs and outputs.
    """

    u_min: object = -np.inf
    u_max: object = np.inf
    y_min: object = -np.inf
    y_max: object = np.inf


@dataclasses.dataclass(frozen=True)
class DecisionLayout:
    """
    Positions of ``(g, u, y, sigma_y)`` inside the decision vector.
    """

    K: int
    m: int
    p: int
    T_ini: int
    N: int

    @classmethod
    def of(cls, lib):
        return cls(lib.K, lib.m, lib.p, lib.T_ini, lib.N)

    @property
    def g(self):
        return slice(0, self.K)

    @property
    def u(self):
        return slice(self.K, self.K + self.m * self.N)

    @property
    def y(self):
        start = self.K + self.m * self.N
        return slice(start, start + self.p * self.N)

    @property
    def sigma(self):
        start = self.K + (self.m + self.p) * self.N
        return slice(start, start + self.p * self.T_ini)

    @property
    def size(self):
        return self.K + (self.m + self.p) * self.N + self.p * self.T_ini

    def split(self, z):
        """
        :return: ``(g, u, y, sigma_y)`` with ``u`` shaped ``(N, m)`` and ``y``
            shaped ``(N, p)``
        """
        z = np.asarray(z, dtype=float)
        return (
            z[self.g],
            z[self.u].reshape(self.N, self.m),
            z[self.y].reshape(self.N, self.p),
            z[self.sigma],
        )


def data_equations(lib, win):
    """
    Equality rows tying the decision vector to the data.

    ``U_p g = u_ini``, ``Y_p g - sigma_y = y_ini``, ``U_f g - u = 0`` and
    ``Y_f g - y = 0``.

    :return: ``(A_eq, b_eq)``
    """
    win.check(lib)
    layout = DecisionLayout.of(lib)
    mi, pi = lib.m * lib.T_ini, lib.p * lib.T_ini
    mf, pf = lib.m * lib.N, lib.p * lib.N
    A = np.zeros((mi + pi + mf + pf, layout.size))
    A[:mi, layout.g] = lib.U_p
    A[mi : mi + pi, layout.g] = lib.Y_p
    A[mi : mi + pi, layout.sigma] = -np.eye(pi)
    A[mi + pi : mi + pi + mf, layout.g] = lib.U_f
    A[mi + pi : mi + pi + mf, layout.u] = -np.eye(mf)
    A[mi + pi + mf :, layout.g] = lib.Y_f
    A[mi + pi + mf :, layout.y] = -np.eye(pf)
    b = np.concatenate([win.u_ini, win.y_ini, np.zeros(mf + pf)])
    return A, b


def regularization(lib, w):
    """
    Diagonal Hessian entries and bounds of the ``g`` and ``sigma_y`` blocks.

    :return: ``(diag, lb, ub)`` over the full decision vector
    """
    layout = DecisionLayout.of(lib)
    diag = np.zeros(layout.size)
    lb = np.full(layout.size, -np.inf)
    ub = np.full(layout.size, np.inf)
    diag[layout.g] = 2 * w.lambda_g
    if np.isinf(w.lambda_y):
        lb[layout.sigma] = 0.0
        ub[layout.sigma] = 0.0
    else:
        diag[layout.sigma] = 2 * w.lambda_y
    return diag, lb, ub


def assemble_tracking_qp(lib, win, w, box=None, y_ref=None):
    """
    The regularized tracking program.

    Minimizes ``sum_k |y_k - r|_Q^2 + |u_k|_R^2 + lambda_g |g|^2 +
    lambda_y |sigma_y|^2`` over ``z = (g, u, y, sigma_y)`` subject to the data
    equations and the boxes in ``box``.

    :param lib: The data library
    :type lib: :class:`HankelLibrary`
    :param win: The most recent window
    :type win: :class:`RecentWindow`
    :param w: Weights
    :type w: :class:`DeepcWeights`
    :param box: Input and output boxes, unbounded when omitted
    :type box: :class:`SignalBounds`
    :param y_ref: Output reference per channel, zero when omitted

    :rtype: :class:`padeepc.qp.QpProblem`
    """
    layout = DecisionLayout.of(lib)
    if box is None:
        box = SignalBounds()
    A_eq, b_eq = data_equations(lib, win)
    diag, lb, ub = regularization(lib, w)
    q = _weights(w.Q, lib.p, "Q")
    r = _weights(w.R, lib.m, "R", strict=True)
    diag[layout.u] = 2 * np.tile(r, lib.N)
    diag[layout.y] = 2 * np.tile(q, lib.N)
    f = np.zeros(layout.size)
    if y_ref is not None:
        ref = np.broadcast_to(np.asarray(y_ref, dtype=float), (lib.p,))
        f[layout.y] = -2 * np.tile(q * ref, lib.N)
    lb[layout.u] = np.tile(np.broadcast_to(box.u_min, (lib.m,)), lib.N)
    ub[layout.u] = np.tile(np.broadcast_to(box.u_max, (lib.m,)), lib.N)
    lb[layout.y] = np.tile(np.broadcast_to(box.y_min, (lib.p,)), lib.N)
    ub[layout.y] = np.tile(np.broadcast_to(box.y_max, (lib.p,)), lib.N)
    return QpProblem(H=np.diag(diag), f=f, A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub)


def write_dataset(path, u, y, dt):
    """
    Write an input/output record as ``t,u_1..u_m,y_1..y_p`` CSV.
    """
    u = _as_signal(u)
    y = _as_signal(y)
    frame = pd.DataFrame({"t": np.arange(u.shape[0]) * dt})
    for j in range(u.shape[1]):
        frame[f"u_{j + 1}"] = u[:, j]
    for j in range(y.shape[1]):
        frame[f"y_{j + 1}"] = y[:, j]
    frame.to_csv(pathlib.Path(path), index=False, float_format="%.17g")


def read_dataset(path, dt=None):
    """
    Read a record written by :func:`write_dataset`.

    :param dt: Expected sample step; checked against the file when given

    :raises ConfigError: If the record is not uniformly sampled at a
        positive step, or its step differs from ``dt``

    :return: ``(u, y, dt)``
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError) as exc:
        raise DeepcError(f"Unable to read dataset {path}: {exc}")
    u_cols = [col for col in frame.columns if col.startswith("u_")]
    y_cols = [col for col in frame.columns if col.startswith("y_")]
    if "t" not in frame.columns or not u_cols or not y_cols or len(frame) < 2:
        raise DeepcError(f"Dataset {path} needs t, u_* and y_* columns")
    steps = np.diff(frame["t"].to_numpy(dtype=float))
    if not (steps[0] > 0 and np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9)):
        raise ConfigError(f"Dataset {path} is not uniformly sampled")
    step = float(steps[0])
    if dt is not None and not math.isclose(step, dt, rel_tol=1e-6):
        raise ConfigError(f"Dataset {path} is sampled at {step} s, expected {dt} s")
    return frame[u_cols].to_numpy(dtype=float), frame[y_cols].to_numpy(dtype=float), step
