"""
Plant models: sampling, one-sample-delay augmentation and the nominal loop.

The governed plant is ``dx/dt = A_o x + B_o u``.  Under the logical execution
time convention the input computed at sample k is applied at k+1, so the
sampled model carries the previous input in its state::

    z(k) = [x(k); u(k-1)],   z(k+1) = A z(k) + B u(k),
    u(k) = K z(k) + G v(k),  y(k)   = C z(k) + D v(k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DesignError, InvalidInputError

SCHUR_MARGIN = 1e-9
RANK_RTOL = 1e-9


def _as_matrix(a, name, rows=None, cols=None):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if rows is not None and a.shape[0] != rows:
        raise InvalidInputError(f"{name} has {a.shape[0]} rows, expected {rows}")
    if cols is not None and a.shape[1] != cols:
        raise InvalidInputError(f"{name} has {a.shape[1]} columns, expected {cols}")
    return a


@dataclass(frozen=True)
class ContinuousPlant:
    A_o: np.ndarray
    B_o: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A_o, "A_o")
        if A.shape[0] != A.shape[1]:
            raise InvalidInputError("A_o must be square")
        B = _as_matrix(self.B_o, "B_o", rows=A.shape[0])
        object.__setattr__(self, "A_o", A)
        object.__setattr__(self, "B_o", B)

    @property
    def n(self):
        return self.A_o.shape[0]

    @property
    def p(self):
        return self.B_o.shape[1]


@dataclass(frozen=True)
class DiscretePlant:
    A_d: np.ndarray
    B_d: np.ndarray
    delta_t: float

    def __post_init__(self):
        if not (np.isfinite(self.delta_t) and self.delta_t > 0):
            raise InvalidInputError(f"delta_t must be positive, got {self.delta_t}")
        A = _as_matrix(self.A_d, "A_d")
        if A.shape[0] != A.shape[1]:
            raise InvalidInputError("A_d must be square")
        B = _as_matrix(self.B_d, "B_d", rows=A.shape[0])
        object.__setattr__(self, "A_d", A)
        object.__setattr__(self, "B_d", B)

    @property
    def n(self):
        return self.A_d.shape[0]

    @property
    def p(self):
        return self.B_d.shape[1]


@dataclass(frozen=True)
class AugmentedSystem:
    """Closed-loop sampled model on the augmented state ``z = [x; u_prev]``.

    ``C`` and ``D`` are the constrained outputs, one row per one-sided bound.
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    G: np.ndarray
    C: np.ndarray
    D: np.ndarray
    A_c: np.ndarray
    delta_t: float

    @property
    def nz(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def n_cmd(self):
        return self.G.shape[1]

    @property
    def n_out(self):
        return self.C.shape[0]

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A_c))))


def _check_delta_t(delta_t):
    if not (np.isfinite(delta_t) and delta_t > 0):
        raise InvalidInputError(f"delta_t must be positive, got {delta_t}")


def discretize(plant: ContinuousPlant, delta_t: float) -> DiscretePlant:
    """Exact zero-order-hold sampling through the Van Loan block exponential."""
    _check_delta_t(delta_t)
    n, p = plant.n, plant.p
    M = np.zeros((n + p, n + p))
    M[:n, :n] = plant.A_o
    M[:n, n:] = plant.B_o
    E = linalg.expm(M * delta_t)
    return DiscretePlant(E[:n, :n], E[:n, n:], float(delta_t))


def euler_discretize(plant: ContinuousPlant, delta_t: float) -> DiscretePlant:
    _check_delta_t(delta_t)
    return DiscretePlant(np.eye(plant.n) + delta_t * plant.A_o, delta_t * plant.B_o, float(delta_t))


def augmentation_matrices(dp: DiscretePlant):
    """Return ``(A, B)`` of the one-sample-delay model."""
    n, p = dp.n, dp.p
    A = np.zeros((n + p, n + p))
    A[:n, :n] = dp.A_d
    A[:n, n:] = dp.B_d
    B = np.zeros((n + p, p))
    B[n:, :] = np.eye(p)
    return A, B


def _pad_state_rows(C, n, nz, name):
    """Accept rows over the plant state x and pad them to the augmented state."""
    C = _as_matrix(C, name)
    if C.shape[1] == n and n != nz:
        C = np.hstack([C, np.zeros((C.shape[0], nz - n))])
    if C.shape[1] != nz:
        raise InvalidInputError(f"{name} has {C.shape[1]} columns, expected {n} or {nz}")
    return C


def augment(dp: DiscretePlant, K, G, C, D) -> AugmentedSystem:
    """Build the augmented closed loop and reject non-Schur feedback."""
    A, B = augmentation_matrices(dp)
    nz, p = A.shape[0], dp.p
    K = _as_matrix(K, "K", rows=p, cols=nz)
    G = _as_matrix(G, "G", rows=p)
    C = _pad_state_rows(C, dp.n, nz, "C")
    D = _as_matrix(D, "D", rows=C.shape[0], cols=G.shape[1])
    A_c = A + B @ K
    rho = float(np.max(np.abs(np.linalg.eigvals(A_c))))
    if rho >= 1.0 - SCHUR_MARGIN:
        raise DesignError(f"closed loop is not Schur: spectral radius {rho:.6g}")
    return AugmentedSystem(A, B, K, G, C, D, A_c, dp.delta_t)


def numerical_rank(M, rtol=RANK_RTOL):
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def controllability_matrix(A, B):
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A, C):
    return controllability_matrix(A.T, C.T).T


def is_controllable(A, B):
    return numerical_rank(controllability_matrix(A, B)) == A.shape[0]


def is_observable(A, C):
    return numerical_rank(observability_matrix(A, C)) == A.shape[0]


def ackermann(A, B, poles):
    """Single-input pole placement; returns K with ``eig(A + B K) = poles``."""
    nz = A.shape[0]
    poles = np.asarray(poles, dtype=complex).ravel()
    if poles.size != nz:
        raise InvalidInputError(f"need {nz} poles, got {poles.size}")
    W = controllability_matrix(A, B)
    if numerical_rank(W) < nz:
        raise DesignError("pair (A, B) is not controllable")
    coeffs = np.real(np.poly(poles))
    # desired characteristic polynomial evaluated at A (Horner)
    phi = np.zeros_like(A)
    for c in coeffs:
        phi = phi @ A + c * np.eye(nz)
    e_last = np.zeros((1, nz))
    e_last[0, -1] = 1.0
    return -e_last @ np.linalg.solve(W, phi)


def dlqr(A, B, Q, R):
    P = linalg.solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def design_tracking_gains(dp: DiscretePlant, C, D, pole_spec):
    """Design ``(K, G)`` so the loop is Schur and the tracked output settles at v.

    Parameters
    ----------
    dp : DiscretePlant
    C, D : array_like
        Tracked output ``y_t = C z + D v``; ``C`` may be given over the plant
        state only, in which case the held input gets zero weight.
    pole_spec : dict
        Either ``{"poles": [...]}`` (single input only) or
        ``{"lqr_q": Q, "lqr_r": R}`` with Q over the augmented state.

    Returns
    -------
    K, G : ndarray
        Feedback and feedforward gains; the DC gain
        ``C (I - A_c)^-1 B G + D`` equals the identity.
    """
    A, B = augmentation_matrices(dp)
    nz, p = A.shape[0], dp.p
    C = _pad_state_rows(C, dp.n, nz, "C")
    D = _as_matrix(D, "D", rows=C.shape[0])
    if not is_controllable(dp.A_d, dp.B_d):
        raise DesignError("pair (A_d, B_d) is not controllable")
    if "poles" in pole_spec:
        if p != 1:
            raise DesignError("pole placement is only supported for single-input plants; use LQR weights")
        K = ackermann(A, B, pole_spec["poles"])
    elif "lqr_q" in pole_spec:
        Qw = np.atleast_2d(np.asarray(pole_spec["lqr_q"], dtype=float))
        if Qw.shape == (1, nz) or Qw.shape == (nz, 1):
            Qw = np.diag(Qw.ravel())
        Rw = np.atleast_2d(np.asarray(pole_spec.get("lqr_r", np.eye(p)), dtype=float))
        if Rw.shape == (1, p) and p > 1:
            Rw = np.diag(Rw.ravel())
        K = dlqr(A, B, Qw, Rw)
    elif pole_spec.get("open_loop", False):
        K = np.zeros((p, nz))
    else:
        raise InvalidInputError(f"unrecognised pole_spec keys: {sorted(pole_spec)}")
    A_c = A + B @ K
    rho = float(np.max(np.abs(np.linalg.eigvals(A_c))))
    if rho >= 1.0 - SCHUR_MARGIN:
        raise DesignError(f"designed loop is not Schur: spectral radius {rho:.6g}")
    dc = C @ np.linalg.solve(np.eye(nz) - A_c, B)
    if dc.shape[0] != dc.shape[1] or numerical_rank(dc) < dc.shape[0]:
        raise DesignError("closed-loop DC gain is singular; cannot invert for G")
    G = np.linalg.solve(dc, np.eye(D.shape[0]) - D)
    return K, G


def dc_gain(sys: AugmentedSystem, C=None, D=None):
    C = sys.C if C is None else C
    D = sys.D if D is None else D
    return C @ np.linalg.solve(np.eye(sys.nz) - sys.A_c, sys.B @ sys.G) + D


def _vec(x, size, name):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != size:
        raise InvalidInputError(f"{name} has length {x.size}, expected {size}")
    return x


def step(sys: AugmentedSystem, z, u):
    return sys.A @ _vec(z, sys.nz, "z") + sys.B @ _vec(u, sys.p, "u")


def control(sys: AugmentedSystem, z, v):
    return sys.K @ _vec(z, sys.nz, "z") + sys.G @ _vec(v, sys.n_cmd, "v")


def output(sys: AugmentedSystem, z, v):
    return sys.C @ _vec(z, sys.nz, "z") + sys.D @ _vec(v, sys.n_cmd, "v")


def equilibrium(sys: AugmentedSystem, v):
    """Steady state of the loop under a constant command."""
    return np.linalg.solve(np.eye(sys.nz) - sys.A_c, sys.B @ sys.G @ _vec(v, sys.n_cmd, "v"))
