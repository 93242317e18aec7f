"""
Command-governor problems: exact QP oracles and the modified barrier.

The online problem is ``min 1/2 |v - r|_Q^2`` over the admissible rows at the
current state.  The oracles here solve it exactly by active-set enumeration
(the command dimension is tiny) and are the reference for the flow.

For the barrier we write ``phi = -beta f + 1 = beta * (b - c z - h v)`` so the
log-form constraint of a row is ``log(phi) >= margin``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, nnls

from .admissible_set import AdmissibleSet
from .errors import BarrierDomainError, InfeasibleError, InvalidInputError
from .plant import AugmentedSystem

MAX_ORACLE_CMD = 6
ZERO_ROW_TOL = 1e-12
RANK_TOL = 1e-10


@dataclass(frozen=True)
class GovernorProblem:
    sys: AugmentedSystem
    aset: AdmissibleSet
    Q: np.ndarray = None

    def __post_init__(self):
        m = self.aset.n_cmd
        Q = np.eye(m) if self.Q is None else np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (m, m):
            raise InvalidInputError(f"Q must be {m}x{m}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12):
            raise InvalidInputError("Q must be symmetric")
        if np.linalg.eigvalsh(Q)[0] <= 0:
            raise InvalidInputError("Q must be positive definite")
        object.__setattr__(self, "Q", Q)

    @property
    def n_cmd(self):
        return self.aset.n_cmd

    def slack0(self, z):
        """``b - C z``: the command-independent part of every row's slack."""
        return self.aset.b - self.aset.C @ np.asarray(z, dtype=float).reshape(-1)


@dataclass(frozen=True)
class KktReport:
    active_rows: list
    stationarity: float
    complementarity: float
    dual_feasible: bool
    primal_feasible: bool


def _qnorm2(x, Q):
    return float(x @ Q @ x)


def _rank(M):
    if M.shape[0] == 0:
        return 0
    r = np.linalg.qr(M.T, mode="r")
    d = np.abs(np.diag(r))
    if d.size == 0 or d.max() == 0:
        return 0
    return int(np.sum(d > RANK_TOL * max(1.0, d.max())))


def active_set_qp(H, d, Q, r):
    """Exactly minimise ``1/2 |v - r|_Q^2`` subject to ``H v <= d``.

    Enumerates active subsets of at most ``len(r)`` linearly independent rows,
    solves each equality-constrained KKT system, and keeps the cheapest
    feasible candidate.  Returns ``(v, mu)`` with ``mu`` the multipliers of
    the linear constraints (zero off the chosen active set).
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    m = r.size
    if m > MAX_ORACLE_CMD:
        raise InvalidInputError(f"oracle enumeration is limited to {MAX_ORACLE_CMD} command components")
    R = H.shape[0]
    tol = 1e-9 * np.maximum(1.0, np.abs(d))
    row_norm = np.linalg.norm(H, axis=1)
    flat = row_norm <= ZERO_ROW_TOL
    if np.any(d[flat] < -tol[flat]):
        raise InfeasibleError("a command-independent row is violated at this state")
    live = np.flatnonzero(~flat)

    best = None  # (cost, v, mu, order)
    candidates = []
    for k in range(0, min(m, live.size) + 1):
        for S in itertools.combinations(live, k):
            S = list(S)
            if k:
                HS = H[S]
                if _rank(HS) < k:
                    continue
                KKT = np.block([[Q, HS.T], [HS, np.zeros((k, k))]])
                try:
                    sol = np.linalg.solve(KKT, np.concatenate([Q @ r, d[S]]))
                except np.linalg.LinAlgError:
                    continue
                v, muS = sol[:m], sol[m:]
            else:
                v, muS = r.copy(), np.zeros(0)
            if np.any(H[live] @ v > d[live] + tol[live]):
                continue
            cost = 0.5 * _qnorm2(v - r, Q)
            candidates.append((cost, v, S, muS))
            if best is None or cost < best[0]:
                best = candidates[-1]
    if best is None:
        raise InfeasibleError("no command satisfies the admissible rows at this state")
    # among equal-cost candidates prefer one with nonnegative multipliers
    cost_tol = 1e-12 * (1.0 + best[0])
    chosen = best
    for cand in candidates:
        if cand[0] <= best[0] + cost_tol and np.all(cand[3] >= -1e-10):
            chosen = cand
            break
    mu = np.zeros(R)
    if chosen[2]:
        mu[chosen[2]] = np.maximum(chosen[3], 0.0)
    return chosen[1], mu


def solve_cg_oracle(prob: GovernorProblem, z, r):
    """Optimal command over the untightened rows."""
    v, _ = active_set_qp(prob.aset.H, prob.slack0(z), prob.Q, r)
    return v


def solve_tightened_oracle(prob: GovernorProblem, z, r, margin=0.0):
    """Optimal ``(v, lambda)`` for the tightened problem in log form.

    ``margin`` selects the constraint ``log(phi) >= margin``.  The multiplier
    of the linear form, ``mu``, maps to the log form by the chain rule:
    ``d/dv [-lambda log(phi)] = lambda beta h / phi`` must equal ``mu h``, so
    ``lambda = mu phi / beta`` with ``phi = exp(margin)`` on active rows.
    """
    aset = prob.aset
    if math.isinf(aset.beta):
        raise InvalidInputError("the tightened oracle needs a finite beta")
    d = aset.effective_bounds(margin) - aset.C @ np.asarray(z, dtype=float).reshape(-1)
    v, mu = active_set_qp(aset.H, d, prob.Q, r)
    lam = mu * math.exp(margin) / aset.beta
    return v, lam


def phi_values(prob: GovernorProblem, z, v):
    aset = prob.aset
    v = np.asarray(v, dtype=float).reshape(-1)
    return aset.beta * (prob.slack0(z) - aset.H @ v)


def _interior_phi(prob, z, v):
    phi = phi_values(prob, z, v)
    if np.any(phi <= 0.0):
        raise BarrierDomainError("barrier evaluated on or outside the constraint boundary")
    return phi


def barrier(prob: GovernorProblem, z, r, v, lam, margin=0.0):
    """``1/2 |v - r|_Q^2 - sum lambda (log(phi) - margin)``."""
    phi = _interior_phi(prob, z, v)
    e = np.asarray(v, dtype=float).reshape(-1) - np.asarray(r, dtype=float).reshape(-1)
    return 0.5 * _qnorm2(e, prob.Q) - float(np.asarray(lam) @ (np.log(phi) - margin))


def barrier_grad_v(prob: GovernorProblem, z, r, v, lam):
    phi = _interior_phi(prob, z, v)
    e = np.asarray(v, dtype=float).reshape(-1) - np.asarray(r, dtype=float).reshape(-1)
    return prob.Q @ e + prob.aset.beta * (prob.aset.H.T @ (np.asarray(lam) / phi))


def barrier_grad_lambda(prob: GovernorProblem, z, v, margin=0.0):
    return -(np.log(_interior_phi(prob, z, v)) - margin)


def hessian_vv(prob: GovernorProblem, z, v, lam):
    phi = _interior_phi(prob, z, v)
    H = prob.aset.H
    w = prob.aset.beta**2 * np.asarray(lam) / phi**2
    return prob.Q + (H.T * w) @ H


def hessian_v_lambda(prob: GovernorProblem, z, v):
    """Mixed block ``d^2 B / dv dlambda``, shape (n_cmd, rows)."""
    phi = _interior_phi(prob, z, v)
    return (prob.aset.beta * prob.aset.H / phi[:, None]).T


def operator_jacobian(prob: GovernorProblem, z, v, lam):
    """Jacobian of ``[grad_v B; -grad_lambda B]`` with respect to ``(v, lambda)``."""
    Hvv = hessian_vv(prob, z, v, lam)
    Hvl = hessian_v_lambda(prob, z, v)
    R = Hvl.shape[1]
    return np.block([[Hvv, Hvl], [-Hvl.T, np.zeros((R, R))]])


def kkt_report(prob: GovernorProblem, z, r, v, lam, margin=0.0, tol=1e-8):
    phi = phi_values(prob, z, v)
    primal = bool(np.all(phi > 0))
    g = np.log(np.where(phi > 0, phi, np.nan)) - margin
    active = np.flatnonzero(np.abs(g) <= tol)
    aset = prob.aset
    rows = [(int(aset.output_index[j]), int(aset.horizon[j])) for j in active]
    stat = float(np.linalg.norm(barrier_grad_v(prob, z, r, v, lam))) if primal else math.inf
    comp = float(np.max(np.abs(np.asarray(lam) * g))) if primal else math.inf
    return KktReport(rows, stat, comp, bool(np.all(np.asarray(lam) >= 0)), primal)


def cone_contains(M_cols, target):
    """LP test: is ``target`` a nonnegative combination of the columns of ``M_cols``?"""
    M_cols = np.atleast_2d(M_cols)
    q = M_cols.shape[1]
    if q == 0:
        return bool(np.allclose(target, 0.0))
    res = linprog(np.zeros(q), A_eq=M_cols, b_eq=target, bounds=[(0, None)] * q, method="highs")
    return res.status == 0


def condition_holds(M_list):
    """No ``-M_i`` lies in the cone spanned by the other vectors."""
    M = np.atleast_2d(np.asarray(M_list, dtype=float))
    for i in range(M.shape[0]):
        others = np.delete(M, i, axis=0).T
        if cone_contains(others, -M[i]):
            return False
    return True


def cone_distance(M_list, i):
    """Distance from ``-M_i`` to the cone of the remaining vectors (NNLS projection)."""
    M = np.atleast_2d(np.asarray(M_list, dtype=float))
    others = np.delete(M, i, axis=0).T
    if others.shape[1] == 0:
        return float(np.linalg.norm(M[i]))
    _, resid = nnls(others, -M[i])
    return float(resid)


def cone_bound_check(M_list, m_list, m_lower):
    """Return ``(J, eps * m_lower^2)`` for the nonnegative-combination bound.

    ``J = |sum m_i M_i|^2`` and ``eps`` is the squared distance from ``-M_i*``
    to the cone of the other vectors, for the first ``i*`` with
    ``m_i* >= m_lower``.  Raises when the cone condition fails, since the bound
    is then vacuous.
    """
    M = np.atleast_2d(np.asarray(M_list, dtype=float))
    w = np.asarray(m_list, dtype=float).reshape(-1)
    if w.size != M.shape[0]:
        raise InvalidInputError("one weight per vector is required")
    if np.any(w < 0) or not m_lower > 0:
        raise InvalidInputError("weights must be nonnegative and m_lower positive")
    big = np.flatnonzero(w >= m_lower)
    if big.size == 0:
        raise InvalidInputError("no weight reaches m_lower")
    if not condition_holds(M):
        raise InvalidInputError("cone condition violated: some -M_i lies in the cone of the others")
    s = w @ M
    J = float(s @ s)
    eps = cone_distance(M, int(big[0])) ** 2
    bound = eps * m_lower**2
    if J < bound * (1 - 1e-12) - 1e-15:
        raise AssertionError(f"bound violated: J={J} < {bound}")
    return J, bound
