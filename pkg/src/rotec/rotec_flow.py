"""
Anytime command governor: a primal-dual flow on the modified barrier.

Each sample runs forward-Euler steps of::

    dv/deta   = -sigma * grad_v B
    dlam/deta =  sigma * (grad_lam B + Psi)

from the previously applied command, checking every iterate with the
acceptance test and storing the last accepted command, so that whatever the
budget allows the returned command is admissible.  The flow targets the
constraints ``log(phi) >= vartheta``; the margin absorbs the Euler error, and
step halving keeps every exposed iterate in the tightened set
``log(phi) >= 0`` regardless.  A sample in which no iterate passes the test
is a rejection: the previous command is applied again.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidInputError, InvarianceViolationError
from .governor import GovernorProblem

MAX_HALVINGS = 30
HALVING_FLOOR = 2.0**-MAX_HALVINGS
SEED_TOL = 1e-6  # log-margin slack allowed on the seed (roundoff in the set recursion)
FLOOR_RTOL = 1e-9  # halving floor sits this far above 1/beta, relative


@dataclass(frozen=True)
class FlowParams:
    sigma: float = 100.0
    delta_eta: float = 1e-3

    def __post_init__(self):
        if not self.sigma > 0 or not self.delta_eta > 0:
            raise InvalidInputError("sigma and delta_eta must be positive")


@dataclass
class FlowState:
    v_hat: np.ndarray
    lambda_hat: np.ndarray
    eta: float = 0.0
    stalled: bool = False


@dataclass(frozen=True)
class StepBudget:
    """Deterministic budget: a fixed number of flow steps."""

    steps: int


@dataclass(frozen=True)
class WallClockBudget:
    """Real-time budget in seconds, read from a monotonic clock."""

    seconds: float


@dataclass
class GovernorResult:
    v_applied: np.ndarray
    lambda_out: np.ndarray
    u: np.ndarray
    accepted: bool
    flow_steps: int
    eta_spent: float
    terminal_rejected: bool = False
    stalls: int = 0
    min_log_phi: float = math.inf
    exposed_violations: int = 0
    min_lambda: float = 0.0
    # set when record_path=True: list of (v_hat, lambda_hat) after each step
    path: list = field(default=None, repr=False)


def psi(lambda_val, log_term):
    """Normal-cone correction for one multiplier.

    ``log_term`` is ``-grad_lambda B``.  At ``lambda = 0`` with a positive
    ``log_term`` the outward drift is cancelled; otherwise no correction.
    """
    if lambda_val == 0.0 and log_term > 0.0:
        return log_term
    return 0.0


def acceptance(v_candidate, v_prev, r, Q=None):
    """Accept iff ``|v - r|_Q^2 <= |v_prev - r|_Q^2 - |v - v_prev|_Q^2``."""
    v = np.asarray(v_candidate, dtype=float).reshape(-1)
    vp = np.asarray(v_prev, dtype=float).reshape(-1)
    r = np.asarray(r, dtype=float).reshape(-1)
    Q = np.eye(v.size) if Q is None else Q
    a, b, c = v - r, vp - r, v - vp
    return bool(a @ Q @ a <= b @ Q @ b - c @ Q @ c)


def warm_start_lambda(lambda_prev, n_out, s_star):
    """Shift every finite-horizon block one step left, repeating its last entry."""
    lam = np.asarray(lambda_prev, dtype=float).reshape(-1)
    block = s_star + 2
    if lam.size != n_out * block:
        raise InvalidInputError(f"dual vector has length {lam.size}, expected {n_out * block}")
    out = lam.reshape(n_out, block).copy()
    if s_star > 0:
        out[:, : s_star] = lam.reshape(n_out, block)[:, 1 : s_star + 1]
    return out.reshape(-1)


# stats slots written by _advance
_ACCEPTED, _STALLS, _VIOLATIONS, _MIN_LOG_PHI, _MIN_LAMBDA, _TERMINAL_OK = range(6)


@njit(cache=True)
def _advance(s0, H, Q, r, beta, theta, gain, min_slack, v_prev, base, v, lam, best_v, n_steps, stats):
    """Run ``n_steps`` Euler steps in place, evaluating acceptance after each.

    Command step: ``v -= gain * grad_v B``, halved until every slack stays at
    or above ``min_slack`` (at most MAX_HALVINGS times; otherwise the command
    stays put).  Multiplier step: ``lam += gain * (grad_lam B + Psi)`` then
    clipped at zero.
    """
    R, m = H.shape
    slack = np.empty(R)
    g = np.empty(m)
    dv = np.empty(m)
    v_new = np.empty(m)
    for _ in range(n_steps):
        for j in range(R):
            acc = s0[j]
            for i in range(m):
                acc -= H[j, i] * v[i]
            slack[j] = acc
        # grad_v B = Q (v - r) + beta * sum_j lam_j h_j / phi_j, with phi_j = beta * slack_j
        for i in range(m):
            acc = 0.0
            for k in range(m):
                acc += Q[i, k] * (v[k] - r[k])
            g[i] = acc
        for j in range(R):
            if lam[j] != 0.0:
                w = lam[j] / slack[j]  # beta * lam / phi
                for i in range(m):
                    g[i] += w * H[j, i]
        for i in range(m):
            dv[i] = gain * g[i]
        # multiplier step with the normal-cone correction
        for j in range(R):
            drive = math.log(beta * slack[j]) - theta  # -grad_lambda B
            psi_j = drive if (lam[j] == 0.0 and drive > 0.0) else 0.0
            nxt = lam[j] + gain * (-drive + psi_j)
            lam[j] = nxt if nxt > 0.0 else 0.0
        # largest step 2^-k keeping slack(t) = slack + t * H dv above min_slack
        t = 1.0
        t_max = np.inf
        for j in range(R):
            rate = 0.0
            for i in range(m):
                rate += H[j, i] * dv[i]
            if rate < 0.0:
                lim = (slack[j] - min_slack) / -rate
                if lim < t_max:
                    t_max = lim
        if t_max < 1.0:
            if t_max > 0.0:
                t = 2.0 ** (-math.ceil(-math.log2(t_max)))
            else:
                t = 0.0
        moved = False
        min_lp = np.inf
        while t >= HALVING_FLOOR:
            ok = True
            for i in range(m):
                v_new[i] = v[i] - t * dv[i]
            for j in range(R):
                acc = s0[j]
                for i in range(m):
                    acc -= H[j, i] * v_new[i]
                if acc < min_slack:
                    ok = False
                    break
                slack[j] = acc
            if ok:
                moved = True
                break
            t *= 0.5
        if moved:
            for i in range(m):
                v[i] = v_new[i]
        else:
            stats[_STALLS] += 1.0
            for j in range(R):
                acc = s0[j]
                for i in range(m):
                    acc -= H[j, i] * v[i]
                slack[j] = acc
        for j in range(R):
            lp = math.log(beta * slack[j])
            if lp < min_lp:
                min_lp = lp
            if lam[j] < stats[_MIN_LAMBDA]:
                stats[_MIN_LAMBDA] = lam[j]
        if min_lp < 0.0:
            stats[_VIOLATIONS] += 1.0
        if min_lp < stats[_MIN_LOG_PHI]:
            stats[_MIN_LOG_PHI] = min_lp
        # acceptance: |v - r|_Q^2 <= |v_prev - r|_Q^2 - |v - v_prev|_Q^2
        qa = 0.0
        qc = 0.0
        for i in range(m):
            for k in range(m):
                qa += (v[i] - r[i]) * Q[i, k] * (v[k] - r[k])
                qc += (v[i] - v_prev[i]) * Q[i, k] * (v[k] - v_prev[k])
        if qa <= base - qc:
            for i in range(m):
                best_v[i] = v[i]
            stats[_ACCEPTED] = 1.0
            stats[_TERMINAL_OK] = 1.0
        else:
            stats[_TERMINAL_OK] = 0.0


class _Flow:
    """Per-sample flow data: everything that does not change with eta."""

    def __init__(self, prob: GovernorProblem, z, r, params: FlowParams, v_prev=None):
        aset = prob.aset
        self.s0 = np.ascontiguousarray(prob.slack0(z))
        self.H = np.ascontiguousarray(aset.H)
        self.Q = np.ascontiguousarray(prob.Q)
        self.r = np.asarray(r, dtype=float).reshape(-1).copy()
        self.beta = float(aset.beta)
        self.theta = float(aset.vartheta)
        self.gain = params.sigma * params.delta_eta
        # a hair above 1/beta so the one-step row shift cannot round a stored command below log(phi) = 0
        self.min_slack = (1.0 + FLOOR_RTOL) / aset.beta
        self.v_prev = self.r.copy() if v_prev is None else np.asarray(v_prev, dtype=float).reshape(-1).copy()
        e = self.v_prev - self.r
        self.base = float(e @ self.Q @ e)

    def log_phi(self, v):
        slack = self.s0 - self.H @ v
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(self.beta * slack)

    def advance(self, v, lam, best_v, n_steps, stats):
        _advance(
            self.s0, self.H, self.Q, self.r, self.beta, self.theta, self.gain, self.min_slack,
            self.v_prev, self.base, v, lam, best_v, int(n_steps), stats,
        )


def _new_stats(lam):
    stats = np.zeros(6)
    stats[_MIN_LOG_PHI] = np.inf
    stats[_MIN_LAMBDA] = lam.min() if lam.size else 0.0
    stats[_TERMINAL_OK] = 1.0
    return stats


def flow_step(prob: GovernorProblem, z, r, state: FlowState, params: FlowParams) -> FlowState:
    """Advance the flow by one Euler step of length ``delta_eta``.

    The command step is halved (at most 30 times) until every row keeps
    ``log(phi) >= 0``; if that never happens the command stays put,
    ``stalled`` is set, and only the multipliers move.
    """
    fl = _Flow(prob, z, r, params)
    v = np.array(state.v_hat, dtype=float).reshape(-1)
    lam = np.array(state.lambda_hat, dtype=float).reshape(-1)
    stats = _new_stats(lam)
    fl.advance(v, lam, v.copy(), 1, stats)
    return FlowState(v, lam, state.eta + params.delta_eta, stalled=bool(stats[_STALLS]))


@njit(cache=True)
def _trajectory(s0, H, Q, r, beta, theta, gain, min_slack, v, lam, n_steps, every, vs, lams, stats):
    v_prev = v.copy()  # acceptance bookkeeping is computed but unused here
    best_v = v.copy()
    k = 0
    for j in range(n_steps):
        _advance(s0, H, Q, r, beta, theta, gain, min_slack, v_prev, 0.0, v, lam, best_v, 1, stats)
        if (j + 1) % every == 0:
            vs[k] = v
            lams[k] = lam
            k += 1


def flow_trajectory(prob: GovernorProblem, z, r, v0, lam0, params: FlowParams, n_steps, every=1):
    """Run the flow from ``(v0, lam0)`` with no acceptance test and record it.

    Returns ``(v, lam, stalls)`` where row ``j`` of ``v`` and ``lam`` is the
    state after ``(j + 1) * every`` steps.  For convergence studies.
    """
    if n_steps < 0 or every < 1:
        raise InvalidInputError("need n_steps >= 0 and every >= 1")
    fl = _Flow(prob, z, r, params)
    v = np.array(v0, dtype=float).reshape(-1)
    lam = np.array(lam0, dtype=float).reshape(-1)
    if lam.size != prob.aset.n_rows or np.any(lam < 0):
        raise InvalidInputError("lam0 must be nonnegative with one entry per row")
    n_rec = n_steps // every
    vs = np.empty((n_rec, v.size))
    lams = np.empty((n_rec, lam.size))
    stats = _new_stats(lam)
    _trajectory(fl.s0, fl.H, fl.Q, fl.r, fl.beta, fl.theta, fl.gain, fl.min_slack, v, lam,
                int(n_steps), int(every), vs, lams, stats)
    return vs, lams, int(stats[_STALLS])


def rotec_step(
    prob: GovernorProblem,
    z,
    r,
    v_prev,
    lambda_prev,
    budget,
    params: FlowParams,
    record_path=False,
) -> GovernorResult:
    """One sample of the anytime governor.

    Starts the flow from ``v_prev`` and the shifted duals, and keeps the most
    recent iterate that passes the acceptance test together with its control
    input.  With a zero budget the previous command is returned unchanged.
    A wall-clock budget lets the step already in progress finish.
    """
    sys, aset = prob.sys, prob.aset
    z = np.asarray(z, dtype=float).reshape(-1)
    v_prev = np.asarray(v_prev, dtype=float).reshape(-1)
    fl = _Flow(prob, z, r, params, v_prev=v_prev)
    logphi = fl.log_phi(v_prev)
    if not np.all(logphi >= -SEED_TOL):
        raise InvarianceViolationError(
            f"seed command is outside the tightened set (min log-margin {np.nanmin(logphi):.3g})"
        )
    lam = warm_start_lambda(lambda_prev, aset.n_out, aset.s_star)
    if np.any(lam < 0):
        raise InvalidInputError("dual warm start must be nonnegative")
    v = v_prev.copy()
    best_v = v_prev.copy()
    stats = _new_stats(lam)
    path = [] if record_path else None

    if isinstance(budget, WallClockBudget):
        n_max = None
        deadline = time.monotonic() + budget.seconds
    else:
        n_max = int(budget.steps if isinstance(budget, StepBudget) else budget)
        if n_max < 0:
            raise InvalidInputError("step budget must be nonnegative")
        deadline = None

    steps = 0
    if n_max is not None and not record_path:
        fl.advance(v, lam, best_v, n_max, stats)
        steps = n_max
    else:
        while True:
            if n_max is not None and steps >= n_max:
                break
            if deadline is not None and time.monotonic() >= deadline:
                break
            fl.advance(v, lam, best_v, 1, stats)
            steps += 1
            if record_path:
                path.append((v.copy(), lam.copy()))

    u = sys.K @ z + sys.G @ best_v
    return GovernorResult(
        v_applied=best_v,
        lambda_out=lam,
        u=u,
        accepted=bool(stats[_ACCEPTED]),
        flow_steps=steps,
        eta_spent=steps * params.delta_eta,
        terminal_rejected=not bool(stats[_TERMINAL_OK]),
        stalls=int(stats[_STALLS]),
        min_log_phi=float(stats[_MIN_LOG_PHI]),
        exposed_violations=int(stats[_VIOLATIONS]),
        min_lambda=float(stats[_MIN_LAMBDA]),
        path=path,
    )
