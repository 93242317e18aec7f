"""
Finitely determined admissible sets of (state, constant command) pairs.

Every constraint row reads ``c . z + h . v <= b`` and predicts output ``i``
``s`` steps ahead with the command held constant.  Rows are stored output-major:
for each output the horizons ``0..s_star`` followed by the steady-state row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linprog

from .errors import DesignError, HorizonOverflowError, InfeasibleTighteningError, InvalidInputError
from .plant import AugmentedSystem, is_observable

INF_HORIZON = -1
DEFAULT_EPSILON = 0.01
DEFAULT_S_CAP = 1000
FORMAT_HEADER = "# rotec admissible set v1"


@dataclass(frozen=True)
class ConstraintRow:
    output_index: int
    horizon: int  # INF_HORIZON for the steady-state row
    c: np.ndarray
    h: np.ndarray
    b: float

    @property
    def is_steady_state(self):
        return self.horizon == INF_HORIZON


@dataclass(frozen=True)
class AdmissibleSet:
    """Stacked constraint rows plus the tightening parameters.

    ``beta = inf`` denotes the untightened set; ``b`` always holds the
    untightened bounds and the ``1/beta`` shift is applied on evaluation.
    """

    C: np.ndarray  # (R, nz)
    H: np.ndarray  # (R, n_cmd)
    b: np.ndarray  # (R,)
    output_index: np.ndarray  # (R,) int
    horizon: np.ndarray  # (R,) int, INF_HORIZON for steady state
    s_star: int
    ybar: np.ndarray
    epsilon: float
    beta: float = math.inf
    vartheta: float = 0.0

    @property
    def n_rows(self):
        return self.b.shape[0]

    @property
    def n_out(self):
        return self.ybar.shape[0]

    @property
    def n_cmd(self):
        return self.H.shape[1]

    @property
    def nz(self):
        return self.C.shape[1]

    @property
    def block(self):
        """Rows per output: horizons 0..s_star plus the steady-state row."""
        return self.s_star + 2

    @property
    def shift(self):
        return 0.0 if math.isinf(self.beta) else 1.0 / self.beta

    @property
    def rows(self):
        return [
            ConstraintRow(int(self.output_index[j]), int(self.horizon[j]), self.C[j], self.H[j], float(self.b[j]))
            for j in range(self.n_rows)
        ]

    def row_index(self, i, s):
        s = self.s_star + 1 if s == INF_HORIZON else s
        return i * self.block + s

    def effective_bounds(self, margin=0.0):
        """Linear bounds equivalent to ``log(-beta f + 1) >= margin``."""
        if math.isinf(self.beta):
            if margin != 0.0:
                raise InvalidInputError("a log margin needs a finite beta")
            return self.b.copy()
        return self.b - math.exp(margin) / self.beta

    def untightened(self):
        return replace(self, beta=math.inf, vartheta=0.0)


def _ac_power_rows(sys: AugmentedSystem, i, s_max):
    """C_i A_c^s for s = 0..s_max, stacked."""
    out = np.empty((s_max + 1, sys.nz))
    row = sys.C[i].copy()
    for s in range(s_max + 1):
        out[s] = row
        row = row @ sys.A_c
    return out


def prediction_row(sys: AugmentedSystem, i, s, ybar_i=0.0, epsilon=DEFAULT_EPSILON) -> ConstraintRow:
    """Predicted output ``i`` at horizon ``s`` under a constant command.

    ``h = C_i (I - A_c)^-1 (I - A_c^s) B G + D_i``; the steady-state row has
    ``c = 0`` and a bound shrunk by ``1 - epsilon``.
    """
    nz = sys.nz
    if not 0 <= i < sys.n_out:
        raise InvalidInputError(f"output index {i} out of range")
    BG = sys.B @ sys.G
    if s == INF_HORIZON or s == math.inf:
        h = sys.C[i] @ np.linalg.solve(np.eye(nz) - sys.A_c, BG) + sys.D[i]
        return ConstraintRow(i, INF_HORIZON, np.zeros(nz), h, (1.0 - epsilon) * ybar_i)
    if s < 0:
        raise InvalidInputError("horizon must be nonnegative")
    Acs = np.linalg.matrix_power(sys.A_c, int(s))
    c = sys.C[i] @ Acs
    h = sys.C[i] @ np.linalg.solve(np.eye(nz) - sys.A_c, (np.eye(nz) - Acs) @ BG) + sys.D[i]
    return ConstraintRow(i, int(s), c, h, float(ybar_i))


def _stack_rows(sys, ybar, epsilon, s_max):
    """Rows for all outputs, horizons 0..s_max and steady state, output-major."""
    nz, m = sys.nz, sys.n_cmd
    BG = sys.B @ sys.G
    X = np.linalg.solve(np.eye(nz) - sys.A_c, BG)  # (I - A_c)^-1 B G
    Cs, Hs, bs, idx, hor = [], [], [], [], []
    for i in range(sys.n_out):
        P = _ac_power_rows(sys, i, s_max)
        # C_i (I-A_c)^-1 (I - A_c^s) B G = C_i X - C_i A_c^s X (A_c commutes with its resolvent)
        h_inf = sys.C[i] @ X + sys.D[i]
        H = h_inf[None, :] - P @ X
        Cs.append(P)
        Hs.append(H)
        bs.append(np.full(s_max + 1, float(ybar[i])))
        Cs.append(np.zeros((1, nz)))
        Hs.append(h_inf[None, :])
        bs.append(np.array([(1.0 - epsilon) * ybar[i]]))
        idx.append(np.full(s_max + 2, i))
        hor.append(np.r_[np.arange(s_max + 1), INF_HORIZON])
    return (
        np.vstack(Cs),
        np.vstack(Hs).reshape(-1, m),
        np.concatenate(bs),
        np.concatenate(idx).astype(int),
        np.concatenate(hor).astype(int),
    )


def _lp_max(obj, A_ub, b_ub):
    """Maximise ``obj . x`` over ``A_ub x <= b_ub``; returns (status, value)."""
    res = linprog(-obj, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * obj.size, method="highs")
    if res.status == 3:
        return "unbounded", math.inf
    if res.status == 2:
        # HiGHS may report "infeasible or unbounded"; disambiguate with a pure feasibility solve
        feas = linprog(np.zeros_like(obj), A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * obj.size, method="highs")
        if feas.status == 0:
            return "unbounded", math.inf
        return "infeasible", -math.inf
    if res.status != 0:
        raise DesignError(f"LP solver failed: {res.message}")
    return "optimal", -res.fun


def _check_bounds(sys, ybar, epsilon):
    ybar = np.asarray(ybar, dtype=float).reshape(-1)
    if ybar.size != sys.n_out:
        raise InvalidInputError(f"need {sys.n_out} bounds, got {ybar.size}")
    if np.any(ybar < 0) or not np.all(np.isfinite(ybar)):
        raise InvalidInputError("output bounds must be finite and nonnegative")
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    return ybar


def compute_s_star(sys: AugmentedSystem, ybar, epsilon=DEFAULT_EPSILON, shift=0.0, cap=DEFAULT_S_CAP, start=0):
    """Smallest horizon after which every further prediction row is redundant.

    Each step solves, for every output, the LP maximising the next-horizon
    prediction over the rows kept so far (including steady-state rows) and
    stops once all maxima stay below their bound.  ``shift`` tightens every
    bound uniformly before the test.
    """
    ybar = _check_bounds(sys, ybar, epsilon)
    if not is_observable(sys.A, sys.C):
        raise DesignError("(A, C) is not observable; the admissible set is unbounded")
    nz, m = sys.nz, sys.n_cmd
    X = np.linalg.solve(np.eye(nz) - sys.A_c, sys.B @ sys.G)
    h_inf = sys.C @ X + sys.D  # (n_out, m)
    b_inf = (1.0 - epsilon) * ybar - shift
    # running power rows C A_c^s for all outputs
    powers = [sys.C.copy()]
    t = 0
    while True:
        while len(powers) < t + 2:
            powers.append(powers[-1] @ sys.A_c)
        P = np.vstack(powers[: t + 1])  # rows ordered by horizon then output
        H = np.vstack([h_inf - Pk @ X for Pk in powers[: t + 1]])
        A_ub = np.vstack([np.hstack([P, H]), np.hstack([np.zeros((sys.n_out, nz)), h_inf])])
        b_ub = np.concatenate([np.tile(ybar - shift, t + 1), b_inf])
        nxt = powers[t + 1]
        redundant = True
        failing = None
        for i in range(sys.n_out):
            obj = np.concatenate([nxt[i], h_inf[i] - nxt[i] @ X])
            status, val = _lp_max(obj, A_ub, b_ub)
            if status == "infeasible":
                raise DesignError("admissible set is empty; check the output bounds")
            tol = 1e-9 * max(1.0, abs(ybar[i]))
            if status == "unbounded" or val > ybar[i] - shift + tol:
                redundant = False
                failing = i
                break
        if redundant and t >= start:
            return t
        t += 1
        if t > cap:
            raise HorizonOverflowError(
                f"finite determination exceeded the horizon cap {cap} (output {failing} still binding)",
                output=failing,
            )


def build_admissible_set(sys: AugmentedSystem, ybar, epsilon=DEFAULT_EPSILON, s_star=None, cap=DEFAULT_S_CAP):
    """Untightened set (``beta = inf``) at the finitely determined horizon."""
    ybar = _check_bounds(sys, ybar, epsilon)
    if s_star is None:
        s_star = compute_s_star(sys, ybar, epsilon, cap=cap)
    C, H, b, idx, hor = _stack_rows(sys, ybar, epsilon, s_star)
    return AdmissibleSet(C, H, b, idx, hor, int(s_star), ybar, float(epsilon))


def interior_margin(aset: AdmissibleSet, cap=1.0):
    """Largest uniform slack ``t`` with ``c z + h v + t <= b`` for some (z, v)."""
    R = aset.n_rows
    A_ub = np.hstack([aset.C, aset.H, np.ones((R, 1))])
    obj = np.zeros(aset.nz + aset.n_cmd + 1)
    obj[-1] = 1.0
    A_ub = np.vstack([A_ub, obj])
    b_ub = np.concatenate([aset.b, [cap]])
    status, val = _lp_max(obj, A_ub, b_ub)
    if status != "optimal":
        return -math.inf
    return val


def feasible_point(aset: AdmissibleSet, cap=1.0):
    """A Chebyshev-style interior point ``(z, v)`` of the untightened rows."""
    R = aset.n_rows
    A_ub = np.vstack([np.hstack([aset.C, aset.H, np.ones((R, 1))]), np.r_[np.zeros(aset.nz + aset.n_cmd), 1.0]])
    obj = np.zeros(aset.nz + aset.n_cmd + 1)
    obj[-1] = 1.0
    res = linprog(-obj, A_ub=A_ub, b_ub=np.r_[aset.b, cap], bounds=[(None, None)] * obj.size, method="highs")
    if res.status != 0:
        raise DesignError(f"no interior point: {res.message}")
    x = res.x
    return x[: aset.nz], x[aset.nz : aset.nz + aset.n_cmd], x[-1]


def _thinnest_output(aset: AdmissibleSet):
    """Output whose rows alone leave the smallest interior margin."""
    best, worst = math.inf, 0
    for i in range(aset.n_out):
        keep = aset.output_index == i
        sub = replace(aset, C=aset.C[keep], H=aset.H[keep], b=aset.b[keep],
                      output_index=aset.output_index[keep], horizon=aset.horizon[keep])
        m = interior_margin(sub)
        if m < best:
            best, worst = m, i
    return worst


def tighten(aset: AdmissibleSet, beta, vartheta=0.0, sys: AugmentedSystem | None = None):
    """Shift every bound by ``1/beta`` and attach the log margin ``vartheta``.

    When ``sys`` is given the horizon is re-checked against the bounds shifted
    by ``1/beta`` and by ``exp(vartheta)/beta`` and extended if either level
    needs more rows to stay invariant.
    """
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    if not vartheta >= 0:
        raise InvalidInputError("vartheta must be nonnegative")
    if sys is not None and math.isfinite(beta):
        # commands live at log(phi) >= 0 and the flow targets log(phi) >= vartheta: both levels must be invariant
        s_tight = max(
            compute_s_star(sys, aset.ybar, aset.epsilon, shift=level / beta, start=aset.s_star)
            for level in {1.0, math.exp(vartheta)}
        )
        if s_tight > aset.s_star:
            aset = build_admissible_set(sys, aset.ybar, aset.epsilon, s_star=s_tight)
    margin = interior_margin(aset)
    required = math.exp(vartheta) / beta
    if not margin > required:
        failing = _thinnest_output(aset)
        raise InfeasibleTighteningError(
            f"tightened set has empty interior: margin {margin:.3g} <= required slack {required:.3g}"
            f" (output {failing} is the thinnest)",
            margin=margin,
            required=required,
            output=failing,
        )
    return replace(aset, beta=float(beta), vartheta=float(vartheta))


def _vec(x, size, name):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != size:
        raise InvalidInputError(f"{name} has length {x.size}, expected {size}")
    return x


def residuals(aset: AdmissibleSet, z, v):
    """``f = c z + h v - b + 1/beta`` in row order."""
    z = _vec(z, aset.nz, "z")
    v = _vec(v, aset.n_cmd, "v")
    return aset.C @ z + aset.H @ v - aset.b + aset.shift


def contains(aset: AdmissibleSet, z, v, margin=0.0):
    """True iff ``log(-beta f + 1) >= margin`` on every row.

    For the untightened set (``beta = inf``) this is plain ``f <= 0``.
    """
    f = residuals(aset, z, v)
    if math.isinf(aset.beta):
        return bool(np.all(f <= 0.0))
    phi = -aset.beta * f + 1.0
    if np.any(phi <= 0.0):
        return False
    return bool(np.all(np.log(phi) >= margin))


def save(aset: AdmissibleSet, path):
    """Write the set as row-major plain text; floats use ``repr`` for exact round trips.

    Layout::

        # rotec admissible set v1
        n_out <int>  n_cmd <int>  nz <int>  s_star <int>
        beta <float>  epsilon <float>  vartheta <float>
        ybar <float> ...
        rows <R>
        <output_index> <horizon|inf> <b> <c_1..c_nz> <h_1..h_ncmd>   (R lines)
    """
    lines = [
        FORMAT_HEADER,
        f"n_out {aset.n_out}",
        f"n_cmd {aset.n_cmd}",
        f"nz {aset.nz}",
        f"s_star {aset.s_star}",
        f"beta {aset.beta!r}",
        f"epsilon {aset.epsilon!r}",
        f"vartheta {aset.vartheta!r}",
        "ybar " + " ".join(repr(float(y)) for y in aset.ybar),
        f"rows {aset.n_rows}",
    ]
    for j in range(aset.n_rows):
        hor = "inf" if aset.horizon[j] == INF_HORIZON else str(int(aset.horizon[j]))
        nums = [repr(float(aset.b[j]))] + [repr(float(x)) for x in aset.C[j]] + [repr(float(x)) for x in aset.H[j]]
        lines.append(f"{int(aset.output_index[j])} {hor} " + " ".join(nums))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path) -> AdmissibleSet:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != FORMAT_HEADER:
        raise InvalidInputError(f"{path}: not a rotec admissible-set file")
    header = {}
    k = 1
    while not lines[k].startswith("rows "):
        key, *vals = lines[k].split()
        header[key] = vals
        k += 1
    n_rows = int(lines[k].split()[1])
    nz, m = int(header["nz"][0]), int(header["n_cmd"][0])
    C = np.empty((n_rows, nz))
    H = np.empty((n_rows, m))
    b = np.empty(n_rows)
    idx = np.empty(n_rows, dtype=int)
    hor = np.empty(n_rows, dtype=int)
    for j, ln in enumerate(lines[k + 1 : k + 1 + n_rows]):
        parts = ln.split()
        idx[j] = int(parts[0])
        hor[j] = INF_HORIZON if parts[1] == "inf" else int(parts[1])
        nums = [float(x) for x in parts[2:]]
        b[j] = nums[0]
        C[j] = nums[1 : 1 + nz]
        H[j] = nums[1 + nz :]
    return AdmissibleSet(
        C,
        H,
        b,
        idx,
        hor,
        int(header["s_star"][0]),
        np.array([float(x) for x in header["ybar"]]),
        float(header["epsilon"][0]),
        float(header["beta"][0]),
        float(header["vartheta"][0]),
    )


def sets_equal(a: AdmissibleSet, b: AdmissibleSet):
    """Bit-exact comparison of two sets."""
    return (
        a.s_star == b.s_star
        and a.epsilon == b.epsilon
        and (a.beta == b.beta)
        and a.vartheta == b.vartheta
        and np.array_equal(a.ybar, b.ybar)
        and np.array_equal(a.C, b.C)
        and np.array_equal(a.H, b.H)
        and np.array_equal(a.b, b.b)
        and np.array_equal(a.output_index, b.output_index)
        and np.array_equal(a.horizon, b.horizon)
    )
