"""
EDF task sets, stochastic execution times, governor budgets and the
closed-loop Monte Carlo harness.

Budgets are the processor time left to the governor job before its deadline.
In deterministic mode a budget is converted to a flow step count with the
scenario's ``step_cost`` so runs are bit-reproducible; in wall-clock mode the
flow is stopped by a monotonic clock instead.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import plant as pl
from .admissible_set import AdmissibleSet, build_admissible_set, tighten
from .errors import ConfigError, InvalidInputError
from .governor import GovernorProblem, solve_cg_oracle
from .rotec_flow import FlowParams, StepBudget, WallClockBudget, rotec_step

RNG_NAME = "numpy.random.PCG64 seeded by SeedSequence([seed, task_index])"
TIME_QUANTUM = 1e-6  # dispatcher resolution in seconds
VIOLATION_RTOL = 1e-9


# --------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class FixedExec:
    seconds: float


@dataclass(frozen=True)
class WeibullExec:
    """Shifted Weibull execution time in seconds, resampled above ``truncation``."""

    shape: float
    location: float
    scale: float
    truncation: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise InvalidInputError("Weibull shape and scale must be positive")
        if not self.truncation > self.location:
            raise InvalidInputError("truncation must exceed the location")

    def quantile(self, u):
        """Untruncated inverse CDF: ``location + scale * (-ln(1-u))^(1/shape)``."""
        return self.location + self.scale * (-np.log1p(-np.asarray(u, dtype=float))) ** (1.0 / self.shape)


@dataclass(frozen=True)
class TaskSpec:
    id: str
    wcet: float
    period: float
    exec_model: FixedExec | WeibullExec | None = None
    governor: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.period) and self.period > 0):
            raise InvalidInputError(f"task {self.id}: period must be positive")
        if not (self.wcet > 0 and self.wcet <= self.period):
            raise InvalidInputError(f"task {self.id}: need 0 < wcet <= period")
        if isinstance(self.exec_model, WeibullExec) and self.exec_model.truncation > self.wcet + 1e-15:
            raise InvalidInputError(f"task {self.id}: Weibull truncation exceeds the wcet")


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if sum(t.governor for t in self.tasks) > 1:
            raise InvalidInputError("at most one governor task is supported")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("task ids must be unique")

    @property
    def governor(self) -> TaskSpec | None:
        for t in self.tasks:
            if t.governor:
                return t
        return None

    @property
    def others(self):
        return [t for t in self.tasks if not t.governor]


def utilization(ts: TaskSet):
    """``(U, schedulable)`` with ``U = sum wcet_i / period_i`` and EDF test ``U <= 1``."""
    for t in ts.tasks:
        if not t.period > 0:
            raise InvalidInputError(f"task {t.id}: nonpositive period")
    U = math.fsum(t.wcet / t.period for t in ts.tasks)
    return U, U <= 1.0


def min_schedulable_period(wcet, other_utilization):
    """Smallest governor period keeping the EDF test satisfied.

    Computed on the exact rationals of the float inputs, so e.g. ``wcet = 2``
    with ``other_utilization = 0.2`` gives 2.5 without rounding drift.
    """
    rest = 1 - Fraction(other_utilization)
    if rest <= 0:
        raise InvalidInputError("the other tasks already saturate the processor")
    return float(Fraction(wcet) / rest)


def task_rngs(ts: TaskSet, seed):
    """One independent generator per task, split from ``seed``."""
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), j]))) for j in range(len(ts.tasks))]


def sample_exec_time(spec: TaskSpec, rng: np.random.Generator):
    model = spec.exec_model
    if model is None:
        return spec.wcet
    if isinstance(model, FixedExec):
        return model.seconds
    while True:
        x = float(model.quantile(rng.random()))
        if x <= model.truncation:
            return x


def _quanta(seconds):
    return int(round(seconds / TIME_QUANTUM))


def governor_budget(ts: TaskSet, k, rngs, override=None):
    """Processor time left for the governor job released at sample ``k``.

    Jobs of the other tasks released in the governor's window with a deadline
    no later than the governor's preempt it (ties go to the other task); jobs
    due later wait.  Previous windows are assumed to have drained.  With equal
    periods the answer is ``period - sum(exec)``; otherwise the window is
    dispatched on a 1 us grid.
    """
    if override is not None:
        return float(override)
    gov = ts.governor
    if gov is None:
        raise InvalidInputError("no governor task is marked")
    idx = [j for j, t in enumerate(ts.tasks) if not t.governor]
    if all(ts.tasks[j].period == gov.period for j in idx):
        busy = math.fsum(sample_exec_time(ts.tasks[j], rngs[j]) for j in idx)
        return max(gov.period - busy, 0.0)

    T = _quanta(gov.period)
    R = k * T
    D = R + T
    jobs = []
    for j in idx:
        t = ts.tasks[j]
        P = _quanta(t.period)
        first = -(-R // P)  # first release at or after R
        rel = first * P
        while rel < D:
            if rel + P <= D:
                jobs.append((rel, _quanta(sample_exec_time(t, rngs[j]))))
            rel += P
    jobs.sort()
    # work-conserving dispatch: the governor gets exactly the idle quanta
    free_at, busy = R, 0
    for rel, c in jobs:
        start = max(rel, free_at)
        if start >= D:
            break
        end = min(start + c, D)
        busy += end - start
        free_at = start + c
    return max(T - busy, 0) * TIME_QUANTUM


def steps_for_budget(budget, step_cost):
    """Flow steps affordable within ``budget``; any positive budget buys at least one."""
    if budget <= 0:
        return 0
    return max(1, int(math.floor(budget / step_cost * (1.0 + 1e-9))))


# --------------------------------------------------------------------------
# references


class Reference:
    """Desired command ``r``; stateless references also expose ``at(t)``."""

    stateless = True

    def reset(self):
        pass

    def at(self, t):
        raise NotImplementedError

    def value(self, k, t, z):
        return self.at(t)


@dataclass
class ConstantReference(Reference):
    level: np.ndarray

    def __post_init__(self):
        self.level = np.atleast_1d(np.asarray(self.level, dtype=float))

    def at(self, t):
        return self.level.copy()


@dataclass
class PiecewiseReference(Reference):
    """``values[j]`` holds from ``times[j]``; ``initial`` before the first break."""

    times: np.ndarray
    values: np.ndarray
    initial: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(self.times.size, -1)
        if np.any(np.diff(self.times) < 0):
            raise InvalidInputError("piecewise breakpoints must be sorted")
        m = self.values.shape[1]
        self.initial = np.zeros(m) if self.initial is None else np.atleast_1d(np.asarray(self.initial, dtype=float))

    def at(self, t):
        j = np.searchsorted(self.times, t + 1e-12, side="right") - 1
        return self.initial.copy() if j < 0 else self.values[j].copy()


@dataclass
class SineReference(Reference):
    """Slalom: ``amplitude * sin(2 pi (t - start) / period)`` after ``start``, zero before."""

    amplitude: float
    period: float
    start: float = 0.0

    def at(self, t):
        if t < self.start - 1e-12:
            return np.zeros(1)
        return np.array([self.amplitude * math.sin(2.0 * math.pi * (t - self.start) / self.period)])


@dataclass
class FishhookReference(Reference):
    """Steer from ``start``, countersteer from the first roll-rate zero crossing after it.

    The crossing is detected between consecutive samples: if the roll rate
    changes sign between k-1 and k, the countersteer is emitted from k on.
    """

    steer: float
    countersteer: float
    start: float = 0.0
    rate_index: int = 1
    stateless = False

    def __post_init__(self):
        self.reset()

    def reset(self):
        self.switch_k = None
        self._last_rate = 0.0

    def value(self, k, t, z):
        if t < self.start - 1e-12:
            return np.zeros(1)
        if self.switch_k is None:
            rate = float(z[self.rate_index])
            if self._last_rate != 0.0 and rate * self._last_rate <= 0.0:
                self.switch_k = k
            elif rate != 0.0:
                self._last_rate = rate
        return np.array([self.countersteer if self.switch_k is not None else self.steer])


def make_reference(spec):
    if isinstance(spec, Reference):
        return spec
    spec = dict(spec)
    kind = spec.pop("kind", None)
    kinds = {"constant": ConstantReference, "piecewise": PiecewiseReference, "sine": SineReference,
             "fishhook": FishhookReference}
    if kind not in kinds:
        raise ConfigError(f"unknown reference kind {kind!r}; expected one of {sorted(kinds)}")
    try:
        return kinds[kind](**spec)
    except TypeError as exc:
        raise ConfigError(f"reference {kind}: {exc}") from None


# --------------------------------------------------------------------------
# performance index


def performance_index(v, r, dt):
    """Rectangle rule for ``int |v - r|^2 dt`` with both signals held over ``dt``."""
    v = np.asarray(v, dtype=float).reshape(len(v), -1)
    r = np.asarray(r, dtype=float).reshape(len(r), -1)
    if v.shape != r.shape or v.shape[0] == 0:
        raise InvalidInputError("v and r must be nonempty with equal shapes")
    e = v - r
    return float(np.sum(e * e) * dt)


def refined_performance_index(v, t0, dt, reference: Reference, pi_dt):
    """PI of a command held over ``dt`` against a reference sampled every ``pi_dt``."""
    sub = int(round(dt / pi_dt))
    if sub < 1 or not math.isclose(sub * pi_dt, dt, rel_tol=1e-9):
        raise InvalidInputError("pi_dt must divide the sampling period")
    v = np.asarray(v, dtype=float).reshape(len(v), -1)
    total = 0.0
    for k in range(v.shape[0]):
        for j in range(sub):
            e = v[k] - reference.at(t0[k] + j * pi_dt)
            total += float(e @ e)
    return total * pi_dt


# --------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    """Everything a closed-loop run needs; built from a scenario file by ``rotec.config``."""

    name: str
    delta_t: float
    n_samples: int
    C_y: np.ndarray  # constrained outputs, one row per one-sided bound
    ybar: np.ndarray
    reference: dict | Reference
    A_o: np.ndarray = None
    B_o: np.ndarray = None
    A_d: np.ndarray = None  # given instead of A_o/B_o for a plant already in discrete time
    B_d: np.ndarray = None
    discretization: str = "zoh"
    gains: dict = field(default_factory=lambda: {"open_loop": True})
    tracked_C: np.ndarray = None
    tracked_D: np.ndarray = None
    D_y: np.ndarray = None
    input_bounds: list = None  # |u_j| <= bound_j, appended as rows +-(K z + G v)
    epsilon: float = 0.01
    beta: float = 1e5
    vartheta: float = None  # default 1e-6 * beta
    sigma: float = 100.0
    delta_eta: float = 1e-3
    Q: np.ndarray = None
    governor: str = "rotec"  # rotec | oracle
    tasks: list = None
    step_cost: float = None  # seconds of budget per flow step; default delta_eta
    budget_override: float = None  # seconds
    wallclock_scale: float = 1.0
    z0: np.ndarray = None
    v0: np.ndarray = None
    pi_dt: float = None
    seeds: tuple = (0, 0)

    def __post_init__(self):
        if self.governor not in ("rotec", "oracle"):
            raise ConfigError(f"governor must be 'rotec' or 'oracle', got {self.governor!r}")
        if self.discretization not in ("zoh", "euler"):
            raise ConfigError(f"discretization must be 'zoh' or 'euler', got {self.discretization!r}")
        if (self.A_o is None) == (self.A_d is None):
            raise ConfigError("give exactly one of A_o/B_o (continuous) or A_d/B_d (discrete)")
        if not (isinstance(self.n_samples, int) and self.n_samples > 0):
            raise ConfigError("n_samples must be a positive integer")
        if self.vartheta is None:
            self.vartheta = 1e-6 * self.beta if math.isfinite(self.beta) else 0.0
        if self.step_cost is None:
            self.step_cost = self.delta_eta
        if not self.step_cost > 0:
            raise ConfigError("step_cost must be positive")

    def with_(self, **kw):
        return replace(self, **kw)

    def task_set(self) -> TaskSet:
        if not self.tasks:
            return TaskSet((TaskSpec("governor", self.delta_t, self.delta_t, governor=True),))
        ts = TaskSet(tuple(_task_from_dict(d) for d in self.tasks))
        gov = ts.governor
        if gov is None:
            raise ConfigError("the task set has no governor task")
        if not math.isclose(gov.period, self.delta_t, rel_tol=1e-12):
            raise ConfigError(f"governor period {gov.period} differs from delta_t {self.delta_t}")
        return ts


def _task_from_dict(d):
    d = dict(d)
    ex = d.pop("exec", None)
    model = None
    if ex is not None:
        ex = dict(ex)
        kind = ex.pop("kind", None)
        if kind == "fixed":
            model = FixedExec(**ex)
        elif kind == "weibull":
            model = WeibullExec(**ex)
        else:
            raise ConfigError(f"unknown execution-time model {kind!r}")
    try:
        return TaskSpec(exec_model=model, **d)
    except TypeError as exc:
        raise ConfigError(f"task entry: {exc}") from None


@dataclass(frozen=True)
class Setup:
    """Immutable per-scenario data shared by all seeds."""

    sys: pl.AugmentedSystem
    aset: AdmissibleSet  # untightened
    problem: GovernorProblem  # tightened for rotec, untightened for the oracle
    params: FlowParams
    task_set: TaskSet


def build_system(sc: Scenario):
    """Return ``(sys, ybar)``; input bounds become extra constrained outputs."""
    if sc.A_o is not None:
        cp = pl.ContinuousPlant(sc.A_o, sc.B_o)
        dp = pl.discretize(cp, sc.delta_t) if sc.discretization == "zoh" else pl.euler_discretize(cp, sc.delta_t)
    else:
        dp = pl.DiscretePlant(sc.A_d, sc.B_d, sc.delta_t)
    gains = dict(sc.gains)
    if "K" in gains:
        K, G = np.atleast_2d(gains["K"]), np.atleast_2d(gains["G"])
    else:
        if sc.tracked_C is None:
            raise ConfigError("gain design needs tracked_C (and optionally tracked_D)")
        tC = np.atleast_2d(np.asarray(sc.tracked_C, dtype=float))
        tD = np.zeros((tC.shape[0], tC.shape[0])) if sc.tracked_D is None else sc.tracked_D
        K, G = pl.design_tracking_gains(dp, tC, tD, gains)
    C_y = pl._pad_state_rows(sc.C_y, dp.n, dp.n + dp.p, "C_y")
    D_y = np.zeros((C_y.shape[0], G.shape[1])) if sc.D_y is None else np.atleast_2d(sc.D_y)
    ybar = np.asarray(sc.ybar, dtype=float).reshape(-1)
    if sc.input_bounds is not None:
        ub = np.asarray(sc.input_bounds, dtype=float).reshape(-1)
        if ub.size != K.shape[0]:
            raise ConfigError(f"input_bounds needs {K.shape[0]} entries")
        C_y = np.vstack([C_y, K, -K])
        D_y = np.vstack([D_y, G, -G])
        ybar = np.concatenate([ybar, ub, ub])
    return pl.augment(dp, K, G, C_y, D_y), ybar


def build_setup(sc: Scenario) -> Setup:
    sys, ybar = build_system(sc)
    aset = build_admissible_set(sys, ybar, sc.epsilon)
    if sc.governor == "rotec":
        work = tighten(aset, sc.beta, sc.vartheta, sys)
    else:
        work = aset
    return Setup(sys, aset, GovernorProblem(sys, work, sc.Q), FlowParams(sc.sigma, sc.delta_eta), sc.task_set())


@dataclass
class SimTrace:
    k: np.ndarray
    t: np.ndarray
    z: np.ndarray
    r: np.ndarray
    v: np.ndarray
    u: np.ndarray
    y: np.ndarray
    accepted: np.ndarray
    rejected: np.ndarray  # flow ran but no iterate passed the acceptance test; previous command kept
    budget: np.ndarray  # seconds
    flow_steps: np.ndarray
    exposed_violations: np.ndarray  # flow iterates outside the tightened rows
    stalls: np.ndarray  # flow steps whose command step was halved to nothing
    violation_count: int
    pi: float
    metadata: dict

    @property
    def rejections(self):
        return int(np.sum(self.rejected))

    @property
    def total_flow_steps(self):
        return int(np.sum(self.flow_steps))


def simulate(sc: Scenario, seed=0, setup: Setup | None = None, deterministic=True) -> SimTrace:
    """Closed-loop run of ``sc.n_samples`` samples.

    At each sample: read the reference, derive the governor budget, compute
    the command (exact oracle or budgeted flow), apply ``u`` through the
    plant and log the record.
    """
    st = build_setup(sc) if setup is None else setup
    sys, prob = st.sys, st.problem
    ts = st.task_set
    rngs = task_rngs(ts, seed)
    ref = make_reference(sc.reference) if isinstance(sc.reference, dict) else sc.reference
    ref.reset()
    m, N = sys.n_cmd, sc.n_samples
    z = np.zeros(sys.nz) if sc.z0 is None else np.asarray(sc.z0, dtype=float).reshape(-1).copy()
    v = np.zeros(m) if sc.v0 is None else np.atleast_1d(np.asarray(sc.v0, dtype=float)).copy()
    lam = np.zeros(prob.aset.n_rows)
    ybar = st.aset.ybar
    out = dict(
        z=np.empty((N, sys.nz)), r=np.empty((N, m)), v=np.empty((N, m)), u=np.empty((N, sys.p)),
        y=np.empty((N, sys.n_out)), accepted=np.zeros(N, bool), rejected=np.zeros(N, bool),
        budget=np.empty(N), flow_steps=np.zeros(N, int), exposed_violations=np.zeros(N, int),
        stalls=np.zeros(N, int),
    )
    t = np.arange(N) * sc.delta_t
    override = sc.budget_override
    for k in range(N):
        r = np.atleast_1d(ref.value(k, t[k], z)).astype(float)
        budget = governor_budget(ts, k, rngs, override)
        if sc.governor == "oracle":
            v = solve_cg_oracle(prob, z, r)
            u = pl.control(sys, z, v)
            out["accepted"][k] = True
        else:
            if deterministic:
                b = StepBudget(steps_for_budget(budget, sc.step_cost))
            else:
                b = WallClockBudget(budget * sc.wallclock_scale)
            res = rotec_step(prob, z, r, v, lam, b, st.params)
            v, lam, u = res.v_applied, res.lambda_out, res.u
            out["accepted"][k] = res.accepted
            out["rejected"][k] = res.flow_steps > 0 and not res.accepted
            out["flow_steps"][k] = res.flow_steps
            out["exposed_violations"][k] = res.exposed_violations
            out["stalls"][k] = res.stalls
        out["z"][k], out["r"][k], out["v"][k], out["u"][k] = z, r, v, u
        out["y"][k] = pl.output(sys, z, v)
        out["budget"][k] = budget
        z = pl.step(sys, z, u)

    tol = VIOLATION_RTOL * np.maximum(1.0, np.abs(ybar))
    viol = int(np.sum(np.any(out["y"] > ybar + tol, axis=1)))
    if sc.pi_dt is not None and ref.stateless:
        pi = refined_performance_index(out["v"], t, sc.delta_t, ref, sc.pi_dt)
    else:
        pi = performance_index(out["v"], out["r"], sc.delta_t)
    meta = {
        "scenario": sc.name, "seed": int(seed), "rng": RNG_NAME, "governor": sc.governor,
        "deterministic": bool(deterministic), "s_star": prob.aset.s_star, "rows": prob.aset.n_rows,
    }
    if isinstance(ref, FishhookReference):
        meta["switch_k"] = ref.switch_k
    return SimTrace(k=np.arange(N), t=t, violation_count=viol, pi=pi, metadata=meta, **out)


# --------------------------------------------------------------------------
# campaigns

_WORKER = {}


def _init_worker(sc, deterministic):
    _WORKER["sc"] = sc
    _WORKER["setup"] = build_setup(sc)
    _WORKER["det"] = deterministic


def _run_one(seed):
    return simulate(_WORKER["sc"], seed, _WORKER["setup"], _WORKER["det"])


def pool_size(requested=None):
    """Worker count: the request (default 1), capped by ``ROTEC_THREADS`` if set."""
    n = 1 if requested is None else int(requested)
    cap = os.environ.get("ROTEC_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidInputError(f"ROTEC_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def run_seeds(sc: Scenario, seeds, deterministic=True, workers=1, setup: Setup | None = None):
    """Simulate every seed; returns traces in seed order.

    Workers share only the immutable scenario; each builds its own setup.
    """
    seeds = list(seeds)
    if workers <= 1 or len(seeds) < 2:
        st = build_setup(sc) if setup is None else setup
        return [simulate(sc, s, st, deterministic) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(sc, deterministic)) as ex:
        return list(ex.map(_run_one, seeds, chunksize=max(1, len(seeds) // (4 * workers))))
