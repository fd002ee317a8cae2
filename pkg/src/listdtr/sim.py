"""Simulation scenarios I-V, Monte Carlo regime values and the benchmark harness.

Every scenario is written as a rollout: covariates and outcome noise are
drawn from one stream in a fixed order, actions come from a policy callback
(uniform randomisation by default), so two policies evaluated with the same
seed see the same patients.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ScenarioError
from .model import Clause, DecisionList, Region, Regime, TrajectoryDataset

SCENARIOS = ("I", "II", "III", "IV", "V")
BENCH_HEADER = "scenario,n,replications,mean_value,sd_value,runtime_seconds"

_PM = (-1, 1)
_V_ACTIONS = ((0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3))
_V_A1 = np.array([a for a, _ in _V_ACTIONS], dtype=float)
_V_A2 = np.array([b for _, b in _V_ACTIONS], dtype=float)
_PM_LABELS = np.array(_PM, dtype=float)

_SHAPES = {
    "I": ((50, 0), (_PM, _PM)),
    "II": ((50, 2), (_PM, _PM)),
    "III": ((3, 1, 1), (_PM,) * 3),
    "IV": ((50, 1, 1), (_PM,) * 3),
    "V": ((1,) * 10, (_V_ACTIONS,) * 10),
}


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ScenarioError(f"unknown scenario {self.id!r}; choose one of {', '.join(SCENARIOS)}")
        if int(self.n) < 0:
            raise ScenarioError("n must be non-negative")

    @property
    def T(self) -> int:
        return len(_SHAPES[self.id][0])

    @property
    def p(self) -> tuple:
        return _SHAPES[self.id][0]

    @property
    def action_sets(self) -> tuple:
        return _SHAPES[self.id][1]


def _random_pm(t, n, rng):
    return rng.integers(0, 2, n)


def _random_v(t, n, rng):
    a1 = rng.integers(0, 2, n)
    a2 = np.where(a1 == 0, rng.integers(0, 4, n), rng.integers(1, 4, n))
    return np.where(a1 == 0, a2, a2 + 3)


class _Rollout:
    """Accumulates one batch of trajectories and asks the policy for actions."""

    def __init__(self, n, policy, random_actions, action_rng):
        self.n = n
        self.policy = policy
        self.random_actions = random_actions
        self.action_rng = action_rng
        self.S, self.A, self.Y = [], [], []
        self.X = None

    def act(self, S) -> np.ndarray:
        S = np.asarray(S, dtype=float)
        S = S[:, None] if S.ndim == 1 else S
        t = len(self.S) + 1
        if t == 1:
            self.X = S
        else:
            self.X = np.hstack([self.X, self.A[-1][:, None].astype(float), self.Y[-1][:, None], S])
        self.S.append(S)
        if self.policy is None:
            idx = self.random_actions(t, self.n, self.action_rng)
        else:
            idx = np.asarray(self.policy(t, self.X), dtype=np.int64)
        self.A.append(idx)
        return idx

    def reward(self, Y):
        self.Y.append(np.asarray(Y, dtype=float))


def _scenario_i(ro, n, rng):
    S1 = rng.standard_normal((n, 50))
    e1, e2 = rng.standard_normal(n), rng.standard_normal(n)
    A1 = _PM_LABELS[ro.act(S1)]
    Y1 = 0.5 * S1[:, 2] * A1 + e1
    ro.reward(Y1)
    A2 = _PM_LABELS[ro.act(np.empty((n, 0)))]
    r = S1[:, 0] ** 2 + S1[:, 1] ** 2
    ro.reward(((r - 0.2) * (0.5 - r) + Y1) * A2 + e2)


def _scenario_ii(ro, n, rng):
    S1 = rng.standard_normal((n, 50))
    e1, e2 = rng.standard_normal(n), rng.standard_normal(n)
    u1, u2 = rng.random(n), rng.random(n)
    A1 = _PM_LABELS[ro.act(S1)]
    Y1 = (1 + 1.5 * S1[:, 2]) * A1 + e1
    ro.reward(Y1)
    S21 = (u1 < 1 - ndtr(1.25 * S1[:, 0] * A1)).astype(float)
    S22 = (u2 < 1 - ndtr(-1.75 * S1[:, 1] * A1)).astype(float)
    A2 = _PM_LABELS[ro.act(np.column_stack([S21, S22]))]
    ro.reward((0.5 + Y1 + 0.5 * A1 + 0.5 * S21 - 0.5 * S22) * A2 + e2)


def _chain(ro, n, rng, p1):
    S1 = rng.normal(45.0, 15.0, (n, p1))
    z2, z3, e3 = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n)
    A1 = _PM_LABELS[ro.act(S1)]
    ro.reward(np.zeros(n))
    S2 = 1.5 * S1[:, 0] + 10.0 * z2
    A2 = _PM_LABELS[ro.act(S2)]
    ro.reward(np.zeros(n))
    S3 = 0.5 * S2 + 10.0 * z3
    A3 = _PM_LABELS[ro.act(S3)]

    def pen(scale, on, cut):
        return scale * ((on > 0).astype(float) - cut) ** 2

    mu3 = (20.0 - pen(np.abs(0.6 * S1[:, 0] - 40), A1, S1[:, 0] > 30)
           - pen(np.abs(0.8 * S2 - 60), A2, S2 > 40)
           - pen(np.abs(1.4 * S3 - 40), A3, S3 > 40))
    ro.reward(mu3 + e3)


def _scenario_iii(ro, n, rng):
    _chain(ro, n, rng, 3)


def _scenario_iv(ro, n, rng):
    _chain(ro, n, rng, 50)


def _scenario_v(ro, n, rng):
    U = rng.normal(0.0, 0.1, (10, n))
    E = rng.normal(0.0, 0.8, (10, n))
    S = prev1 = prev2 = None
    for t in range(10):
        S = 0.5 + U[t] if t == 0 else (
            0.5 + 0.2 * S - 0.07 * prev1 * prev2 - 0.01 * (1 - prev1) * prev2 + U[t])
        idx = ro.act(S)
        a1, a2 = _V_A1[idx], _V_A2[idx]
        mu = (30.0 * (t == 0) - 5 * U[t] - 6 * (a1 - (S > 5 / 9)) ** 2
              - 1.5 * a1 * (a2 - 2 * S) ** 2 - 1.5 * (1 - a1) * (a2 - 5.5 * S) ** 2)
        ro.reward(mu + E[t])
        prev1, prev2 = a1, a2


_ROLLOUTS = {"I": _scenario_i, "II": _scenario_ii, "III": _scenario_iii,
             "IV": _scenario_iv, "V": _scenario_v}


def _rngs(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    data_ss, action_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(action_ss)


def simulate(spec: ScenarioSpec, policy=None, seed=None) -> TrajectoryDataset:
    """Roll out ``spec.n`` trajectories.

    ``policy(t, X_t)`` returns action indices; ``None`` randomises as in the
    scenario's design.  ``seed`` overrides ``spec.seed``.
    """
    n = int(spec.n)
    data_rng, action_rng = _rngs(spec.seed if seed is None else seed)
    random_actions = _random_v if spec.id == "V" else _random_pm
    ro = _Rollout(n, policy, random_actions, action_rng)
    _ROLLOUTS[spec.id](ro, n, data_rng)
    names = tuple(tuple(f"s{t + 1}_{k + 1}" if p > 1 else f"s{t + 1}" for k in range(p))
                  for t, p in enumerate(spec.p))
    return TrajectoryDataset(tuple(ro.S), tuple(ro.A), tuple(ro.Y), spec.action_sets, names)


def generate(spec: ScenarioSpec) -> TrajectoryDataset:
    """Training data with randomised treatments; deterministic per seed."""
    return simulate(spec)


def regime_policy(regime: Regime, action_sets):
    def policy(t, X):
        return regime[t].action_indices(X, action_sets[t - 1])
    return policy


def check_regime(spec: ScenarioSpec, regime: Regime):
    if regime.T != spec.T:
        raise ScenarioError(f"regime has {regime.T} stages but scenario {spec.id} has {spec.T}")
    for t in range(1, spec.T + 1):
        width = sum(spec.p[:t]) + 2 * (t - 1)
        if regime[t].max_index >= width:
            raise ScenarioError(f"stage {t} list uses column {regime[t].max_index} "
                                f"but the history has {width} columns")
        allowed = set(spec.action_sets[t - 1])
        for c in regime[t].clauses:
            if c.action not in allowed:
                raise ScenarioError(f"stage {t} action {c.action!r} is not available in scenario {spec.id}")


def monte_carlo_value(spec: ScenarioSpec | str, regime: Regime, n_test: int, seed: int = 0,
                      chunk: int = 100_000) -> float:
    """Mean total outcome of ``n_test`` fresh trajectories that follow ``regime``."""
    if isinstance(spec, str):
        spec = ScenarioSpec(spec, n_test, seed)
    if n_test < 1:
        raise ScenarioError("n_test must be positive")
    check_regime(spec, regime)
    policy = regime_policy(regime, spec.action_sets)
    sizes = [chunk] * (n_test // chunk) + ([n_test % chunk] if n_test % chunk else [])
    partial = []
    for k, (size, ss) in enumerate(zip(sizes, np.random.SeedSequence(seed).spawn(len(sizes)))):
        data = simulate(ScenarioSpec(spec.id, size), policy, seed=ss)
        partial.append(math.fsum(np.sum(data.rewards, axis=0)))
    return math.fsum(partial) / n_test


def optimal_regime(scenario: str) -> Regime:
    """Treatment-sign rule that zeroes every penalty in Scenarios III and IV."""
    if scenario not in ("III", "IV"):
        raise ScenarioError("the closed-form regime is available for Scenarios III and IV")
    p1 = 3 if scenario == "III" else 50
    cols = (0, p1 + 2, p1 + 5)
    cuts = (30.0, 40.0, 40.0)
    return Regime(tuple(
        DecisionList(t + 1, (Clause(Region.gt(j, c), 1), Clause(Region.all(), -1)))
        for t, (j, c) in enumerate(zip(cols, cuts))))


def constant_regime(scenario: str, actions) -> Regime:
    """One fixed action per stage."""
    return Regime(tuple(DecisionList(t + 1, (Clause(Region.all(), a),))
                        for t, a in enumerate(actions)))


@dataclass
class ValueReport:
    scenario: str
    n: int
    replications: int
    n_test: int
    mean_value: float
    sd_value: float
    runtime_seconds: float
    values: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_test <= 0 or self.sd_value < 0:
            raise ValueError("n_test must be positive and sd non-negative")

    def csv_row(self) -> str:
        return (f"{self.scenario},{self.n},{self.replications},{self.mean_value:.6f},"
                f"{self.sd_value:.6f},{self.runtime_seconds:.3f}")


def replication_seeds(seed: int, r: int) -> tuple[int, int, int]:
    """(data, fit, test) seeds for replication ``r``."""
    state = np.random.SeedSequence([seed, r]).generate_state(3, dtype=np.uint32)
    return tuple(int(s) for s in state)


def _replicate(args):
    from .pipeline import fit_regime
    scenario, n, r, seed, config, n_test = args
    data_seed, fit_seed, test_seed = replication_seeds(seed, r)
    try:
        data = generate(ScenarioSpec(scenario, n, data_seed))
        cfg = config if config is not None else _default_fit_config()
        cfg = _with_seed(cfg, fit_seed)
        fit = fit_regime(data, cfg)
        value = monte_carlo_value(ScenarioSpec(scenario, n_test), fit.regime, n_test, test_seed)
        return r, value, None
    except Exception as exc:  # recorded by the caller, never dropped
        return r, None, f"{type(exc).__name__}: {exc}"


def _default_fit_config():
    from .pipeline import FitConfig
    return FitConfig()


def _with_seed(cfg, seed):
    from dataclasses import replace
    return replace(cfg, seed=seed)


def run_benchmark(scenario: str, n: int, replications: int, config=None, n_test: int = 100_000,
                  seed: int = 0, workers: int = 1, progress=None) -> ValueReport:
    """``replications`` rounds of generate, fit and Monte Carlo evaluation."""
    ScenarioSpec(scenario, n)
    if replications < 1:
        raise ScenarioError("replications must be at least 1")
    start = time.perf_counter()
    jobs = [(scenario, n, r, seed, config, n_test) for r in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = []
            for res in pool.map(_replicate, jobs):
                results.append(res)
                if progress:
                    progress(res)
    else:
        results = []
        for job in jobs:
            res = _replicate(job)
            results.append(res)
            if progress:
                progress(res)
    results.sort(key=lambda x: x[0])
    values = [v for _, v, err in results if err is None]
    failures = [(r, err) for r, _, err in results if err is not None]
    mean = math.fsum(values) / len(values) if values else float("nan")
    sd = (math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))
          if len(values) > 1 else 0.0)
    return ValueReport(scenario, n, replications, n_test, mean, sd,
                       time.perf_counter() - start, values, failures)
