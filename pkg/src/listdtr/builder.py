"""Greedy construction of a stage's decision list from fitted Q-models.

Each step picks the clause that, followed by the Q-greedy rule on whatever
is left uncovered, maximises the estimated mean outcome plus a mass bonus
``zeta`` and a parsimony bonus ``eta``.  The step is solved as a clause
search on advantage weights ``U[i, a] = Q(x_i, greedy) - Q(x_i, a) - zeta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clause_search import ClauseResult, WeightPanel, raw_search, select_clause
from .model import Clause, DecisionList, Region


@dataclass(frozen=True, eq=False)
class QModelSet:
    """One fitted model per action, aligned with ``actions``."""

    actions: tuple
    models: tuple

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models or len(self.models) != len(self.actions):
            raise ValueError("need one model per action and at least one action")

    def predict(self, X) -> np.ndarray:
        """Prediction matrix, one column per action."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([m.predict(X) for m in self.models])


def pi_q(qmodels: QModelSet, x):
    """Q-greedy action at ``x``; ties go to the lowest action index."""
    return qmodels.actions[int(np.argmax(qmodels.predict(x)[0]))]


def weights_from_q(Q, active, zeta) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    U = Q.max(axis=1, keepdims=True) - Q - zeta
    return np.where(np.asarray(active, dtype=bool)[:, None], U, 0.0)


def compute_weights(qmodels: QModelSet, X, active_mask, zeta: float) -> WeightPanel:
    Q = qmodels.predict(X)
    return WeightPanel(X, weights_from_q(Q, active_mask, zeta), active_mask, qmodels.actions)


@dataclass
class ListConfig:
    """Penalties, list length bound and the cross-validation grid.

    With ``grid_scale="sd"`` the grids are multiplied by the standard
    deviation of the stage response before use.
    """

    zeta: float = 0.0
    eta: float = 0.0
    l_max: int = 10
    zeta_grid: tuple = (0.0, 0.01, 0.05, 0.1, 0.5)
    eta_grid: tuple = (0.0, 0.001, 0.01, 0.1)
    folds: int = 5
    grid_scale: str = "sd"

    def __post_init__(self):
        if self.l_max < 1:
            raise ValueError("l_max must be at least 1")
        if not self.zeta_grid or not self.eta_grid:
            raise ValueError("zeta and eta grids must be non-empty")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.zeta < 0 or self.eta < 0:
            raise ValueError("penalties must be non-negative")
        if self.grid_scale not in ("sd", "absolute"):
            raise ValueError("grid_scale is 'sd' or 'absolute'")


@dataclass
class BuildTrace:
    covered: list = field(default_factory=list)
    objectives: list = field(default_factory=list)


def grow_list(Q, X, actions: Sequence, zeta: float, eta: float, l_max: int, stage: int = 1,
              trace: BuildTrace | None = None, cache: dict | None = None) -> DecisionList:
    """Greedy list construction from a prediction matrix ``Q`` (n x m).

    ``cache`` maps active-set fingerprints to penalty-free sweep results, so
    callers that vary only ``eta`` can share work.
    """
    Q = np.asarray(Q, dtype=float)
    X = np.asarray(X, dtype=float)
    n, m = Q.shape
    active = np.ones(n, dtype=bool)
    clauses = []
    for ell in range(1, l_max + 1):
        if not active.any():
            # earlier clauses already cover every training subject
            a = int(np.argmax(Q.sum(axis=0)))
            clauses.append(Clause(Region.all(), actions[a]))
            _record(trace, 0, np.nan)
            break
        if ell == l_max:
            a = int(np.argmax(Q[active].sum(axis=0)))
            clauses.append(Clause(Region.all(), actions[a]))
            _record(trace, int(active.sum()), np.nan)
            break
        panel = WeightPanel(X, weights_from_q(Q, active, zeta), active, tuple(actions))
        key = (zeta, active.tobytes())
        raw = cache.get(key) if cache is not None else None
        if raw is None:
            raw = raw_search(panel)
            if cache is not None:
                cache[key] = raw
        result: ClauseResult = select_clause(panel, raw, eta)
        clauses.append(Clause(result.region, result.action))
        _record(trace, result.covered_count, result.objective)
        if result.region.form == "ALL":
            break
        active &= ~result.region.mask(X)
    return DecisionList(stage, tuple(clauses))


def _record(trace, covered, objective):
    if trace is not None:
        trace.covered.append(covered)
        trace.objectives.append(objective)


def build_decision_list(qmodels: QModelSet, X, config: ListConfig, stage: int = 1,
                        trace: BuildTrace | None = None) -> DecisionList:
    return grow_list(qmodels.predict(X), X, qmodels.actions, config.zeta, config.eta,
                     config.l_max, stage, trace)


def assign_folds(ids, k: int, seed) -> np.ndarray:
    """Balanced fold labels that depend on subject ids, not on row order."""
    ids = np.asarray(ids)
    order = np.argsort(ids, kind="stable")
    perm = np.random.default_rng(seed).permutation(ids.size)
    folds = np.empty(ids.size, dtype=np.int64)
    folds[order[perm]] = np.arange(ids.size) % k
    return folds


@dataclass
class ZetaEtaChoice:
    zeta: float
    eta: float
    scores: dict

    def __iter__(self):
        return iter((self.zeta, self.eta))


def tune_zeta_eta(X, qfactory: Callable[[np.ndarray], QModelSet], config: ListConfig,
                  folds: np.ndarray, scale: float = 1.0, stage: int = 1) -> ZetaEtaChoice:
    """Cross-validated choice of (zeta, eta) by held-out plug-in value.

    For every fold, ``qfactory(train_rows)`` fits Q-models on the training
    rows; a list is grown on those rows and scored by the mean of the same
    models' predictions at the list's recommendations on the held-out rows.
    The largest mean wins; ties go to the smallest zeta, then smallest eta.
    """
    X = np.asarray(X, dtype=float)
    if config.grid_scale == "sd":
        zetas = [z * scale for z in config.zeta_grid]
        etas = [e * scale for e in config.eta_grid]
    else:
        zetas, etas = list(config.zeta_grid), list(config.eta_grid)
    grid = [(z, e) for z in sorted(set(zetas)) for e in sorted(set(etas))]
    totals = {pt: 0.0 for pt in grid}
    if len(grid) > 1:
        for f in np.unique(folds):
            train, val = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
            if train.size == 0 or val.size == 0:
                continue
            models = qfactory(train)
            Qtr, Qval = models.predict(X[train]), models.predict(X[val])
            cache = {}
            for z, e in grid:
                dl = grow_list(Qtr, X[train], models.actions, z, e, config.l_max, stage,
                               cache=cache)
                rec = dl.action_indices(X[val], models.actions)
                totals[z, e] += float(Qval[np.arange(val.size), rec].sum())
    scores = {pt: v / X.shape[0] for pt, v in totals.items()}
    best = max(grid, key=lambda pt: (scores[pt], -pt[0], -pt[1]))
    return ZetaEtaChoice(best[0], best[1], scores)
