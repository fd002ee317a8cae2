"""Backward recursion: Q-models and decision lists from the last stage to the first."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .builder import BuildTrace, ListConfig, QModelSet, assign_folds, grow_list, tune_zeta_eta
from .errors import PositivityError
from .krr import KrrSearchConfig, TuneResult, default_params, fit_krr, tune_krr
from .model import DecisionList, Regime, TrajectoryDataset, regime_to_dict

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    krr: KrrSearchConfig = field(default_factory=KrrSearchConfig)
    lists: ListConfig = field(default_factory=ListConfig)
    seed: int = 0
    tune_penalties: bool = True


def stage_seed(seed: int, *key: int) -> np.random.SeedSequence:
    """Independent stream for (stage, purpose, ...) derived from the root seed."""
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


@dataclass(eq=False)
class StageFit:
    stage: int
    qmodels: QModelSet
    dlist: DecisionList
    tuning: list
    zeta: float
    eta: float
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "t": self.stage,
            "zeta": self.zeta,
            "eta": self.eta,
            "kernel": [{"action": _jsonable(a),
                        "gamma": m.params.gamma.tolist(), "lambda": m.lam, "bound": m.bound,
                        "offset": m.offset}
                       for a, m in zip(self.qmodels.actions, self.qmodels.models)],
            **self.diagnostics,
        }


def _jsonable(a):
    return list(a) if isinstance(a, tuple) else a


def fit_stage(dataset: TrajectoryDataset, t: int, next_pseudo=None,
              config: FitConfig | None = None) -> StageFit:
    """Fit per-action Q-models at stage ``t`` and grow its decision list."""
    config = config or FitConfig()
    if (t == dataset.T) != (next_pseudo is None):
        raise ValueError("the continuation value is required exactly for stages before T")
    X = dataset.history(t)
    y = dataset.rewards[t - 1].copy()
    if next_pseudo is not None:
        y = y + np.asarray(next_pseudo, dtype=float)
    bound = float(np.max(np.abs(y))) if y.size else 0.0
    actions = dataset.action_sets[t - 1]
    A = dataset.actions[t - 1]
    warnings, models, tuning, cells = [], [], [], {}
    sizes = np.bincount(A, minlength=len(actions))
    for a, label in enumerate(actions):
        cells[str(label)] = int(sizes[a])
        if sizes[a] == 0:
            raise PositivityError(f"stage {t}: no subject received action {label!r}")
    offsets = _offsets(y, A, len(actions), config.krr.center)
    yc = y - offsets[A]
    shared = None
    if config.krr.pooled and np.any(sizes >= 2):
        shared = tune_krr(X, yc, config.krr, seed=stage_seed(config.seed, t, 1), groups=A)
        if shared.degenerate:
            warnings.append("constant response; default kernel parameters")
    for a, label in enumerate(actions):
        idx = np.flatnonzero(A == a)
        if idx.size == 1:
            params, lam = default_params(X, config.krr)
            warnings.append(f"action {label!r} has a single subject; default kernel parameters")
            tuning.append(None)
        elif shared is not None:
            params, lam = shared.params, shared.lam
            tuning.append(shared)
        else:
            res: TuneResult = tune_krr(X[idx], yc[idx], config.krr,
                                       seed=stage_seed(config.seed, t, 1, a))
            if res.degenerate:
                warnings.append(f"action {label!r} has a constant response; default kernel parameters")
            params, lam = res.params, res.lam
            tuning.append(res)
        models.append(fit_krr(X[idx], y[idx], params, lam, bound, offsets[a]))
    qset = QModelSet(actions, tuple(models))
    Q = qset.predict(X)

    cv_scores = None
    lcfg = config.lists
    zeta, eta = lcfg.zeta, lcfg.eta
    if config.tune_penalties:
        folds = assign_folds(dataset.ids, lcfg.folds, stage_seed(config.seed, t, 0))

        def factory(train):
            fold_models = []
            shift = _offsets(y[train], A[train], len(actions), config.krr.center)
            for a, full in enumerate(models):
                cell = train[A[train] == a]
                fold_models.append(full if cell.size == 0 else
                                   fit_krr(X[cell], y[cell], full.params, full.lam, bound, shift[a]))
            return QModelSet(actions, tuple(fold_models))

        scale = float(np.std(y)) if y.size > 1 else 1.0
        choice = tune_zeta_eta(X, factory, lcfg, folds, scale=scale if scale > 0 else 1.0, stage=t)
        zeta, eta = choice.zeta, choice.eta
        cv_scores = [[z, e, s] for (z, e), s in choice.scores.items()]

    trace = BuildTrace()
    dlist = grow_list(Q, X, actions, zeta, eta, lcfg.l_max, t, trace)
    rec = dlist.action_indices(X, actions)
    rows = np.arange(X.shape[0])
    diagnostics = {
        "n": int(X.shape[0]),
        "cell_sizes": cells,
        "list_length": len(dlist),
        "covered_counts": trace.covered,
        "plugin_value": float(Q[rows, rec].mean()),
        "greedy_value": float(Q.max(axis=1).mean()),
        "warnings": warnings,
        "cv_scores": cv_scores,
    }
    for w in warnings:
        log.warning("stage %d: %s", t, w)
    return StageFit(t, qset, dlist, tuning, float(zeta), float(eta), diagnostics)


def _offsets(y, A, m, center) -> np.ndarray:
    """Per-action response offsets removed before the kernel fit."""
    if center == "stage" and y.size:
        return np.full(m, y.mean())
    out = np.zeros(m)
    if center == "action":
        for a in range(m):
            hit = A == a
            if hit.any():
                out[a] = y[hit].mean()
    return out


def pseudo_outcomes(dataset: TrajectoryDataset, t: int, next_fit: StageFit) -> np.ndarray:
    """Y_t plus the next stage's fitted Q at the next stage's list recommendation."""
    X_next = dataset.history(t + 1)
    actions = dataset.action_sets[t]
    rec = next_fit.dlist.action_indices(X_next, actions)
    out = dataset.rewards[t - 1].astype(float)
    for a, model in enumerate(next_fit.qmodels.models):
        hit = rec == a
        if hit.any():
            out[hit] += model.predict(X_next[hit])
    return out


@dataclass(eq=False)
class RegimeFit:
    regime: Regime
    stages: list

    def report(self) -> dict:
        return {"regime": regime_to_dict(self.regime),
                "stages": [s.to_dict() for s in self.stages]}


def fit_regime(dataset: TrajectoryDataset, config: FitConfig | None = None) -> RegimeFit:
    """Backward loop T -> 1.  Rows are canonically ordered by subject id first."""
    config = config or FitConfig()
    data = dataset.sorted_by_id()
    fits: dict[int, StageFit] = {}
    for t in range(data.T, 0, -1):
        nxt = None if t == data.T else pseudo_outcomes(data, t, fits[t + 1])
        fits[t] = fit_stage(data, t, nxt, config)
    stages = [fits[t] for t in range(1, data.T + 1)]
    return RegimeFit(Regime(tuple(s.dlist for s in stages)), stages)
