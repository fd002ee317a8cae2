"""Trajectories, threshold regions, decision lists and regimes.

Regions follow the seven thresholded forms plus the whole space.  Inequalities
are fixed: ``<=`` is inclusive and ``>`` is strict, so a form and its
complement partition the covariate space exactly.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DatasetError, RegimeFormatError, RegionIndexError

FORMS = ("ALL", "LE", "GT", "LE_LE", "LE_GT", "GT_LE", "GT_GT")
ONE_VAR = ("LE", "GT")
TWO_VAR = ("LE_LE", "LE_GT", "GT_LE", "GT_GT")
FORM_ORDER = {f: i for i, f in enumerate(FORMS)}


@dataclass(frozen=True)
class Region:
    form: str
    j1: int | None = None
    tau1: float | None = None
    j2: int | None = None
    tau2: float | None = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown region form {self.form!r}")
        if self.form == "ALL":
            if any(v is not None for v in (self.j1, self.tau1, self.j2, self.tau2)):
                raise ValueError("ALL region takes no indices or thresholds")
            return
        if self.j1 is None or self.tau1 is None:
            raise ValueError(f"{self.form} region needs j1 and tau1")
        object.__setattr__(self, "j1", int(self.j1))
        object.__setattr__(self, "tau1", float(self.tau1))
        if self.j1 < 0:
            raise ValueError("covariate index must be non-negative")
        if self.form in TWO_VAR:
            if self.j2 is None or self.tau2 is None:
                raise ValueError(f"{self.form} region needs j2 and tau2")
            object.__setattr__(self, "j2", int(self.j2))
            object.__setattr__(self, "tau2", float(self.tau2))
            if not self.j1 < self.j2:
                raise ValueError("two-variable regions require j1 < j2")
        elif self.j2 is not None or self.tau2 is not None:
            raise ValueError(f"{self.form} region takes a single covariate")

    @classmethod
    def all(cls) -> Region:
        return cls("ALL")

    @classmethod
    def le(cls, j, tau) -> Region:
        return cls("LE", j, tau)

    @classmethod
    def gt(cls, j, tau) -> Region:
        return cls("GT", j, tau)

    @property
    def n_vars(self) -> int:
        """Number of covariates needed to check membership (0, 1 or 2)."""
        if self.form == "ALL":
            return 0
        return 1 if self.form in ONE_VAR else 2

    @property
    def max_index(self) -> int:
        if self.form == "ALL":
            return -1
        return self.j2 if self.form in TWO_VAR else self.j1

    def _check(self, width):
        if self.max_index >= width:
            raise RegionIndexError(
                f"region uses covariate {self.max_index} but the vector has {width}"
            )

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        self._check(x.shape[-1])
        return bool(self.mask(x[None, :])[0])

    def mask(self, X) -> np.ndarray:
        """Vectorised membership indicator over the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("expected a 2-d covariate matrix")
        self._check(X.shape[1])
        if self.form == "ALL":
            return np.ones(X.shape[0], dtype=bool)
        first, _, second = self.form.partition("_")
        out = _side(X[:, self.j1], first, self.tau1)
        if second:
            out &= _side(X[:, self.j2], second, self.tau2)
        return out

    def to_dict(self) -> dict:
        if self.form == "ALL":
            return {"form": "ALL"}
        if self.form in ONE_VAR:
            return {"form": self.form, "j": self.j1, "tau": self.tau1}
        return {"form": self.form, "j1": self.j1, "tau1": self.tau1,
                "j2": self.j2, "tau2": self.tau2}


def _side(col, op, tau):
    return col <= tau if op == "LE" else col > tau


def region_contains(region: Region, x) -> bool:
    return region.contains(x)


def empirical_rho(r1: Region, r2: Region, X) -> float:
    """Fraction of rows of ``X`` lying in exactly one of the two regions."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return 0.0
    return float(np.mean(r1.mask(X) ^ r2.mask(X)))


@dataclass(frozen=True)
class Clause:
    region: Region
    action: Any


@dataclass(frozen=True)
class DecisionList:
    stage: int
    clauses: tuple[Clause, ...]

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        if not self.clauses:
            raise ValueError("a decision list needs at least one clause")
        if self.clauses[-1].region.form != "ALL":
            raise ValueError("the last clause of a decision list must cover everything")

    def __len__(self):
        return len(self.clauses)

    @property
    def max_index(self) -> int:
        return max(c.region.max_index for c in self.clauses)

    def apply(self, x):
        for clause in self.clauses:
            if clause.region.contains(x):
                return clause.action
        raise AssertionError("unreachable: final clause covers everything")

    def clause_index(self, X) -> np.ndarray:
        """Index of the first clause firing for each row of ``X``."""
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], -1, dtype=np.int64)
        open_ = np.ones(X.shape[0], dtype=bool)
        for k, clause in enumerate(self.clauses):
            hit = open_ & clause.region.mask(X)
            out[hit] = k
            open_ &= ~hit
            if not open_.any():
                break
        return out

    def action_indices(self, X, action_set: Sequence) -> np.ndarray:
        """Recommended actions for every row of ``X`` as indices into ``action_set``."""
        lookup = {_label_key(a): i for i, a in enumerate(action_set)}
        try:
            per_clause = np.array([lookup[_label_key(c.action)] for c in self.clauses])
        except KeyError as exc:
            raise DatasetError(f"list action {exc.args[0]!r} is not in the stage action set") from None
        return per_clause[self.clause_index(X)]


@dataclass(frozen=True)
class Regime:
    lists: tuple[DecisionList, ...]

    def __post_init__(self):
        object.__setattr__(self, "lists", tuple(self.lists))
        for t, dl in enumerate(self.lists, start=1):
            if dl.stage != t:
                raise ValueError(f"list {t} is labelled as stage {dl.stage}")

    @property
    def T(self) -> int:
        return len(self.lists)

    def __getitem__(self, t: int) -> DecisionList:
        """Stage lists are addressed 1-based."""
        return self.lists[t - 1]


def apply_list(dlist: DecisionList, x):
    return dlist.apply(x)


def _label_key(a):
    return tuple(a) if isinstance(a, (list, tuple, np.ndarray)) else a


def _label_to_json(a):
    if isinstance(a, (tuple, list, np.ndarray)):
        return [_label_to_json(v) for v in a]
    if isinstance(a, np.generic):
        return a.item()
    return a


def _label_from_json(a):
    return tuple(_label_from_json(v) for v in a) if isinstance(a, list) else a


# --- trajectories ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """``n`` trajectories over ``T`` stages.

    ``actions[t]`` holds integer indices into ``action_sets[t]``; the labels
    themselves live in ``action_sets``.  Stage numbers in the public methods
    are 1-based.
    """

    covariates: tuple[np.ndarray, ...]
    actions: tuple[np.ndarray, ...]
    rewards: tuple[np.ndarray, ...]
    action_sets: tuple[tuple, ...]
    covariate_names: tuple[tuple[str, ...], ...] | None = None
    ids: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        T = len(self.covariates)
        if T == 0:
            raise DatasetError("dataset needs at least one stage")
        if not (len(self.actions) == len(self.rewards) == len(self.action_sets) == T):
            raise DatasetError("covariates, actions, rewards and action sets disagree on T")
        n = np.asarray(self.actions[0]).shape[0]
        cov, act, rew = [], [], []
        for t in range(T):
            S = np.array(self.covariates[t], dtype=float)
            if S.ndim == 1 and S.size == 0:
                S = S.reshape(n, 0)
            if S.ndim != 2 or S.shape[0] != n:
                raise DatasetError(f"stage {t + 1} covariates must have {n} rows")
            A = np.asarray(self.actions[t])
            if A.shape != (n,) or (A.size and not np.issubdtype(A.dtype, np.integer)):
                raise DatasetError(f"stage {t + 1} actions must be {n} integer indices")
            A = A.astype(np.int64)
            m = len(self.action_sets[t])
            if m < 1:
                raise DatasetError(f"stage {t + 1} has an empty action set")
            if A.size and (A.min() < 0 or A.max() >= m):
                raise DatasetError(f"stage {t + 1} action index outside its action set")
            Y = np.array(self.rewards[t], dtype=float)
            if Y.shape != (n,):
                raise DatasetError(f"stage {t + 1} rewards must have {n} rows")
            for arr in (S, A, Y):
                arr.setflags(write=False)
            cov.append(S)
            act.append(A)
            rew.append(Y)
        object.__setattr__(self, "covariates", tuple(cov))
        object.__setattr__(self, "actions", tuple(act))
        object.__setattr__(self, "rewards", tuple(rew))
        object.__setattr__(self, "action_sets",
                           tuple(tuple(_label_key(a) for a in s) for s in self.action_sets))
        names = self.covariate_names
        if names is None:
            names = tuple(tuple(f"s{t + 1}_{k + 1}" for k in range(cov[t].shape[1]))
                          for t in range(T))
        else:
            names = tuple(tuple(str(v) for v in s) for s in names)
            if len(names) != T or any(len(names[t]) != cov[t].shape[1] for t in range(T)):
                raise DatasetError("covariate names do not match the covariate shapes")
        object.__setattr__(self, "covariate_names", names)
        ids = np.arange(n) if self.ids is None else np.array(self.ids)
        if ids.shape != (n,) or len(np.unique(ids)) != n:
            raise DatasetError("subject ids must be unique, one per row")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_labels(cls, covariates, action_labels, rewards, action_sets=None,
                    covariate_names=None, ids=None) -> TrajectoryDataset:
        """Build from raw action labels; action sets default to the sorted observed labels."""
        idx, sets = [], []
        for t, labels in enumerate(action_labels):
            keys = [_label_key(a) for a in labels]
            aset = tuple(sorted(set(keys))) if action_sets is None else tuple(
                _label_key(a) for a in action_sets[t])
            lookup = {a: i for i, a in enumerate(aset)}
            try:
                idx.append(np.array([lookup[a] for a in keys], dtype=np.int64))
            except KeyError as exc:
                raise DatasetError(
                    f"stage {t + 1} action {exc.args[0]!r} is not in the action set") from None
            sets.append(aset)
        return cls(tuple(covariates), tuple(idx), tuple(rewards), tuple(sets),
                   covariate_names, ids)

    @property
    def n(self) -> int:
        return self.actions[0].shape[0]

    @property
    def T(self) -> int:
        return len(self.actions)

    def m(self, t: int) -> int:
        return len(self.action_sets[t - 1])

    def action_labels(self, t: int) -> list:
        aset = self.action_sets[t - 1]
        return [aset[i] for i in self.actions[t - 1]]

    def history(self, t: int) -> np.ndarray:
        """History matrix X_t.

        X_1 = S_1 and X_t = (X_{t-1}, A_{t-1} index, Y_{t-1}, S_t), so the
        width is the sum of the p_s plus 2(t-1).
        """
        if not 1 <= t <= self.T:
            raise DatasetError(f"stage {t} outside 1..{self.T}")
        if t not in self._cache:
            parts = [self.covariates[0]]
            for s in range(1, t):
                parts += [self.actions[s - 1][:, None].astype(float),
                          self.rewards[s - 1][:, None], self.covariates[s]]
            X = np.ascontiguousarray(np.hstack(parts))
            X.setflags(write=False)
            self._cache[t] = X
        return self._cache[t]

    def history_names(self, t: int) -> list[str]:
        names = list(self.covariate_names[0])
        for s in range(1, t):
            names += [f"a{s}", f"y{s}", *self.covariate_names[s]]
        return names

    def subset(self, rows) -> TrajectoryDataset:
        rows = np.asarray(rows)
        return TrajectoryDataset(
            tuple(S[rows] for S in self.covariates),
            tuple(A[rows] for A in self.actions),
            tuple(Y[rows] for Y in self.rewards),
            self.action_sets, self.covariate_names, self.ids[rows])

    def sorted_by_id(self) -> TrajectoryDataset:
        order = np.argsort(self.ids, kind="stable")
        if np.array_equal(order, np.arange(self.n)):
            return self
        return self.subset(order)


def history_width(p: Sequence[int], t: int) -> int:
    return sum(p[:t]) + 2 * (t - 1)


# --- serialisation ----------------------------------------------------------


def regime_to_dict(regime: Regime) -> dict:
    return {"stages": [
        {"t": dl.stage,
         "clauses": [{**c.region.to_dict(), "action": _label_to_json(c.action)}
                     for c in dl.clauses]}
        for dl in regime.lists]}


def serialize_regime(regime: Regime) -> str:
    return json.dumps(regime_to_dict(regime), indent=2)


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RegimeFormatError(f"expected a number, got {value!r}", where)
    return value


def _index(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise RegimeFormatError(f"expected an integer index, got {value!r}", where)
    return value


_REGION_KEYS = {
    "ALL": set(),
    "LE": {"j", "tau"}, "GT": {"j", "tau"},
    **{f: {"j1", "tau1", "j2", "tau2"} for f in TWO_VAR},
}


def regime_from_dict(doc) -> Regime:
    if not isinstance(doc, dict) or set(doc) != {"stages"}:
        raise RegimeFormatError("document must be an object with a single 'stages' key", "$")
    stages = doc["stages"]
    if not isinstance(stages, list) or not stages:
        raise RegimeFormatError("'stages' must be a non-empty list", "$.stages")
    lists = []
    for s, stage in enumerate(stages):
        where = f"$.stages[{s}]"
        if not isinstance(stage, dict) or set(stage) != {"t", "clauses"}:
            raise RegimeFormatError("stage needs exactly the keys 't' and 'clauses'", where)
        t = _index(stage["t"], where + ".t")
        if t != s + 1:
            raise RegimeFormatError(f"stages must be numbered 1..T in order, got {t}", where + ".t")
        raw = stage["clauses"]
        if not isinstance(raw, list) or not raw:
            raise RegimeFormatError("'clauses' must be a non-empty list", where + ".clauses")
        clauses = []
        for k, c in enumerate(raw):
            cw = f"{where}.clauses[{k}]"
            if not isinstance(c, dict) or "form" not in c or "action" not in c:
                raise RegimeFormatError("clause needs 'form' and 'action'", cw)
            form = c["form"]
            if form not in _REGION_KEYS:
                raise RegimeFormatError(f"unknown form {form!r}", cw + ".form")
            extra = set(c) - {"form", "action"}
            if extra != _REGION_KEYS[form]:
                raise RegimeFormatError(
                    f"{form} clause needs keys {sorted(_REGION_KEYS[form])}, got {sorted(extra)}", cw)
            try:
                if form == "ALL":
                    region = Region.all()
                elif form in ONE_VAR:
                    region = Region(form, _index(c["j"], cw + ".j"), _number(c["tau"], cw + ".tau"))
                else:
                    region = Region(form, _index(c["j1"], cw + ".j1"),
                                    _number(c["tau1"], cw + ".tau1"),
                                    _index(c["j2"], cw + ".j2"),
                                    _number(c["tau2"], cw + ".tau2"))
            except ValueError as exc:
                if isinstance(exc, RegimeFormatError):
                    raise
                raise RegimeFormatError(str(exc), cw) from None
            clauses.append(Clause(region, _label_from_json(c["action"])))
        try:
            lists.append(DecisionList(t, tuple(clauses)))
        except ValueError as exc:
            raise RegimeFormatError(str(exc), where + ".clauses") from None
    return Regime(tuple(lists))


def deserialize_regime(text: str) -> Regime:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegimeFormatError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return regime_from_dict(doc)


# --- human-readable rendering -----------------------------------------------


def _fmt_tau(tau: float) -> str:
    return repr(float(tau))


def _fmt_action(a) -> str:
    if isinstance(a, tuple):
        return "(" + ", ".join(_fmt_action(v) for v in a) + ")"
    return str(a)


def _condition(region: Region, names) -> str:
    first, _, second = region.form.partition("_")
    ops = {"LE": "<=", "GT": ">"}
    parts = [f"{names[region.j1]} {ops[first]} {_fmt_tau(region.tau1)}"]
    if second:
        parts.append(f"{names[region.j2]} {ops[second]} {_fmt_tau(region.tau2)}")
    return " and ".join(parts)


def render_list(dlist: DecisionList, names: Sequence[str]) -> str:
    """Paragraph-style if / else if / else rendering, one line per clause.

    Clauses after the first ALL clause are unreachable and are not shown.
    """
    if len(names) <= dlist.max_index:
        raise RegionIndexError(f"need at least {dlist.max_index + 1} column names")
    lines = []
    for k, clause in enumerate(dlist.clauses):
        action = _fmt_action(clause.action)
        if clause.region.form == "ALL":
            lines.append(f"else {action}")
            break
        lead = "If" if k == 0 else "else if"
        lines.append(f"{lead} {_condition(clause.region, names)} then {action}")
    return "\n".join(lines)


_COND = re.compile(r"^(?P<name>.+?) (?P<op><=|>) (?P<tau>\S+)$")


def parse_rendered(text: str, names: Sequence[str], actions: Sequence, stage: int = 1) -> DecisionList:
    """Inverse of :func:`render_list` given the column names and action set.

    Column names must not themselves contain the word " and ".
    """
    col = {name: j for j, name in enumerate(names)}
    act = {_fmt_action(a): a for a in actions}
    clauses = []
    for lineno, line in enumerate(text.strip().splitlines(), start=1):
        line = line.strip()
        try:
            if line.startswith("else ") and " then " not in line:
                clauses.append(Clause(Region.all(), act[line[5:]]))
                continue
            head, sep, action = line.rpartition(" then ")
            if not sep:
                raise ValueError("missing 'then'")
            for lead in ("If ", "else if "):
                if head.startswith(lead):
                    head = head[len(lead):]
                    break
            else:
                raise ValueError("line must start with 'If', 'else if' or 'else'")
            conds = []
            for part in head.split(" and "):
                m = _COND.match(part)
                if m is None:
                    raise ValueError(f"cannot parse condition {part!r}")
                conds.append((col[m["name"]], "LE" if m["op"] == "<=" else "GT", float(m["tau"])))
            if len(conds) == 1:
                (j, op, tau), = conds
                region = Region(op, j, tau)
            elif len(conds) == 2:
                (j1, o1, t1), (j2, o2, t2) = sorted(conds)
                region = Region(f"{o1}_{o2}", j1, t1, j2, t2)
            else:
                raise ValueError("at most two conditions per clause")
            clauses.append(Clause(region, act[action]))
        except (KeyError, ValueError) as exc:
            raise RegimeFormatError(str(exc), f"line {lineno}") from None
    try:
        return DecisionList(stage, tuple(clauses))
    except ValueError as exc:
        raise RegimeFormatError(str(exc), "end of text") from None
