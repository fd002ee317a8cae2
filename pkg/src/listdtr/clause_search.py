"""Optimal single clause for a weighted-indicator objective.

For a fixed stage and list position the clause search minimises

    (1/n) * sum_i U[i, a] * I(x_i in R)  -  eta * (2 - V(R))

over regions ``R`` and actions ``a``, subject to ``R`` covering at least one
active subject.  Weights of inactive subjects are zero, so the search runs on
the active rows only and thresholds are observed values of active subjects.

One-variable regions need a sorted prefix scan.  Two-variable regions sort
along the first covariate and keep a complete binary tree over the ranks of
the second covariate; each node stores its subtree sum and the best prefix
sum inside the subtree, so every insertion updates O(log n) nodes and the
root holds the best threshold for the second covariate.  ``>`` sides are
handled by reflecting ranks, which turns every quadrant into ``<=, <=``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from numba import njit

from .errors import ClauseSearchError
from .model import FORM_ORDER, TWO_VAR, Region

TIE_TOL = 1e-12
BRUTE_FORCE_MAX_N = 500
QUADRANTS = TWO_VAR  # index q: outer reflected iff q >= 2, inner reflected iff q odd


@dataclass(frozen=True, eq=False)
class WeightPanel:
    X: np.ndarray
    U: np.ndarray
    active: np.ndarray
    actions: tuple

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        U = np.asarray(self.U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        active = np.asarray(self.active, dtype=bool)
        n = X.shape[0]
        if X.ndim != 2 or U.shape[0] != n or active.shape != (n,):
            raise ValueError("X, U and active must agree on the number of subjects")
        if U.shape[1] != len(self.actions):
            raise ValueError("U needs one column per action")
        if not np.all(np.isfinite(U)):
            raise ValueError("weights must be finite")
        U = np.where(active[:, None], U, 0.0)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "actions", tuple(self.actions))

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ClauseResult:
    region: Region
    action: Any
    objective: float
    covered_count: int
    action_index: int = 0


def objective_eval(panel: WeightPanel, region: Region, action_index: int, eta: float) -> float:
    """Exact penalised objective; ``inf`` when the region covers no active subject."""
    covered = panel.active & region.mask(panel.X)
    if not covered.any():
        return np.inf
    return float(panel.U[covered, action_index].sum() / panel.n - eta * (2 - region.n_vars))


# --- prefix tree --------------------------------------------------------------


@njit(cache=True)
def _node_add(tree, cap, rank, u, valid):
    """Insert into an interleaved tree.

    ``tree[i, 0]`` is the subtree sum, ``tree[i, 1]`` the best prefix sum and
    ``tree[i, 2]`` the number of inserted rows.  Prefix sums within
    ``TIE_TOL`` favour the longer prefix, which covers more rows.
    """
    node = rank + cap
    tree[node, 0] += u
    tree[node, 2] += 1.0
    if valid:
        tree[node, 1] = tree[node, 0]
    node >>= 1
    while node >= 1:
        left = 2 * node
        s_left = tree[left, 0]
        tree[node, 0] = s_left + tree[left + 1, 0]
        tree[node, 2] = tree[left, 2] + tree[left + 1, 2]
        through = s_left + tree[left + 1, 1]
        b_left = tree[left, 1]
        tree[node, 1] = through if through <= b_left + TIE_TOL else b_left
        node >>= 1


@njit(cache=True)
def _node_walk(tree, cap):
    """Leaf rank of the root's best prefix and the number of rows it covers."""
    node = 1
    count = 0.0
    while node < cap:
        left = 2 * node
        if tree[left, 0] + tree[left + 1, 1] <= tree[left, 1] + TIE_TOL:
            count += tree[left, 2]
            node = left + 1
        else:
            node = left
    return node - cap, count + tree[node, 2]


def _capacity(n_leaves):
    return 1 << max(0, int(n_leaves) - 1).bit_length()


class PrefixTree:
    """Complete binary tree answering "best prefix sum over occupied leaves".

    Node ``i`` keeps ``sums[i]``, the total weight in its subtree, and
    ``best_prefix[i] = min(best_prefix[left], sums[left] + best_prefix[right])``.
    Unoccupied leaves hold ``+inf`` as best prefix and zero as sum, so the root
    only ranges over prefixes that end at an occupied leaf.
    """

    def __init__(self, n_leaves: int):
        if n_leaves < 1:
            raise ValueError("tree needs at least one leaf")
        self.capacity = _capacity(n_leaves)
        self.nodes = np.zeros((2 * self.capacity, 3))
        self.nodes[:, 1] = np.inf

    @property
    def sums(self) -> np.ndarray:
        return self.nodes[:, 0]

    @property
    def best_prefix(self) -> np.ndarray:
        return self.nodes[:, 1]

    def insert(self, rank: int, u: float, valid: bool = True) -> PrefixTree:
        if not 0 <= rank < self.capacity:
            raise ClauseSearchError(f"rank {rank} outside tree capacity {self.capacity}")
        _node_add(self.nodes, self.capacity, int(rank), float(u), bool(valid))
        return self

    def best(self) -> float:
        return float(self.nodes[1, 1])

    def best_rank(self) -> int:
        """Leaf rank where the best prefix ends, or -1 for an empty tree."""
        if not np.isfinite(self.nodes[1, 1]):
            return -1
        return int(_node_walk(self.nodes, self.capacity)[0])


def tree_insert(tree: PrefixTree, rank: int, u: float) -> PrefixTree:
    return tree.insert(rank, u)


def tree_best(tree: PrefixTree) -> float:
    return tree.best()


# --- compiled sweeps ----------------------------------------------------------


@njit(cache=True)
def _sweep_pair(outer_rank, outer_rev, outer_nd, inner_rank, inner_rev, inner_nd, u, tree, cap):
    """Scan rows already sorted by the outer covariate (ascending ranks).

    Returns the best sum, the (reflected) outer rank of the winning group and
    the (reflected) inner rank of the winning prefix.  Sums within
    ``TIE_TOL`` prefer more covered rows, then the smaller first threshold.
    """
    tree[:, 0] = 0.0
    tree[:, 1] = np.inf
    tree[:, 2] = 0.0
    n = outer_rank.shape[0]
    best_val = np.inf
    best_g = -1
    best_r = -1
    best_c = -1.0
    s = 0
    while s < n:
        pos = n - 1 - s if outer_rev else s
        g = outer_rank[pos]
        while s < n:
            pos = n - 1 - s if outer_rev else s
            if outer_rank[pos] != g:
                break
            r = inner_rank[pos]
            if inner_rev:
                r = inner_nd - 1 - r
            _node_add(tree, cap, r, u[pos], (not inner_rev) or r < inner_nd - 1)
            s += 1
        gr = outer_nd - 1 - g if outer_rev else g
        if outer_rev and gr == outer_nd - 1:
            break
        root = tree[1, 1]
        if root > best_val + TIE_TOL or not root < np.inf:
            continue
        r, c = _node_walk(tree, cap)
        # reflected sweeps visit thresholds in decreasing order, so on a full
        # tie the later group has the smaller threshold
        if root < best_val - TIE_TOL or c > best_c or (c == best_c and outer_rev):
            best_val = root
            best_g = gr
            best_r = r
            best_c = c
    return best_val, best_g, best_r


@njit(cache=True)
def _search_pairs(ranks, orders, nds, U, pj, pk):
    """All pairs, quadrants and actions.  ``ranks`` is (d, n), ``U`` is (m, n)."""
    n_pairs = pj.shape[0]
    m, n = U.shape
    vals = np.full((n_pairs, 4, m), np.inf)
    gs = np.full((n_pairs, 4, m), -1, dtype=np.int64)
    rs = np.full((n_pairs, 4, m), -1, dtype=np.int64)
    max_nd = 1
    for c in range(nds.shape[0]):
        if nds[c] > max_nd:
            max_nd = nds[c]
    cap = 1
    while cap < max_nd:
        cap *= 2
    tree = np.empty((2 * cap, 3))
    outer = np.empty(n, dtype=np.int64)
    inner = np.empty(n, dtype=np.int64)
    us = np.empty((m, n))
    last_j = -1
    for p in range(n_pairs):
        j = pj[p]
        k = pk[p]
        order = orders[j]
        if j != last_j:
            for s in range(n):
                outer[s] = ranks[j, order[s]]
                for a in range(m):
                    us[a, s] = U[a, order[s]]
            last_j = j
        for s in range(n):
            inner[s] = ranks[k, order[s]]
        for q in range(4):
            outer_rev = q >= 2
            inner_rev = (q % 2) == 1
            for a in range(m):
                v, g, r = _sweep_pair(outer, outer_rev, nds[j], inner, inner_rev, nds[k],
                                      us[a], tree, cap)
                vals[p, q, a] = v
                gs[p, q, a] = g
                rs[p, q, a] = r
    return vals, gs, rs


@njit(cache=True)
def _search_single(ranks, nds, U):
    d, n = ranks.shape
    m = U.shape[0]
    le_val = np.full((d, m), np.inf)
    le_arg = np.full((d, m), -1, dtype=np.int64)
    gt_val = np.full((d, m), np.inf)
    gt_arg = np.full((d, m), -1, dtype=np.int64)
    for c in range(d):
        agg = np.zeros((nds[c], m))
        for i in range(n):
            for a in range(m):
                agg[ranks[c, i], a] += U[a, i]
        for a in range(m):
            run = 0.0
            for r in range(nds[c]):
                run += agg[r, a]
                if run <= le_val[c, a] + TIE_TOL:
                    le_val[c, a] = run
                    le_arg[c, a] = r
            run = 0.0
            for r in range(nds[c] - 1, 0, -1):
                run += agg[r, a]
                if run <= gt_val[c, a] + TIE_TOL:
                    gt_val[c, a] = run
                    gt_arg[c, a] = r - 1
    return le_val, le_arg, gt_val, gt_arg


# --- public scans -------------------------------------------------------------


def _ranks(col):
    vals, rank = np.unique(col, return_inverse=True)
    return vals, rank.astype(np.int64).reshape(-1)


def best_threshold_1d(values, U, direction: str = "LE"):
    """Best observed threshold for one covariate.

    Returns ``(tau, partial_sum)`` minimising ``sum_i U_i I(x_i <= tau)`` (or
    ``>`` for ``direction="GT"``) over non-empty regions.  Ties in ``values``
    are aggregated before scanning.
    """
    values = np.asarray(values, dtype=float)
    U = np.asarray(U, dtype=float)
    if values.shape[0] < 1 or values.shape != U.shape:
        raise ValueError("need matching, non-empty values and weights")
    if direction not in ("LE", "GT"):
        raise ValueError("direction must be LE or GT")
    vals, rank = _ranks(values)
    le_val, le_arg, gt_val, gt_arg = _search_single(
        rank[None, :], np.array([vals.size], dtype=np.int64), U[None, :])
    if direction == "LE":
        return float(vals[le_arg[0, 0]]), float(le_val[0, 0])
    if gt_arg[0, 0] < 0:
        return None, np.inf
    return float(vals[gt_arg[0, 0]]), float(gt_val[0, 0])


def _pair_thresholds(vals_j, nd_j, vals_k, nd_k, q, g, r):
    tau1 = vals_j[nd_j - 2 - g] if q >= 2 else vals_j[g]
    tau2 = vals_k[nd_k - 2 - r] if q % 2 == 1 else vals_k[r]
    return float(tau1), float(tau2)


def best_thresholds_2d(x1, x2, U, quadrant: str = "LE_LE"):
    """Best observed thresholds ``(tau1, tau2, partial_sum)`` for one covariate pair."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    U = np.asarray(U, dtype=float)
    if not (x1.shape == x2.shape == U.shape) or x1.shape[0] < 1:
        raise ValueError("need matching, non-empty columns")
    q = QUADRANTS.index(quadrant)
    v1, r1 = _ranks(x1)
    v2, r2 = _ranks(x2)
    ranks = np.ascontiguousarray(np.stack([r1, r2]))
    orders = np.ascontiguousarray(np.stack([np.argsort(r1, kind="stable"),
                                            np.argsort(r2, kind="stable")]))
    nds = np.array([v1.size, v2.size], dtype=np.int64)
    vals, gs, rs = _search_pairs(ranks, orders, nds, U[None, :],
                                 np.array([0]), np.array([1]))
    if not np.isfinite(vals[0, q, 0]):
        return None, None, np.inf
    tau1, tau2 = _pair_thresholds(v1, v1.size, v2, v2.size, q, gs[0, q, 0], rs[0, q, 0])
    return tau1, tau2, float(vals[0, q, 0])


# --- clause selection -----------------------------------------------------------


def _tie_key(region: Region, covered: int, action_index: int):
    j1 = -1 if region.j1 is None else region.j1
    j2 = -1 if region.j2 is None else region.j2
    t1 = -np.inf if region.tau1 is None else region.tau1
    t2 = -np.inf if region.tau2 is None else region.tau2
    return (region.n_vars, -covered, j1, j2, t1, t2, action_index, FORM_ORDER[region.form])


def _select(panel, candidates):
    """Deterministic reduction over ``(objective, region, action_index)`` triples.

    Objectives within ``TIE_TOL`` of the minimum compete on fewer variables,
    then more covered subjects, then lexicographic indices and thresholds.
    """
    best_obj = min(c[0] for c in candidates)
    if not np.isfinite(best_obj):
        raise ClauseSearchError("no feasible clause")
    Xa = panel.X[panel.active]
    scored = []
    for obj, region, a in candidates:
        if obj <= best_obj + TIE_TOL:
            covered = int(region.mask(Xa).sum())
            scored.append((_tie_key(region, covered, a), obj, region, a, covered))
    key, obj, region, a, covered = min(scored, key=lambda s: s[0])
    return ClauseResult(region, panel.actions[a], float(obj), covered, int(a))


def _columns(panel, candidate_columns):
    if candidate_columns is None:
        return list(range(panel.X.shape[1]))
    cols = sorted(set(int(c) for c in candidate_columns))
    if cols and (cols[0] < 0 or cols[-1] >= panel.X.shape[1]):
        raise ClauseSearchError("candidate column outside the covariate matrix")
    return cols


@dataclass(frozen=True, eq=False)
class RawSearch:
    """Penalty-free sweep results for one panel; reusable across ``eta`` values."""

    n: int
    cols: list
    vals: tuple
    nds: np.ndarray
    all_sums: np.ndarray
    single: tuple
    pairs: tuple | None


def raw_search(panel: WeightPanel, candidate_columns: Sequence[int] | None = None) -> RawSearch:
    active = np.flatnonzero(panel.active)
    if active.size == 0:
        raise ClauseSearchError("clause search needs at least one active subject")
    cols = _columns(panel, candidate_columns)
    Xa = panel.X[active]
    Ut = np.ascontiguousarray(panel.U[active].T)
    vals, nds, single, pairs = (), np.zeros(0, dtype=np.int64), None, None
    if cols:
        vals, ranks = zip(*(_ranks(Xa[:, c]) for c in cols))
        ranks = np.ascontiguousarray(np.stack(ranks))
        nds = np.array([v.size for v in vals], dtype=np.int64)
        single = _search_single(ranks, nds, Ut)
        if len(cols) >= 2:
            orders = np.ascontiguousarray(
                np.stack([np.argsort(ranks[ci], kind="stable") for ci in range(len(cols))]))
            pj, pk = np.triu_indices(len(cols), k=1)
            pj, pk = pj.astype(np.int64), pk.astype(np.int64)
            pairs = (pj, pk, *_search_pairs(ranks, orders, nds, Ut, pj, pk))
    return RawSearch(panel.n, cols, vals, nds, Ut.sum(axis=1), single, pairs)


def _candidates(raw: RawSearch, eta: float):
    n, cols, vals = raw.n, raw.cols, raw.vals
    out = [(raw.all_sums[a] / n - 2 * eta, Region.all(), a) for a in range(raw.all_sums.size)]
    if raw.single is not None:
        le_val, le_arg, gt_val, gt_arg = raw.single
        for ci, c in enumerate(cols):
            for a in range(le_val.shape[1]):
                if np.isfinite(le_val[ci, a]):
                    out.append((le_val[ci, a] / n - eta, Region.le(c, vals[ci][le_arg[ci, a]]), a))
                if np.isfinite(gt_val[ci, a]):
                    out.append((gt_val[ci, a] / n - eta, Region.gt(c, vals[ci][gt_arg[ci, a]]), a))
    if raw.pairs is not None:
        pj, pk, pv, pg, pr = raw.pairs
        # a two-variable region only wins if it beats every simpler candidate
        # by more than the tie tolerance; otherwise the variable count decides
        floor = min(c[0] for c in out)
        objs = pv / n
        best_pair = objs.min()
        if not best_pair < floor - TIE_TOL:
            return out
        nds = raw.nds
        for p, q, a in zip(*np.nonzero(objs <= best_pair + TIE_TOL)):
            j, k = pj[p], pk[p]
            tau1, tau2 = _pair_thresholds(vals[j], nds[j], vals[k], nds[k], q,
                                          pg[p, q, a], pr[p, q, a])
            out.append((objs[p, q, a], Region(QUADRANTS[q], cols[j], tau1, cols[k], tau2), a))
    return out


def select_clause(panel: WeightPanel, raw: RawSearch, eta: float) -> ClauseResult:
    return _select(panel, _candidates(raw, eta))


def best_clause(panel: WeightPanel, eta: float,
                candidate_columns: Sequence[int] | None = None) -> ClauseResult:
    """Optimal clause in O(n log n * d^2 * m) time."""
    return select_clause(panel, raw_search(panel, candidate_columns), eta)


def brute_force_best_clause(panel: WeightPanel, eta: float,
                            candidate_columns: Sequence[int] | None = None) -> ClauseResult:
    """Exhaustive enumeration over all observed threshold combinations.

    Every candidate sum is evaluated directly from indicator matrices, so this
    costs O(n^3 d^2 m) and is meant as a reference for small panels.
    """
    if panel.n > BRUTE_FORCE_MAX_N:
        raise ClauseSearchError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}")
    active = np.flatnonzero(panel.active)
    if active.size == 0:
        raise ClauseSearchError("clause search needs at least one active subject")
    cols = _columns(panel, candidate_columns)
    Xa = panel.X[active]
    Ua = panel.U[active]
    n, m = panel.n, Ua.shape[1]
    grids = {c: np.unique(Xa[:, c]) for c in cols}
    sides = {}
    for c in cols:
        sides[c, "LE"] = (Xa[:, c][:, None] <= grids[c][None, :]).astype(float)
        sides[c, "GT"] = (Xa[:, c][:, None] > grids[c][None, :]).astype(float)

    tables = []  # (objective array, count array, builder)
    for a in range(m):
        tables.append((np.array([Ua[:, a].sum() / n - 2 * eta]), np.array([active.size]),
                       lambda idx, a=a: (Region.all(), a)))
        for c in cols:
            for form in ("LE", "GT"):
                M = sides[c, form]
                tables.append((Ua[:, a] @ M / n - eta, M.sum(axis=0),
                               lambda idx, c=c, form=form, a=a:
                               (Region(form, c, grids[c][idx[0]]), a)))
        for i, j in ((i, j) for i in cols for j in cols if i < j):
            for form in QUADRANTS:
                s1, s2 = form.split("_")
                M1, M2 = sides[i, s1], sides[j, s2]
                sums = (M1 * Ua[:, a][:, None]).T @ M2
                counts = M1.T @ M2
                tables.append((sums / n, counts,
                               lambda idx, i=i, j=j, form=form, a=a:
                               (Region(form, i, grids[i][idx[0]], j, grids[j][idx[1]]), a)))

    masked = [np.where(cnt > 0.5, obj, np.inf) for obj, cnt, _ in tables]
    best_obj = min(float(np.min(t)) for t in masked)
    if not np.isfinite(best_obj):
        raise ClauseSearchError("no feasible clause")
    scored = []
    for t, (obj, cnt, build) in zip(masked, tables):
        for idx in zip(*np.nonzero(t <= best_obj + TIE_TOL)):
            region, a = build(idx)
            covered = int(round(float(cnt[idx])))
            scored.append((_tie_key(region, covered, a), float(t[idx]), region, a, covered))
    key, obj, region, a, covered = min(scored, key=lambda s: s[0])
    return ClauseResult(region, panel.actions[a], obj, covered, int(a))
