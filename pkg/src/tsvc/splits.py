"""Likelihood-ratio split statistics and their maximally selected version.

Splitting leaf ``q`` of predictor ``j`` at ``x_m <= c`` replaces the design
column ``x_j * node_q`` by its two halves.  The column space of the split
model is therefore the current design plus the single column
``z_c = x_j * node_q * I(x_m > c)``, and the LR statistic is the deviance
drop caused by adding ``z_c``.  That reformulation lets all split points of
one (predictor, node, modifier) triple be scored in one vectorised pass:

* gaussian: exact closed form through suffix sums over the rows sorted by
  the modifier, O(n q) for all split points together;
* binomial/poisson: warm-started Newton iterations run for all split points
  side by side, starting from the current fit (where both children share the
  parent coefficient).

``score_split`` is the slow reference path that rebuilds the split design
and refits it from scratch; tests use it as the brute-force oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import xlogy

from .data import Dataset, ModelStructure, build_design
from .errors import EmptyLeaf, InvalidIndex, NoAdmissibleSplit, RankDeficient
from .glm import RANK_TOL, Family, GlmFit, converged_dev, fit_glm, resolve_family

log = logging.getLogger(__name__)

SCORE_TOL = 1e-10
DEFAULT_MIN_NODE_SIZE = 5
# below this ratio of residual to raw squared norm the suffix-sum formula
# loses too many digits and the residual is recomputed explicitly
_CANCELLATION_GUARD = 1e-6
# statistics closer than this (relative) count as tied; thresholds that induce
# the same added column are exact ties that differ only by rounding
TIE_TOL = 1e-9


def beats(t_new: float, t_best: float) -> bool:
    """Strict improvement beyond rounding noise."""
    return t_new > t_best + TIE_TOL * max(1.0, abs(t_best))


def first_max(stats: np.ndarray) -> int:
    """Index of the first statistic tied with the maximum (nan ignored)."""
    top = np.nanmax(stats)
    return int(np.flatnonzero(stats >= top - TIE_TOL * max(1.0, abs(top)))[0])


@dataclass
class SplitCandidate:
    predictor: int
    node_id: int
    modifier: int
    split_point: float
    lr_statistic: float


@dataclass
class MaxSelected:
    predictor: int
    node_id: int
    modifier: int
    best_split_point: float
    t_max: float
    split_points: np.ndarray = field(default=None, repr=False)
    statistics: np.ndarray = field(default=None, repr=False)


class CurrentModel:
    """A fitted model structure plus the cached pieces split scoring needs."""

    def __init__(self, structure: ModelStructure, data: Dataset, family, fit: GlmFit | None = None,
                 tol: float = SCORE_TOL):
        self.structure = structure
        self.data = data
        self.family = resolve_family(family)
        self.design, self.column_map = build_design(structure, data)
        self.y = np.asarray(data.response, dtype=float)
        self.fit = fit if fit is not None else fit_glm(self.design, self.y, self.family, tol=tol)
        self.tol = tol
        self._q_basis = None
        self._products = None
        self._dev_const = None
        self._gram_inv = None
        self._col_norm = float(np.max(np.linalg.norm(self.design, axis=0)))

    @property
    def deviance(self) -> float:
        return self.fit.deviance

    @property
    def q_basis(self) -> np.ndarray:
        if self._q_basis is None:
            self._q_basis = linalg.qr(self.design, mode="economic")[0]
        return self._q_basis

    @property
    def products(self):
        """Upper-triangular column products of the design, ``(n, q(q+1)/2)``."""
        if self._products is None:
            q = self.design.shape[1]
            iu = np.triu_indices(q)
            self._products = (self.design[:, iu[0]] * self.design[:, iu[1]], iu)
        return self._products

    @property
    def deviance_const(self) -> float:
        if self._dev_const is None:
            self._dev_const = float(np.sum(xlogy(self.y, self.y)))
        return self._dev_const

    def weighted_gram_inv(self, w) -> np.ndarray:
        if self._gram_inv is None:
            self._gram_inv = np.linalg.inv((self.design * w[:, None]).T @ self.design)
        return self._gram_inv

    def node_mask(self, j: int, node_id: int) -> np.ndarray:
        tree = self.structure.trees.get(j)
        if tree is None:
            if j not in self.structure.linear:
                raise InvalidIndex(f"predictor {j} is not in the model")
            if node_id != 0:
                raise InvalidIndex(f"predictor {j} has no node {node_id}")
            return np.ones(self.data.n, dtype=bool)
        node = tree.nodes.get(node_id)
        if node is None or not node.is_leaf:
            raise InvalidIndex(f"node {node_id} is not a leaf of tree {j}")
        return node.region.indicator(self.data)

    def split_nodes(self, j: int) -> list:
        """Ids of the nodes of predictor ``j`` that can be split next."""
        tree = self.structure.trees.get(j)
        return [0] if tree is None else tree.leaf_ids()


def candidate_split_points(values, scale: str, restrict_to_node=None,
                           min_node_size: int = DEFAULT_MIN_NODE_SIZE) -> np.ndarray:
    """Admissible thresholds of one modifier inside a node.

    Midpoints between consecutive distinct values (0 for a binary column),
    keeping only thresholds that leave ``min_node_size`` rows on both sides.
    """
    v = np.asarray(values, dtype=float)
    if restrict_to_node is not None:
        v = v[np.asarray(restrict_to_node, dtype=bool)]
    if v.size == 0:
        return np.empty(0)
    v = np.sort(v)
    uniq = np.unique(v)
    if uniq.size < 2:
        return np.empty(0)
    if scale == "binary":
        cuts = np.array([0.0])
    else:
        cuts = 0.5 * (uniq[:-1] + uniq[1:])
    n_left = np.searchsorted(v, cuts, side="right")
    keep = (n_left >= min_node_size) & (v.size - n_left >= min_node_size)
    return cuts[keep]


def _rank_ok(z_resid_norm, z_norm, col_norm):
    return z_resid_norm > RANK_TOL * np.maximum(col_norm, z_norm)


def _gaussian_drops(current: CurrentModel, xjn, xm, cuts, node):
    """Exact deviance drops for all thresholds via suffix sums."""
    rows = np.flatnonzero(node)
    order = rows[np.argsort(xm[rows], kind="stable")]
    xs = xm[order]
    w = xjn[order]
    Q = current.q_basis
    resid = current.y - current.fit.mu

    def suffix(a):
        c = np.cumsum(a[::-1], axis=0)[::-1]
        return np.concatenate([c, np.zeros((1,) + a.shape[1:])], axis=0)

    s_r = suffix(resid[order] * w)
    s_zz = suffix(w * w)
    s_q = suffix(Q[order] * w[:, None])
    k = np.searchsorted(xs, cuts, side="right")
    num = s_r[k] ** 2
    zz = s_zz[k]
    den = zz - np.sum(s_q[k] ** 2, axis=1)

    out = np.full(cuts.size, np.nan)
    good = den > _CANCELLATION_GUARD * zz
    out[good] = num[good] / den[good]
    for i in np.flatnonzero(~good):
        z = xjn * (xm > cuts[i])
        zt = z - Q @ (Q.T @ z)
        nz = np.linalg.norm(zt)
        if zz[i] > 0 and _rank_ok(nz, np.sqrt(zz[i]), current._col_norm):
            out[i] = (resid @ zt) ** 2 / (nz * nz)
    return out


def augmented_deviances(current: CurrentModel, Z: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """Deviance of the current design augmented by each column of ``Z``.

    Returns ``nan`` where the augmented design is rank deficient.
    """
    family = current.family
    X, y = current.design, current.y
    Q = current.q_basis
    Zt = Z - Q @ (Q.T @ Z)
    z_norm = np.linalg.norm(Z, axis=0)
    ok = _rank_ok(np.linalg.norm(Zt, axis=0), z_norm, current._col_norm)
    out = np.full(Z.shape[1], np.nan)
    if not ok.any():
        return out
    if family.distribution == "gaussian":
        resid = y - current.fit.mu
        num = (resid @ Zt[:, ok]) ** 2
        out[ok] = current.fit.deviance - num / np.sum(Zt[:, ok] ** 2, axis=0)
        return out
    out[ok] = _batched_newton(current, Z[:, ok], max_iter=max_iter)
    return out


def _batched_newton(current: CurrentModel, Z: np.ndarray, max_iter: int = 100) -> np.ndarray:
    family = current.family
    X, y = current.design, current.y
    n, q = X.shape
    K = Z.shape[1]
    P, iu = current.products
    tol = current.tol
    const = current.deviance_const

    # First Newton step: every candidate starts at the current fit, so the
    # weights are shared and the augmented system reduces to a Schur complement.
    fit = current.fit
    d0 = family.mu_eta(fit.mu)
    w0 = d0 * d0 / family.variance(fit.mu)
    r0 = (y - fit.mu) / d0
    G = current.weighted_gram_inv(w0)
    a = X.T @ (w0 * r0)
    wZ = w0[:, None] * Z
    C = X.T @ wZ
    GC = G @ C
    s = np.sum(wZ * Z, axis=0) - np.sum(C * GC, axis=0)
    g = (wZ.T @ r0 - GC.T @ a) / s
    B = fit.coefficients[None, :] + (G @ a)[None, :] - (GC * g).T

    def evaluate(Bm, gm, Zm):
        e = family.clip_eta(X @ Bm.T + Zm * gm)
        m = family.linkinv(e)
        return e, m, family.deviance_from_eta(y, e, m, const)

    eta, mu, dev = evaluate(B, g, Z)
    dev_parent = np.full(K, fit.deviance)
    bad = ~np.isfinite(dev) | (dev > dev_parent * (1 + 1e-12) + 1e-12)
    if bad.any():
        # overshooting first steps restart from the parent fit
        B[bad] = fit.coefficients
        g[bad] = 0.0
        eta[:, bad] = fit.eta[:, None]
        mu[:, bad] = fit.mu[:, None]
        dev[bad] = fit.deviance
    active = np.flatnonzero(bad | ~converged_dev(dev_parent, dev, tol))
    yc = y[:, None]

    for _ in range(max_iter - 1):
        if active.size == 0:
            break
        za, ea, ma = Z[:, active], eta[:, active], mu[:, active]
        d = family.mu_eta(ma)
        w = d * d / family.variance(ma)
        u = ea + (yc - ma) / d
        Ka = active.size
        A = np.empty((Ka, q + 1, q + 1))
        tri = w.T @ P
        A[:, iu[0], iu[1]] = tri
        A[:, iu[1], iu[0]] = tri
        wz = w * za
        A[:, :q, q] = A[:, q, :q] = wz.T @ X
        A[:, q, q] = np.sum(wz * za, axis=0)
        wu = w * u
        b = np.empty((Ka, q + 1))
        b[:, :q] = wu.T @ X
        b[:, q] = np.sum(wu * za, axis=0)
        try:
            sol = np.linalg.solve(A, b[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            sol = np.stack([np.linalg.lstsq(A[i], b[i], rcond=None)[0] for i in range(Ka)])
        B_new, g_new = sol[:, :q], sol[:, q]
        eta_new, mu_new, dev_new = evaluate(B_new, g_new, za)
        dev_old = dev[active]
        bad = ~np.isfinite(dev_new) | (dev_new > dev_old * (1 + 1e-12) + 1e-12)
        halvings = 0
        while bad.any() and halvings < 30:
            B_new[bad] = 0.5 * (B_new[bad] + B[active[bad]])
            g_new[bad] = 0.5 * (g_new[bad] + g[active[bad]])
            e, m_, dv = evaluate(B_new[bad], g_new[bad], za[:, bad])
            eta_new[:, bad], mu_new[:, bad], dev_new[bad] = e, m_, dv
            bad = bad & (~np.isfinite(dev_new) | (dev_new > dev_old * (1 + 1e-12) + 1e-12))
            halvings += 1
        B[active], g[active] = B_new, g_new
        eta[:, active], mu[:, active] = eta_new, mu_new
        dev[active] = dev_new
        done = converged_dev(dev_old, dev_new, tol)
        active = active[~done]
    if active.size:
        log.warning("batched Newton: %d candidate fits did not converge", active.size)
    return np.maximum(dev, 0.0)


def split_statistics(current: CurrentModel, j: int, node_id: int, m: int, cuts,
                     modifier_values=None) -> np.ndarray:
    """LR statistics for splitting (j, node) on modifier ``m`` at each of ``cuts``.

    ``modifier_values`` overrides the column ``m`` used to form the child
    indicators (permutation tests); node membership always comes from the
    data the current model was fitted on.  Invalid candidates are ``nan``.
    """
    if m == j:
        raise InvalidIndex("a predictor cannot modify itself")
    cuts = np.asarray(cuts, dtype=float)
    if cuts.size == 0:
        return np.empty(0)
    data = current.data
    node = current.node_mask(j, node_id)
    xm = data.column(m) if modifier_values is None else np.asarray(modifier_values, dtype=float)
    xjn = data.column(j) * node
    if current.family.distribution == "gaussian":
        return _gaussian_drops(current, xjn, xm, cuts, node)
    Z = xjn[:, None] * (xm[:, None] > cuts[None, :])
    return current.fit.deviance - augmented_deviances(current, Z)


def max_selected(current: CurrentModel, j: int, node_id: int, m: int,
                 min_node_size: int = DEFAULT_MIN_NODE_SIZE, modifier_values=None) -> MaxSelected:
    """Maximum LR statistic over all admissible split points of one modifier.

    Ties go to the smallest split point.  Raises ``NoAdmissibleSplit`` when
    no threshold is admissible or every candidate fit is degenerate.
    """
    data = current.data
    node = current.node_mask(j, node_id)
    xm = data.column(m) if modifier_values is None else modifier_values
    cuts = candidate_split_points(xm, data.scales[m], node, min_node_size)
    if cuts.size == 0:
        raise NoAdmissibleSplit(f"no admissible split of predictor {j} node {node_id} on {m}")
    stats = split_statistics(current, j, node_id, m, cuts, modifier_values)
    if np.all(np.isnan(stats)):
        raise NoAdmissibleSplit(f"all splits of predictor {j} node {node_id} on {m} are degenerate")
    best = first_max(stats)
    return MaxSelected(j, node_id, m, float(cuts[best]), float(max(stats[best], 0.0)), cuts, stats)


def score_split(current: CurrentModel, j: int, node_id: int, m: int, c: float) -> SplitCandidate:
    """Reference LR statistic from an explicit refit of the split model.

    Raises ``RankDeficient`` or ``EmptyLeaf`` for inadmissible candidates.
    """
    structure = current.structure.split(j, node_id, m, c)
    X, _ = build_design(structure, current.data)
    fit = fit_glm(X, current.y, current.family, tol=current.tol)
    return SplitCandidate(j, node_id, m, float(c), current.fit.deviance - fit.deviance)


def brute_force_best(current: CurrentModel, j: int, node_id: int, modifiers,
                     min_node_size: int = DEFAULT_MIN_NODE_SIZE):
    """Exhaustive ``score_split`` over every admissible (m, c); returns the best candidate."""
    best = None
    node = current.node_mask(j, node_id)
    for m in modifiers:
        cuts = candidate_split_points(current.data.column(m), current.data.scales[m], node,
                                      min_node_size)
        for c in cuts:
            try:
                cand = score_split(current, j, node_id, m, c)
            except (RankDeficient, EmptyLeaf):
                continue
            if best is None or beats(cand.lr_statistic, best.lr_statistic):
                best = cand
    return best
