"""The TSVC fitting loop: split search, permutation stopping, linear-term screen."""

from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, ModelStructure, SplitRecord, TsvcModel, build_design
from .errors import DegenerateData, InvalidConfig, NoAdmissibleSplit, RankDeficient
from .glm import Family, fit_glm, resolve_family
from .permutation import (
    DEFAULT_N_PERM,
    alpha_local,
    count_exceedances,
    permutation_p_value,
    permutation_test,
    run_replicates,
)
from .splits import DEFAULT_MIN_NODE_SIZE, CurrentModel, augmented_deviances, beats, max_selected

log = logging.getLogger(__name__)

# seed-stream keys, kept distinct so split tests and screen tests never share draws
STAGE_SPLIT = 1
STAGE_SCREEN = 2
FINAL_RIDGE = 1e-8


class MaxSplitsWarning(UserWarning):
    pass


@dataclass
class FitConfig:
    alpha: float = 0.05
    n_perm: int = DEFAULT_N_PERM
    min_node_size: int = DEFAULT_MIN_NODE_SIZE
    max_splits: int = 30
    seed: int = 0
    modifier_exclusions: tuple = ()
    n_jobs: int = 1

    def __post_init__(self):
        self.modifier_exclusions = tuple(tuple(int(v) for v in pair) for pair in self.modifier_exclusions)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n_perm < 1:
            raise InvalidConfig("n_perm must be at least 1")
        if self.max_splits < 0:
            raise InvalidConfig("max_splits must be nonnegative")
        if self.min_node_size < 1:
            raise InvalidConfig("min_node_size must be at least 1")
        for pair in self.modifier_exclusions:
            if len(pair) != 2:
                raise InvalidConfig(f"modifier exclusion {pair} is not a (predictor, modifier) pair")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["modifier_exclusions"] = [list(p) for p in self.modifier_exclusions]
        out.pop("n_jobs")
        return out


def search_best_split(current: CurrentModel, config: FitConfig, candidates=None):
    """Best (predictor, node, modifier) triple by maximally selected statistic.

    Scanning runs in (predictor, node, modifier) order and only a strict
    improvement replaces the incumbent, so ties go to the earliest triple.
    Returns ``None`` when no admissible split exists anywhere.
    """
    data = current.data
    excluded_pairs = set(config.modifier_exclusions)
    structure = current.structure
    predictors = candidates if candidates is not None else sorted(set(structure.trees) | set(structure.linear))
    best = None
    for j in predictors:
        for node_id in current.split_nodes(j):
            for m in range(data.p):
                if m == j or (j, m) in excluded_pairs:
                    continue
                try:
                    ms = max_selected(current, j, node_id, m, config.min_node_size)
                except NoAdmissibleSplit:
                    continue
                if best is None or beats(ms.t_max, best.t_max):
                    best = ms
    return best


def _constant_columns(data: Dataset) -> list:
    return [j for j in range(data.p) if np.ptp(data.column(j)) == 0.0]


def grow(data: Dataset, family, config: FitConfig):
    """Grow the trees until the winning combination is not significant.

    Returns the final structure, the split history and a diagnostics dict.
    """
    family = resolve_family(family)
    p = data.p
    a_loc = alpha_local(config.alpha, p)
    constant = _constant_columns(data)
    structure = ModelStructure.linear_model(p, exclude=constant)
    current = CurrentModel(structure, data, family)
    history = []
    diagnostics = {"alpha_local": a_loc, "max_splits_reached": False, "constant_columns": constant}
    n_accepted = 0
    iteration = 0
    while True:
        if n_accepted >= config.max_splits:
            if config.max_splits > 0:
                warnings.warn(f"stopped after max_splits={config.max_splits} splits", MaxSplitsWarning)
                diagnostics["max_splits_reached"] = True
            break
        best = search_best_split(current, config)
        if best is None:
            break
        iteration += 1
        test = permutation_test(
            current, best.predictor, best.node_id, best.modifier, config.n_perm, a_loc, config.seed,
            t_obs=best.t_max, min_node_size=config.min_node_size, key=(STAGE_SPLIT, iteration),
            n_jobs=config.n_jobs,
        )
        record = SplitRecord(iteration, best.predictor, best.node_id, best.modifier,
                             best.best_split_point, best.t_max, test.p_value, test.significant)
        history.append(record)
        log.info("split %d: predictor %s node %d modifier %s at %.6g, T=%.4f, p=%.4f%s",
                 iteration, data.names[best.predictor], best.node_id, data.names[best.modifier],
                 best.best_split_point, best.t_max, test.p_value, "" if test.significant else " (stop)")
        if not test.significant:
            break
        structure = structure.split(best.predictor, best.node_id, best.modifier, best.best_split_point)
        current = CurrentModel(structure, data, family)
        record.deviance = current.deviance
        n_accepted += 1
    return current, history, diagnostics


def screen_linear_terms(current: CurrentModel, alpha: float, n_perm: int, seed: int, n_jobs: int = 1):
    """Permutation test of every linear term that is neither split nor a modifier.

    All terms are tested against the same post-splitting model.  Returns the
    reduced structure and a dict ``{predictor: (t_obs, p_value, kept)}``.
    """
    structure = current.structure
    modifiers = structure.modifiers()
    data = current.data
    results = {}
    drop = []
    for ell in sorted(structure.linear):
        if ell in modifiers:
            continue
        reduced = CurrentModel(structure.drop_linear([ell]), data, current.family)
        t_obs = reduced.deviance - current.deviance
        x = data.column(ell)

        def stat(perm, reduced=reduced, x=x):
            dev = augmented_deviances(reduced, x[perm][:, None])[0]
            return 0.0 if np.isnan(dev) else reduced.deviance - dev

        stats = run_replicates(stat, n_perm, seed, (STAGE_SCREEN, ell), data.n, n_jobs)
        p_value = permutation_p_value(count_exceedances(t_obs, stats), n_perm)
        kept = p_value <= alpha
        results[ell] = (float(t_obs), float(p_value), bool(kept))
        if not kept:
            drop.append(ell)
    return structure.drop_linear(drop), results


def refit_model(structure: ModelStructure, data: Dataset, family, *, history=(), config=None,
                diagnostics=None) -> TsvcModel:
    """Fit the coefficients of ``structure`` and package them as a ``TsvcModel``."""
    family = resolve_family(family)
    X, cmap = build_design(structure, data)
    diagnostics = dict(diagnostics or {})
    try:
        fit = fit_glm(X, data.response, family)
    except RankDeficient:
        log.warning("final design is rank deficient; refitting with ridge %g", FINAL_RIDGE)
        fit = fit_glm(X, data.response, family, ridge=FINAL_RIDGE)
        diagnostics["ridge"] = FINAL_RIDGE
    diagnostics["converged"] = fit.converged
    diagnostics["boundary"] = fit.boundary
    diagnostics["n_iter"] = fit.n_iter
    trees = {j: copy.deepcopy(tree) for j, tree in structure.trees.items()}
    linear = {}
    intercept = 0.0
    for coef, entry in zip(fit.coefficients, cmap):
        if entry[0] == "intercept":
            intercept = float(coef)
        elif entry[0] == "leaf":
            trees[entry[1]].nodes[entry[2]].coefficient = float(coef)
        else:
            linear[entry[1]] = float(coef)
    excluded = frozenset(structure.excluded())
    model = TsvcModel(
        intercept=intercept, trees=trees, linear=linear, excluded=excluded, family=family,
        names=data.names, scales=data.scales, response_name=data.response_name,
        deviance=float(fit.deviance), aic=float(fit.aic), split_history=list(history),
        config=config.to_dict() if config is not None else {}, diagnostics=diagnostics,
    )
    model.check_invariants()
    return model


def fit_tsvc(data: Dataset, family="gaussian", config: FitConfig | None = None) -> TsvcModel:
    """Fit a tree-structured varying-coefficient GLM."""
    config = config or FitConfig()
    config.validate()
    family = resolve_family(family)
    if data.p < 2:
        raise InvalidConfig("TSVC needs at least two covariates")
    if len(_constant_columns(data)) == data.p:
        raise DegenerateData("all covariates are constant")
    family.check_response(data.response)
    current, history, diagnostics = grow(data, family, config)
    structure, screen = screen_linear_terms(current, config.alpha, config.n_perm, config.seed, config.n_jobs)
    diagnostics["linear_screen"] = {
        data.names[j]: {"t_obs": t, "p_value": pv, "kept": kept} for j, (t, pv, kept) in screen.items()
    }
    return refit_model(structure, data, family, history=history, config=config, diagnostics=diagnostics)


def linear_term_screen(model: TsvcModel, data: Dataset, alpha: float = 0.05, n_perm: int = DEFAULT_N_PERM,
                       seed: int = 0, n_jobs: int = 1) -> TsvcModel:
    """Apply the linear-term screen to an already grown model and refit."""
    current = CurrentModel(model.structure(), data, model.family)
    structure, screen = screen_linear_terms(current, alpha, n_perm, seed, n_jobs)
    diagnostics = dict(model.diagnostics)
    diagnostics["linear_screen"] = {
        data.names[j]: {"t_obs": t, "p_value": pv, "kept": kept} for j, (t, pv, kept) in screen.items()
    }
    out = refit_model(structure, data, model.family, history=model.split_history, diagnostics=diagnostics)
    out.config = dict(model.config)
    return out


def deviance_aic(model: TsvcModel, data: Dataset) -> dict:
    """Deviance and AIC of ``model`` on ``data``; one parameter per design column."""
    family = model.family
    X, cmap = build_design(model.structure(), data, allow_empty=True)
    eta = family.clip_eta(X @ model.coefficient_vector(cmap))
    mu = family.linkinv(eta)
    dev = float(family.deviance(data.response, mu))
    return {"deviance": dev, "aic": float(family.aic(data.response, mu, dev, X.shape[1]))}


def replay(history, data: Dataset, family, excluded=()) -> ModelStructure:
    """Rebuild the model structure from the accepted split records."""
    structure = ModelStructure.linear_model(data.p)
    for rec in sorted(history, key=lambda r: r.iteration):
        if rec.accepted:
            structure = structure.split(rec.predictor, rec.node_id, rec.modifier, rec.split_point)
    return structure.drop_linear(excluded)
