"""Simulation scenarios and detection-rate evaluation.

Scenarios 1-5 and the illustrative example all use gaussian responses with
``x1, x2 ~ N(0, 1)`` and ``x3, x4 ~ B(1, 0.5)`` (scenario 4 adds four pure
noise covariates), intercept 0.2 and base slopes 0.4.  Truth is recorded as
``delta[j]`` (predictor j has a varying coefficient) and ``delta_pair[j, m]``
(m modifies j).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .algorithm import FitConfig, fit_tsvc
from .data import Column, Dataset, TsvcModel
from .errors import InvalidArgs, LengthMismatch, UnknownScenario

SCENARIOS = ("1", "2", "3", "4", "5", "illustrative")
N_GRID = (100, 250, 500)
SIGMA_GRID = (1.0, 1.5, 2.0)

BETA0 = 0.2
BETA = 0.4

PRESETS = {
    "full": {"n_reps": 100, "n_perm": 1000},
    "desk": {"n_reps": 50, "n_perm": 500},
    "smoke": {"n_reps": 2, "n_perm": 50},
}


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    n: int
    sigma_eps: float = 1.0
    n_reps: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        if self.id not in SCENARIOS:
            raise UnknownScenario(f"unknown scenario {self.id!r}; choose from {SCENARIOS}")
        if self.n <= 0:
            raise InvalidArgs("n must be positive")
        if not self.sigma_eps > 0:
            raise InvalidArgs("sigma_eps must be positive")
        if self.n_reps < 1:
            raise InvalidArgs("n_reps must be at least 1")

    @property
    def p(self) -> int:
        return 8 if self.id == "4" else 4


@dataclass
class Truth:
    delta: np.ndarray
    delta_pair: np.ndarray


@dataclass
class EvalResult:
    tpr_c: float | None
    fpr_c: float | None
    tpr_cm: float | None
    fpr_cm: float | None
    poc: float

    def as_dict(self) -> dict:
        return {"tpr_c": self.tpr_c, "fpr_c": self.fpr_c, "tpr_cm": self.tpr_cm,
                "fpr_cm": self.fpr_cm, "poc": self.poc}


def _scenario_code(sid: str) -> int:
    return 0 if sid == "illustrative" else int(sid)


def scenario_rng(spec: ScenarioSpec, rep: int) -> np.random.Generator:
    key = (_scenario_code(spec.id), spec.n, int(round(spec.sigma_eps * 1000)), int(rep))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(spec.seed), spawn_key=key)))


def truth_for(sid: str) -> Truth:
    p = 8 if sid == "4" else 4
    delta = np.zeros(p, dtype=bool)
    pair = np.zeros((p, p), dtype=bool)
    # 0-based: x1 -> 0, ..., x4 -> 3
    edges = {
        "1": [],
        "2": [(0, 1), (1, 0)],
        "3": [(2, 3), (3, 2)],
        "4": [(2, 3), (3, 2)],
        "5": [(2, 3), (2, 1), (3, 2), (3, 1)],
        "illustrative": [(0, 1), (0, 2), (1, 0), (1, 3)],
    }[sid]
    for j, m in edges:
        delta[j] = True
        pair[j, m] = True
    return Truth(delta, pair)


def mean_function(sid: str, X: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    if sid == "1":
        return BETA0 + BETA * (x1 + x2 + x3 + x4)
    if sid == "2":
        return BETA0 + x1 * np.arctan(x2) + x2 * np.arctan(x1) + BETA * (x3 + x4)
    if sid in ("3", "4"):
        tr3 = BETA + 0.4 * (x4 == 0)
        tr4 = BETA + 0.4 * (x3 == 0)
        return BETA0 + BETA * (x1 + x2) + x3 * tr3 + x4 * tr4
    if sid == "5":
        tr3 = BETA + 0.4 * (x4 == 0) + 0.4 * ((x4 == 0) & (x2 > 0))
        tr4 = BETA + 0.4 * (x3 == 0) + 0.4 * ((x3 == 0) & (x2 > 0))
        return BETA0 + BETA * (x1 + x2) + x3 * tr3 + x4 * tr4
    if sid == "illustrative":
        tr1 = BETA + 0.6 * (x2 > 0.2) + 0.6 * ((x2 > 0.2) & (x3 == 1))
        tr2 = BETA + 0.6 * (x1 > -0.2) + 0.6 * ((x1 > -0.2) & (x4 == 1))
        return BETA0 + x1 * tr1 + x2 * tr2 + BETA * (x3 + x4)
    raise UnknownScenario(sid)


def generate(spec: ScenarioSpec, rep: int = 0):
    """Draw replicate ``rep`` of a scenario; returns ``(Dataset, Truth)``."""
    rng = scenario_rng(spec, rep)
    n = spec.n
    cols = [rng.standard_normal(n), rng.standard_normal(n),
            rng.binomial(1, 0.5, n).astype(float), rng.binomial(1, 0.5, n).astype(float)]
    if spec.id == "4":
        cols += [rng.standard_normal(n), rng.standard_normal(n),
                 rng.binomial(1, 0.5, n).astype(float), rng.binomial(1, 0.5, n).astype(float)]
    X = np.column_stack(cols)
    y = mean_function(spec.id, X) + spec.sigma_eps * rng.standard_normal(n)
    scales = ["continuous", "continuous", "binary", "binary"] * (2 if spec.id == "4" else 1)
    columns = tuple(Column(f"x{j + 1}", X[:, j], scales[j]) for j in range(X.shape[1]))
    return Dataset(columns, y, "y"), truth_for(spec.id)


def detected(model: TsvcModel) -> Truth:
    """Estimated indicators: a tree for j, and m used inside j's tree."""
    p = model.p
    delta = np.zeros(p, dtype=bool)
    pair = np.zeros((p, p), dtype=bool)
    for j, tree in model.trees.items():
        delta[j] = True
        for m in tree.modifiers():
            pair[j, m] = True
    return Truth(delta, pair)


def in_model_share(model: TsvcModel) -> float:
    return (len(model.trees) + len(model.linear)) / model.p


def rep_rates(est: Truth, truth: Truth) -> dict:
    """Per-replicate rates; ``None`` where the denominator is empty."""
    p = truth.delta.size
    off_diag = ~np.eye(p, dtype=bool)

    def rate(mask, hit):
        return float(hit[mask].mean()) if mask.any() else None

    return {
        "tpr_c": rate(truth.delta, est.delta),
        "fpr_c": rate(~truth.delta, est.delta),
        "tpr_cm": rate(truth.delta_pair & off_diag, est.delta_pair),
        "fpr_cm": rate(~truth.delta_pair & off_diag, est.delta_pair),
    }


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_indicators(estimates, truths, pocs) -> EvalResult:
    if not (len(estimates) == len(truths) == len(pocs)):
        raise LengthMismatch("fits and truths must be aligned")
    if not estimates:
        raise LengthMismatch("nothing to evaluate")
    rates = [rep_rates(e, t) for e, t in zip(estimates, truths)]
    return EvalResult(
        tpr_c=_mean_or_none(r["tpr_c"] for r in rates),
        fpr_c=_mean_or_none(r["fpr_c"] for r in rates),
        tpr_cm=_mean_or_none(r["tpr_cm"] for r in rates),
        fpr_cm=_mean_or_none(r["fpr_cm"] for r in rates),
        poc=float(np.mean(pocs)),
    )


def evaluate(fits, truths) -> EvalResult:
    """Average TPR/FPR at covariate and covariate-modifier level over replications."""
    fits, truths = list(fits), list(truths)
    if len(fits) != len(truths):
        raise LengthMismatch(f"{len(fits)} fits but {len(truths)} truths")
    return evaluate_indicators([detected(f) for f in fits], truths, [in_model_share(f) for f in fits])


def run_rep(spec: ScenarioSpec, rep: int, config: FitConfig) -> dict:
    """Fit one replicate and return its detection summary (JSON friendly)."""
    data, _ = generate(spec, rep)
    rep_config = FitConfig(alpha=config.alpha, n_perm=config.n_perm, min_node_size=config.min_node_size,
                           max_splits=config.max_splits, seed=replicate_fit_seed(spec, rep),
                           modifier_exclusions=config.modifier_exclusions)
    model = fit_tsvc(data, "gaussian", rep_config)
    est = detected(model)
    return {
        "rep": rep,
        "delta": est.delta.astype(int).tolist(),
        "delta_pair": est.delta_pair.astype(int).tolist(),
        "poc": in_model_share(model),
        "first_splits": first_splits(model),
    }


def replicate_fit_seed(spec: ScenarioSpec, rep: int) -> int:
    return int(scenario_rng(spec, rep).integers(0, 2**31 - 1, size=2)[1])


def first_splits(model: TsvcModel) -> dict:
    """Root split (modifier, split point) of every tree, keyed by predictor index."""
    return {int(j): [int(t.root.modifier), float(t.root.split_point)] for j, t in model.trees.items()}


def summarize(spec: ScenarioSpec, rep_results) -> EvalResult:
    truth = truth_for(spec.id)
    ests = [Truth(np.array(r["delta"], dtype=bool), np.array(r["delta_pair"], dtype=bool))
            for r in rep_results]
    return evaluate_indicators(ests, [truth] * len(ests), [r["poc"] for r in rep_results])


def simulate(spec: ScenarioSpec, config: FitConfig, workers: int = 1, reps=None):
    """Run all replicates of ``spec``; returns ``(EvalResult, per-rep results)``."""
    reps = list(range(spec.n_reps)) if reps is None else list(reps)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_rep, [spec] * len(reps), reps, [config] * len(reps)))
    else:
        results = [run_rep(spec, r, config) for r in reps]
    return summarize(spec, results), results


def sample_r2(spec: ScenarioSpec, rep: int = 0) -> float:
    """Share of response variance explained by the true mean function."""
    data, _ = generate(spec, rep)
    mu = mean_function(spec.id, data.X)
    return float(np.var(mu) / np.var(data.response))
