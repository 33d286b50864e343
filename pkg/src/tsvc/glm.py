"""Exponential-family GLMs fitted by iteratively reweighted least squares.

Only the three canonical pairs used for TSVC models are supported:
gaussian/identity, binomial/logit and poisson/log.  All family methods are
elementwise, so they work on an ``(n,)`` vector as well as an ``(n, K)``
matrix holding ``K`` candidate fits side by side (see ``tsvc.splits``).

Gaussian log-likelihoods use the profiled variance ``deviance / n`` and the
AIC counts that variance as one extra parameter, which is the convention of
R's ``glm``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit, gammaln, xlogy

from .errors import InvalidArgs, InvalidResponse, RankDeficient

CANONICAL_LINKS = {"gaussian": "identity", "binomial": "logit", "poisson": "log"}

# |eta| cap that keeps binomial weights away from zero under separation
ETA_CAP_BINOMIAL = 30.0
# poisson only needs protection against overflow in exp
ETA_CAP_POISSON = 700.0
RANK_TOL = 1e-10


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Family:
    """Distribution plus its canonical link."""

    distribution: str
    link: str = ""

    def __post_init__(self):
        if self.distribution not in CANONICAL_LINKS:
            raise InvalidArgs(f"unknown distribution {self.distribution!r}")
        canonical = CANONICAL_LINKS[self.distribution]
        if not self.link:
            object.__setattr__(self, "link", canonical)
        elif self.link != canonical:
            raise InvalidArgs(
                f"{self.distribution} requires the {canonical} link, got {self.link!r}"
            )

    @classmethod
    def from_name(cls, name: str) -> "Family":
        return cls(name)

    @property
    def name(self) -> str:
        return self.distribution

    @property
    def has_dispersion(self) -> bool:
        return self.distribution == "gaussian"

    def clip_eta(self, eta):
        if self.distribution == "binomial":
            return np.clip(eta, -ETA_CAP_BINOMIAL, ETA_CAP_BINOMIAL)
        if self.distribution == "poisson":
            return np.minimum(eta, ETA_CAP_POISSON)
        return eta

    def linkfun(self, mu):
        if self.distribution == "binomial":
            return np.log(mu / (1.0 - mu))
        if self.distribution == "poisson":
            return np.log(mu)
        return mu

    def linkinv(self, eta):
        if self.distribution == "binomial":
            return expit(eta)
        if self.distribution == "poisson":
            return np.exp(eta)
        return eta

    def mu_eta(self, mu):
        """Derivative d mu / d eta, expressed through mu."""
        if self.distribution == "binomial":
            return mu * (1.0 - mu)
        if self.distribution == "poisson":
            return mu
        return np.ones_like(mu)

    def variance(self, mu):
        if self.distribution == "binomial":
            return mu * (1.0 - mu)
        if self.distribution == "poisson":
            return mu
        return np.ones_like(mu)

    def unit_deviance(self, y, mu):
        if self.distribution == "binomial":
            return 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))
        if self.distribution == "poisson":
            return 2.0 * (xlogy(y, y / mu) - (y - mu))
        return (y - mu) ** 2

    def deviance(self, y, mu):
        """Deviance summed over rows (axis 0)."""
        return np.sum(self.unit_deviance(y, mu), axis=0)

    def deviance_from_eta(self, y, eta, mu, const=None):
        """Column-wise deviance for ``eta`` of shape ``(n, K)`` and a response vector ``y``.

        Uses the canonical-link identities so the sums over rows run as
        matrix-vector products.  ``const`` is ``sum(xlogy(y, y))`` for poisson.
        """
        if self.distribution == "binomial":
            return -2.0 * (y @ eta - np.sum(np.logaddexp(0.0, eta), axis=0))
        if self.distribution == "poisson":
            if const is None:
                const = float(np.sum(xlogy(y, y)))
            return 2.0 * (const - y @ eta + np.sum(mu, axis=0) - np.sum(y))
        r = y[:, None] - mu
        return np.einsum("ij,ij->j", r, r)

    def log_likelihood(self, y, mu, deviance: float) -> float:
        n = len(y)
        if self.distribution == "gaussian":
            sigma2 = max(deviance / n, np.finfo(float).tiny)
            return -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0)
        if self.distribution == "binomial":
            return float(np.sum(xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu)))
        return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1.0)))

    def n_extra_params(self) -> int:
        return 1 if self.has_dispersion else 0

    def aic(self, y, mu, deviance: float, n_coef: int) -> float:
        k = n_coef + self.n_extra_params()
        return -2.0 * self.log_likelihood(y, mu, deviance) + 2.0 * k

    def check_response(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise InvalidResponse("response contains non-finite values")
        if self.distribution == "binomial" and not np.all((y == 0) | (y == 1)):
            raise InvalidResponse("binomial response must be 0/1")
        if self.distribution == "poisson" and (
            np.any(y < 0) or not np.all(y == np.round(y))
        ):
            raise InvalidResponse("poisson response must be nonnegative integers")

    def start_mu(self, y):
        if self.distribution == "binomial":
            return (y + 0.5) / 2.0
        if self.distribution == "poisson":
            return y + 0.1
        return np.asarray(y, dtype=float).copy()

    def to_dict(self) -> dict:
        return {"distribution": self.distribution, "link": self.link}


GAUSSIAN = Family("gaussian")
BINOMIAL = Family("binomial")
POISSON = Family("poisson")


def resolve_family(family) -> Family:
    if isinstance(family, Family):
        return family
    return Family(str(family))


@dataclass
class GlmFit:
    coefficients: np.ndarray
    deviance: float
    log_likelihood: float
    aic: float
    n_iter: int
    converged: bool
    boundary: bool = False
    eta: np.ndarray = field(default=None, repr=False)
    mu: np.ndarray = field(default=None, repr=False)

    @property
    def n_coef(self) -> int:
        return len(self.coefficients)


def design_rank(design: np.ndarray, tol: float = RANK_TOL) -> int:
    """Numerical rank from a column-pivoted QR.

    A pivot counts as zero when it is below ``tol`` times the largest pivot.
    """
    if design.shape[1] == 0:
        return 0
    r = linalg.qr(design, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return 0
    return int(np.sum(diag > tol * diag[0]))


def converged_dev(dev_old, dev_new, tol):
    return np.abs(dev_new - dev_old) / (np.abs(dev_new) + 0.1) < tol


def fit_glm(
    design,
    response,
    family="gaussian",
    max_iter: int = 100,
    tol: float = 1e-8,
    start=None,
    ridge: float = 0.0,
    check_rank: bool = True,
) -> GlmFit:
    """Maximum-likelihood GLM fit by IRLS.

    ``ridge`` adds ``ridge * I`` to the weighted normal equations and
    disables the rank check; it is meant only as a fallback for the final
    refit of a model.  Without it a design that is not of full column rank
    raises ``RankDeficient``.
    """
    family = resolve_family(family)
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidArgs("design and response have incompatible shapes")
    n, q = X.shape
    if n < q:
        raise RankDeficient(f"{q} columns but only {n} rows")
    family.check_response(y)
    if check_rank and ridge == 0.0 and design_rank(X) < q:
        raise RankDeficient("design matrix is not of full column rank")

    if start is not None:
        beta = np.asarray(start, dtype=float).copy()
        eta = family.clip_eta(X @ beta)
        mu = family.linkinv(eta)
    else:
        beta = np.zeros(q)
        mu = family.start_mu(y)
        eta = family.linkfun(mu)
    dev = float(family.deviance(y, mu))
    penalty = ridge * np.eye(q)

    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = family.mu_eta(mu)
        w = d * d / family.variance(mu)
        z = eta + (y - mu) / d
        if ridge > 0.0:
            xw = X * w[:, None]
            beta_new = np.linalg.solve(xw.T @ X + penalty, xw.T @ z)
        else:
            sw = np.sqrt(w)
            beta_new = linalg.lstsq(X * sw[:, None], z * sw, check_finite=False)[0]
        eta_new = family.clip_eta(X @ beta_new)
        mu_new = family.linkinv(eta_new)
        dev_new = float(family.deviance(y, mu_new))
        # step halving when the full step overshoots
        halvings = 0
        while (
            (not np.isfinite(dev_new) or dev_new > dev * (1 + 1e-12) + 1e-12)
            and (n_iter > 1 or start is not None)
            and halvings < 30
        ):
            beta_new = 0.5 * (beta_new + beta)
            eta_new = family.clip_eta(X @ beta_new)
            mu_new = family.linkinv(eta_new)
            dev_new = float(family.deviance(y, mu_new))
            halvings += 1
        done = converged_dev(dev, dev_new, tol)
        beta, eta, mu, dev = beta_new, eta_new, mu_new, dev_new
        if done:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"IRLS did not converge in {max_iter} iterations", NonConvergenceWarning
        )
    boundary = bool(
        family.distribution == "binomial"
        and np.any(np.abs(X @ beta) >= ETA_CAP_BINOMIAL)
    )
    dev = max(dev, 0.0)
    ll = family.log_likelihood(y, mu, dev)
    return GlmFit(
        coefficients=beta,
        deviance=dev,
        log_likelihood=ll,
        aic=-2.0 * ll + 2.0 * (q + family.n_extra_params()),
        n_iter=n_iter,
        converged=converged,
        boundary=boundary,
        eta=eta,
        mu=mu,
    )
