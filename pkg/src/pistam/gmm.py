"""Gaussian mixtures: density evaluation, EM fitting and generative classification."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

REG_FLOOR = 1e-6
JSON_VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """A full-covariance Gaussian mixture stored as stacked arrays.

    ``weights`` has shape (k,), ``means`` (k, d) and ``covs`` (k, d, d).
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covs.shape != (k, d, d):
            raise ValueError("inconsistent mixture shapes")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")

    @classmethod
    def from_components(cls, components: Sequence[GaussianComponent]) -> MixtureModel:
        return cls(
            np.array([c.weight for c in components], dtype=float),
            np.array([np.asarray(c.mean, dtype=float) for c in components]),
            np.array([np.asarray(c.cov, dtype=float) for c in components]),
        )

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(float(w), m, c) for w, m, c in zip(self.weights, self.means, self.covs)]

    @cached_property
    def _whiten(self) -> tuple[np.ndarray, np.ndarray]:
        # Inverse Cholesky factors and per-component log normalizers (with log weight).
        chol = np.linalg.cholesky(self.covs)
        inv = np.linalg.inv(chol)
        logdet_half = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        with np.errstate(divide="ignore"):
            lognorm = np.log(self.weights) - 0.5 * self.dim * _LOG_2PI - logdet_half
        return inv, lognorm

    def component_log_pdf(self, X: np.ndarray) -> np.ndarray:
        """Weighted per-component log densities, shape (n, k)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got {X.shape[1]}, model has {self.dim}")
        inv, lognorm = self._whiten
        diff = X[:, None, :] - self.means[None, :, :]
        z = np.einsum("kij,nkj->nki", inv, diff)
        return lognorm[None, :] - 0.5 * np.sum(z * z, axis=2)

    def log_density(self, X: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_pdf(X), axis=1)

    def to_json(self) -> dict:
        return {
            "version": JSON_VERSION,
            "dim": self.dim,
            "components": [
                {"weight": float(w), "mean": m.tolist(), "cov": c.tolist()}
                for w, m, c in zip(self.weights, self.means, self.covs)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> MixtureModel:
        if doc.get("version") != JSON_VERSION:
            raise ValueError(f"unsupported mixture version {doc.get('version')!r}")
        comps = doc["components"]
        model = cls(
            np.array([c["weight"] for c in comps], dtype=float),
            np.array([c["mean"] for c in comps], dtype=float).reshape(len(comps), doc["dim"]),
            np.array([c["cov"] for c in comps], dtype=float).reshape(len(comps), doc["dim"], doc["dim"]),
        )
        return model


class MixtureBank:
    """Several mixtures stacked so one vectorized pass scores all of them."""

    def __init__(self, models: Sequence[MixtureModel]):
        models = list(models)
        if not models:
            raise ValueError("empty mixture bank")
        dims = {m.dim for m in models}
        if len(dims) != 1:
            raise ValueError("all mixtures in a bank must share a dimension")
        self.dim = dims.pop()
        self.inv = np.concatenate([m._whiten[0] for m in models])
        self.lognorm = np.concatenate([m._whiten[1] for m in models])
        self.means = np.concatenate([m.means for m in models])
        sizes = np.array([m.n_components for m in models])
        self.starts = np.r_[0, np.cumsum(sizes)[:-1]]
        self.sizes = sizes

    def log_densities(self, x) -> np.ndarray:
        """Log density of ``x`` under each mixture, in bank order."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: got {x.shape[0]}, bank has {self.dim}")
        z = np.einsum("kij,kj->ki", self.inv, x[None, :] - self.means)
        logp = self.lognorm - 0.5 * np.einsum("ki,ki->k", z, z)
        peak = np.maximum.reduceat(logp, self.starts)
        return peak + np.log(np.add.reduceat(np.exp(logp - np.repeat(peak, self.sizes)), self.starts))


def gmm_density(x: Sequence[float], m: MixtureModel) -> float:
    """Mixture density at a single point (not capped at 1)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != m.dim:
        raise ValueError(f"dimension mismatch: got {x.shape[0]}, model has {m.dim}")
    return float(np.exp(m.log_density(x[None, :])[0]))


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(Xc, resp, reg):
    nk = resp.sum(axis=0)
    alive = nk > 1e-12 * len(Xc)
    resp, nk = resp[:, alive], nk[alive]
    weights = nk / nk.sum()
    means = (resp.T @ Xc) / nk[:, None]
    d = Xc.shape[1]
    covs = np.empty((len(nk), d, d))
    for j in range(len(nk)):
        diff = Xc - means[j]
        covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j]
        covs[j] = 0.5 * (covs[j] + covs[j].T)
        covs[j][np.diag_indices(d)] += reg
    return weights, means, covs


def gmm_fit_em(
    samples,
    n_components: int = 3,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-6,
    reg: float = REG_FLOOR,
    trace: list | None = None,
) -> MixtureModel:
    """Fit a full-covariance mixture by EM with k-means++ seeding.

    ``reg`` is added to every covariance diagonal after each M-step, which
    keeps constant dimensions (e.g. bit features) non-singular. Iteration
    stops once the relative log-likelihood change drops below ``tol`` or
    after ``max_iters`` M-steps. If ``trace`` is given, the log-likelihood
    evaluated at each E-step is appended to it.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if X.size else X.reshape(0, 1)
    if len(X) == 0:
        raise ValueError("empty class")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    n, d = X.shape
    k = min(n_components, n)
    # Work relative to the first sample so that degenerate sets reproduce it exactly.
    shift = X[0].copy()
    Xc = X - shift
    rng = np.random.default_rng(seed)

    means = _kmeanspp(Xc, k, rng)
    base = np.cov(Xc, rowvar=False, bias=True).reshape(d, d) if n > 1 else np.zeros((d, d))
    base = base + reg * np.eye(d)
    covs = np.repeat(base[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    prev = None
    for _ in range(max_iters + 1):
        model = MixtureModel(weights, means, covs)
        logp = model.component_log_pdf(Xc)
        ll_point = logsumexp(logp, axis=1)
        ll = float(ll_point.sum())
        if trace is not None:
            trace.append(ll)
        if prev is not None and abs(ll - prev) <= tol * max(1.0, abs(prev)):
            break
        prev = ll
        if _ == max_iters:
            break
        resp = np.exp(logp - ll_point[:, None])
        weights, means, covs = _m_step(Xc, resp, reg)
    return MixtureModel(weights, means + shift, covs)


def gmm_classify(x: Sequence[float], models, class_priors: Sequence[float], bank: MixtureBank | None = None) -> int:
    """Return the class maximizing prior * density; ties go to the lowest id.

    Scores are compared in log space, so far-away queries whose densities
    underflow to zero still get a well-defined winner. ``bank`` may carry the
    models pre-stacked in the given order.
    """
    models = list(models)
    if not models:
        raise ValueError("no class models")
    ids = np.array([int(a) for a, _ in models])
    priors = np.asarray(class_priors, dtype=float)
    if len(priors) != len(ids):
        raise ValueError("one prior per class is required")
    bank = bank or MixtureBank([m for _, m in models])
    with np.errstate(divide="ignore"):
        scores = np.log(priors) + bank.log_densities(x)
    best = scores.max()
    return int(ids[scores == best].min())
