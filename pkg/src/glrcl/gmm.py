"""Gaussian mixture generators: EM fitting, BIC selection, sampling, bytes.

One fitted ``GmmGenerator`` stands for the feature distribution of a single
(domain, class) pair.  Mixtures are fit with expectation maximization from a
seeded initialization, the component count is chosen by minimizing the
Bayesian Information Criterion over candidate counts 1..k_max, and fitted
generators serialize to a compact binary record so distribution parameters
can be shared without sharing any sample.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DegenerateData,
    DimensionMismatch,
    MalformedGenerator,
    NotPositiveDefinite,
    TooFewSamples,
)
from .tensor import LOG_2PI, Rng, cholesky, standard_normal

GENERATOR_MAGIC = b"GLRG"
GENERATOR_VERSION = 1

_KIND_CODES = {"full": 0, "diagonal": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class GmmGenerator:
    """Fitted mixture: weights w_k, means mu_k, Cholesky factors of Sigma_k.

    Weights are normalized at construction, so any positive vector may be
    passed in.  Arrays are frozen read-only; a generator is safe to share.
    Cholesky diagonals must be non-negative; densities additionally require
    them strictly positive (degenerate zero-spread generators are permitted
    for sampling only).
    """

    weights: np.ndarray          # (k,)
    means: np.ndarray            # (k, d)
    cov_chols: np.ndarray        # (k, d, d) lower-triangular
    covariance_kind: str         # "full" | "diagonal"
    fitted_on: int               # number of samples the fit saw

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        m = np.asarray(self.means, dtype=np.float64)
        ch = np.asarray(self.cov_chols, dtype=np.float64)
        if m.ndim != 2 or ch.ndim != 3:
            raise DimensionMismatch("means must be (k, d) and cov_chols (k, d, d)")
        k, d = m.shape
        if w.size != k or ch.shape != (k, d, d):
            raise DimensionMismatch(
                f"inconsistent shapes: weights {w.shape}, means {m.shape}, "
                f"cov_chols {ch.shape}"
            )
        if self.covariance_kind not in _KIND_CODES:
            raise ValueError(f"unknown covariance_kind {self.covariance_kind!r}")
        if not (np.all(np.isfinite(w)) and np.all(w > 0.0)):
            raise ValueError("weights must be finite and strictly positive")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(ch))):
            raise ValueError("means and cov_chols must be finite")
        diag = np.diagonal(ch, axis1=1, axis2=2)
        if np.any(diag < 0.0):
            raise ValueError("cov_chol diagonals must be non-negative")
        upper = np.triu_indices(d, k=1)
        if np.any(ch[:, upper[0], upper[1]] != 0.0):
            raise ValueError("cov_chols must be lower-triangular")
        if self.covariance_kind == "diagonal":
            lower = np.tril_indices(d, k=-1)
            if np.any(ch[:, lower[0], lower[1]] != 0.0):
                raise ValueError("diagonal kind requires zero off-diagonals")
        # Normalize only when needed so serialize/deserialize stays bit-exact.
        total = float(w.sum())
        if abs(total - 1.0) > 1e-12:
            w = w / total
        for arr in (w, m, ch):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "cov_chols", ch)
        object.__setattr__(self, "fitted_on", int(self.fitted_on))

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class EmConfig:
    """Knobs for EM and model selection."""

    max_iter: int = 200
    rel_tol: float = 1e-6
    reg_eps_scale: float = 1e-6
    k_max: int = 10
    covariance_kind_policy: str = "auto"   # "full" | "diagonal" | "auto"
    restarts: int = 1

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rel_tol > 0.0:
            raise ValueError("rel_tol must be > 0")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.covariance_kind_policy not in ("full", "diagonal", "auto"):
            raise ValueError(
                f"unknown covariance_kind_policy {self.covariance_kind_policy!r}"
            )


@dataclass
class FitReport:
    final_log_likelihood: float
    iterations_used: int
    bic: float
    converged: bool
    ll_history: list[float] = field(default_factory=list)


def resolve_covariance_kind(policy: str, n: int, d: int) -> str:
    """'auto' picks full covariance only when n can identify d(d+1)/2 entries."""
    if policy != "auto":
        return policy
    return "full" if n >= 10 * d * (d + 1) // 2 else "diagonal"


def param_count(k: int, d: int, kind: str) -> int:
    """Free parameters of a k-component mixture in d dimensions."""
    if kind == "full":
        return (k - 1) + k * d + k * d * (d + 1) // 2
    return (k - 1) + k * d + k * d


def bic_value(loglik: float, k: int, d: int, n: int, kind: str) -> float:
    return param_count(k, d, kind) * math.log(n) - 2.0 * loglik


def _chol_inverses(chols: np.ndarray) -> np.ndarray:
    """Stack of L_k^{-1} for the E-step quadratic forms."""
    k, d, _ = chols.shape
    eye = np.eye(d)
    out = np.empty_like(chols)
    for j in range(k):
        out[j] = solve_triangular(chols[j], eye, lower=True)
    return out


def _component_logpdfs(x: np.ndarray, means: np.ndarray, chols: np.ndarray,
                       kind: str = "full") -> np.ndarray:
    """(n, k) matrix of log N(x_i | mu_j, L_j L_j^T)."""
    n, d = x.shape
    if kind == "diagonal":
        # Diagonal factors reduce the quadratic form to scaled differences.
        sigma = np.diagonal(chols, axis1=1, axis2=2)
        z = (x[:, None, :] - means[None, :, :]) / sigma[None, :, :]
        quad = np.einsum("nkd,nkd->nk", z, z)
        logdet = np.sum(np.log(sigma), axis=1)
        return -0.5 * d * LOG_2PI - logdet[None, :] - 0.5 * quad
    inv = _chol_inverses(chols)
    # y_{njd} = L_j^{-1} (x_n - mu_j); one einsum keeps the loop in BLAS.
    xt = np.einsum("kde,ne->nkd", inv, x)
    mt = np.einsum("kde,ke->kd", inv, means)
    quad = np.sum((xt - mt[None, :, :]) ** 2, axis=2)
    logdet = np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    return -0.5 * d * LOG_2PI - logdet[None, :] - 0.5 * quad


def _weighted_logpdfs(g: GmmGenerator, x: np.ndarray) -> np.ndarray:
    logp = _component_logpdfs(x, g.means, g.cov_chols, g.covariance_kind)
    return logp + np.log(g.weights)[None, :]


def log_likelihood(g: GmmGenerator, features: np.ndarray) -> float:
    """Sum over rows of ln sum_k w_k N(f | mu_k, Sigma_k), via log-sum-exp."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != g.dim:
        raise DimensionMismatch(
            f"features shape {x.shape} incompatible with generator dim {g.dim}"
        )
    return float(np.sum(_logsumexp_rows(_weighted_logpdfs(g, x))))


def bic(g: GmmGenerator, features: np.ndarray) -> float:
    """p ln N - 2 ln L with p the mixture's free-parameter count."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != g.dim:
        raise DimensionMismatch(
            f"features shape {x.shape} incompatible with generator dim {g.dim}"
        )
    return bic_value(log_likelihood(g, x), g.k, g.dim, x.shape[0], g.covariance_kind)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True))).ravel()


def _regularized_chol(cov: np.ndarray, base_reg: float) -> np.ndarray:
    """Cholesky with escalating ridge; gmm owns the regularization policy."""
    d = cov.shape[0]
    reg = 0.0
    for _ in range(20):
        try:
            return cholesky(cov + reg * np.eye(d))
        except NotPositiveDefinite:
            reg = base_reg if reg == 0.0 else reg * 10.0
    raise NotPositiveDefinite("covariance could not be regularized to PD")


def fit_em(features: np.ndarray, k: int, cfg: EmConfig,
           rng: Rng) -> tuple[GmmGenerator, FitReport]:
    """Fit a k-component mixture by EM from a seeded initialization.

    Initialization: means are k distinct data rows drawn via rng with
    D-squared weighting, weights are uniform, covariances start at the global
    sample covariance plus ridge.
    Every M-step adds reg_eps_scale * (trace(S)/d) * I to each covariance
    before factorization, with S the global sample covariance, so the ridge
    is scale-relative but constant across iterations and components (a
    collapsed component still factorizes).  Iteration stops when the relative
    log-likelihood change drops below rel_tol, when a step would decrease the
    log-likelihood (possible once progress falls below the ridge
    perturbation; the better parameters are kept), or at max_iter.  With
    restarts > 1 the best final log-likelihood wins; restart i draws its
    initialization from the child stream rng.split(i).
    """
    x = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if x.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise TooFewSamples(f"{n} samples cannot support {k} components")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")

    kind = resolve_covariance_kind(cfg.covariance_kind_policy, n, d)
    centered = x - x.mean(axis=0)
    global_var = np.mean(centered**2, axis=0)          # per-dim 1/N variance
    total_var = float(global_var.sum())
    if total_var == 0.0:
        raise DegenerateData("all samples identical; no variance to model")
    if kind == "full":
        global_cov = (centered.T @ centered) / n
    else:
        global_cov = np.diag(global_var)
    base_reg = cfg.reg_eps_scale * (total_var / d)

    best: tuple[GmmGenerator, FitReport] | None = None
    for restart in range(cfg.restarts):
        g, report = _fit_once(x, k, cfg, kind, global_cov, base_reg,
                              rng.split(restart))
        if best is None or report.final_log_likelihood > best[1].final_log_likelihood:
            best = (g, report)
    return best


def _seed_rows(x, k, rng):
    """k distinct data rows via D-squared (kmeans++-style) weighting.

    The first row is uniform; each further row is drawn with probability
    proportional to its squared distance from the nearest already-chosen row,
    which keeps seeded means spread out and EM away from merged-cluster local
    optima.  Rows coinciding with a chosen one have zero probability, so the
    picks are distinct whenever the data allows it.
    """
    n = x.shape[0]
    chosen = [int(rng.integers(0, n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(k - 1):
        total = float(d2.sum())
        if total > 0.0:
            u = float(rng.uniform(1)[0]) * total
            nxt = min(int(np.searchsorted(np.cumsum(d2), u, side="right")), n - 1)
        else:
            remaining = np.setdiff1d(np.arange(n), np.asarray(chosen))
            nxt = int(remaining[int(rng.integers(0, remaining.size))])
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    return np.asarray(chosen)


def _fit_once(x, k, cfg, kind, global_cov, base_reg, rng):
    n, d = x.shape
    idx = _seed_rows(x, k, rng)
    means = x[np.sort(idx)].copy()
    weights = np.full(k, 1.0 / k)
    covs = np.repeat(global_cov[None, :, :], k, axis=0)
    chols = _update_chols(covs, kind, base_reg)

    history: list[float] = []
    converged = False
    iterations = cfg.max_iter
    prev_ll = None
    snapshot = None
    for it in range(1, cfg.max_iter + 1):
        # E-step
        logp = _component_logpdfs(x, means, chols, kind) + np.log(weights)[None, :]
        lse = _logsumexp_rows(logp)
        ll = float(lse.sum())
        if prev_ll is not None and ll < prev_ll:
            # Descent guard: once true progress falls below the ridge
            # perturbation, a step can go slightly downhill.  Keep the better
            # parameters and stop; the recorded history stays non-decreasing.
            weights, means, chols = snapshot
            converged = True
            iterations = it
            break
        history.append(ll)
        if prev_ll is not None and abs(ll - prev_ll) < cfg.rel_tol * max(1.0, abs(prev_ll)):
            converged = True
            iterations = it
            break
        snapshot = (weights.copy(), means.copy(), chols.copy())
        prev_ll = ll
        resp = np.exp(logp - lse[:, None])

        # M-step with empty-component reseeding: a component whose mass collapses
        # is re-seeded at the worst-explained point so k stays fixed and BIC
        # comparisons across candidate counts remain fair.
        nk = resp.sum(axis=0)
        empty = nk < 1e-8 * n
        weights = nk / n
        for j in range(k):
            if empty[j]:
                means[j] = x[int(np.argmin(lse))]
                covs[j] = global_cov
                weights[j] = 1.0 / n
                continue
            means[j] = resp[:, j] @ x / nk[j]
            diff = x - means[j]
            if kind == "full":
                cov = (resp[:, j, None] * diff).T @ diff / nk[j]
                covs[j] = 0.5 * (cov + cov.T)
            else:
                covs[j] = np.diag(resp[:, j] @ (diff**2) / nk[j])
        weights = weights / weights.sum()
        chols = _update_chols(covs, kind, base_reg)
    else:
        # max_iter exhausted: parameters moved after the last recorded ll,
        # so measure them once more (same descent guard applies).
        logp = _component_logpdfs(x, means, chols, kind) + np.log(weights)[None, :]
        ll = float(_logsumexp_rows(logp).sum())
        if history and ll < history[-1]:
            weights, means, chols = snapshot
        else:
            history.append(ll)

    generator = GmmGenerator(
        weights=weights.copy(),
        means=means.copy(),
        cov_chols=chols.copy(),
        covariance_kind=kind,
        fitted_on=n,
    )
    report = FitReport(
        final_log_likelihood=history[-1],
        iterations_used=iterations,
        bic=bic_value(history[-1], k, d, n, kind),
        converged=converged,
        ll_history=history,
    )
    return generator, report


def _update_chols(covs: np.ndarray, kind: str, base_reg: float) -> np.ndarray:
    k, d, _ = covs.shape
    chols = np.zeros_like(covs)
    for j in range(k):
        reg = base_reg if base_reg > 0.0 else 0.0
        cov = covs[j] + reg * np.eye(d)
        if kind == "diagonal":
            diag = np.diag(cov).copy()
            bad = diag <= 0.0
            if np.any(bad):
                diag[bad] = max(reg, 1e-300)
            chols[j] = np.diag(np.sqrt(diag))
        else:
            chols[j] = _regularized_chol(cov, max(base_reg, 1e-12))
    return chols


def _degenerate_fallback(x: np.ndarray, cfg: EmConfig) -> tuple[GmmGenerator, FitReport]:
    """k=1 diagonal generator with floored variances for zero-variance data."""
    n, d = x.shape
    mean = x.mean(axis=0)
    var = np.mean((x - mean) ** 2, axis=0)
    floor = cfg.reg_eps_scale * max(1.0, float(np.mean(x**2)))
    var = np.maximum(var, floor)
    g = GmmGenerator(
        weights=np.ones(1),
        means=mean[None, :],
        cov_chols=np.diag(np.sqrt(var))[None, :, :],
        covariance_kind="diagonal",
        fitted_on=n,
    )
    ll = log_likelihood(g, x)
    report = FitReport(
        final_log_likelihood=ll,
        iterations_used=0,
        bic=bic_value(ll, 1, d, n, "diagonal"),
        converged=True,
        ll_history=[ll],
    )
    return g, report


def select_k(features: np.ndarray, cfg: EmConfig,
             rng: Rng) -> tuple[GmmGenerator, FitReport]:
    """Fit candidates k = 1..min(k_max, N) and keep the minimum-BIC fit.

    Each candidate uses the child stream rng.split(k), so adding or removing
    candidates never perturbs the others.  Ties break toward smaller k.
    Zero-variance data, where every EM candidate is degenerate, falls back to
    a k=1 diagonal generator with floored variances.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionMismatch(f"features must be a non-empty matrix, got {x.shape}")
    n = x.shape[0]
    best: tuple[GmmGenerator, FitReport] | None = None
    last_error: Exception | None = None
    for k in range(1, min(cfg.k_max, n) + 1):
        try:
            g, report = fit_em(x, k, cfg, rng.split(k))
        except (TooFewSamples, DegenerateData, NotPositiveDefinite) as exc:
            last_error = exc
            continue
        if best is None or report.bic < best[1].bic:
            best = (g, report)
    if best is None:
        if isinstance(last_error, DegenerateData):
            return _degenerate_fallback(x, cfg)
        raise last_error if last_error is not None else DegenerateData("no candidate fit")
    return best


def sample(g: GmmGenerator, n: int, rng: Rng) -> np.ndarray:
    """Draw n rows: component index from Categorical(weights), then the MVN."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    u = rng.uniform(n)
    cum = np.cumsum(g.weights)
    idx = np.minimum(np.searchsorted(cum, u, side="right"), g.k - 1)
    z = standard_normal(rng, n * g.dim).reshape(n, g.dim)
    out = np.empty((n, g.dim))
    for j in range(g.k):
        rows = idx == j
        if np.any(rows):
            out[rows] = g.means[j] + z[rows] @ g.cov_chols[j].T
    return out


# ---------------------------------------------------------------------------
# Binary format.  Little-endian:
#   magic "GLRG" | version u32 | covariance_kind u8 (0=full, 1=diag) | k u32
#   | d u32 | fitted_on u64 | weights k*f64 | means k*d*f64 row-major
#   | cov_chols k*d*d*f64 row-major (zeros of the upper triangle stored).
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIBIIQ")


def serialize(g: GmmGenerator) -> bytes:
    head = _HEADER.pack(
        GENERATOR_MAGIC,
        GENERATOR_VERSION,
        _KIND_CODES[g.covariance_kind],
        g.k,
        g.dim,
        g.fitted_on,
    )
    return (
        head
        + np.ascontiguousarray(g.weights, dtype="<f8").tobytes()
        + np.ascontiguousarray(g.means, dtype="<f8").tobytes()
        + np.ascontiguousarray(g.cov_chols, dtype="<f8").tobytes()
    )


def read_generator(buf: bytes, offset: int = 0) -> tuple[GmmGenerator, int]:
    """Parse one generator record at offset; returns it and the next offset."""
    if len(buf) - offset < _HEADER.size:
        raise MalformedGenerator("truncated header")
    magic, version, kind_code, k, d, fitted_on = _HEADER.unpack_from(buf, offset)
    if magic != GENERATOR_MAGIC:
        raise MalformedGenerator(f"bad magic {magic!r}")
    if version != GENERATOR_VERSION:
        raise MalformedGenerator(f"unsupported version {version}")
    if kind_code not in _KIND_NAMES:
        raise MalformedGenerator(f"unknown covariance kind code {kind_code}")
    if k < 1 or d < 1:
        raise MalformedGenerator(f"invalid k={k} d={d}")
    pos = offset + _HEADER.size
    body = (k + k * d + k * d * d) * 8
    if len(buf) - pos < body:
        raise MalformedGenerator("truncated payload")
    weights = np.frombuffer(buf, dtype="<f8", count=k, offset=pos).copy()
    pos += k * 8
    means = np.frombuffer(buf, dtype="<f8", count=k * d, offset=pos).copy()
    pos += k * d * 8
    chols = np.frombuffer(buf, dtype="<f8", count=k * d * d, offset=pos).copy()
    pos += k * d * d * 8
    diag = np.diagonal(chols.reshape(k, d, d), axis1=1, axis2=2)
    if np.any(diag <= 0.0):
        raise MalformedGenerator("cov_chol diagonal must be strictly positive")
    if not np.isclose(weights.sum(), 1.0, rtol=0.0, atol=1e-9):
        raise MalformedGenerator("weights do not sum to 1")
    try:
        g = GmmGenerator(
            weights=weights,
            means=means.reshape(k, d),
            cov_chols=chols.reshape(k, d, d),
            covariance_kind=_KIND_NAMES[kind_code],
            fitted_on=fitted_on,
        )
    except (ValueError, DimensionMismatch) as exc:
        raise MalformedGenerator(str(exc)) from None
    return g, pos


def deserialize(buf: bytes) -> GmmGenerator:
    g, end = read_generator(buf, 0)
    if end != len(buf):
        raise MalformedGenerator(f"{len(buf) - end} trailing bytes")
    return g
