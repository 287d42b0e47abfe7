"""Full-covariance Gaussian mixtures fitted with expectation-maximization.

Every component keeps its own general covariance matrix, stored through its
lower-triangular Cholesky factor so densities never require an explicit
inverse. All EM arithmetic runs in 64-bit floats regardless of how the
embeddings were stored on disk.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky as _cholesky
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import ConfigError, FormatError, NumericalError, ShapeError

LN_2PI = float(np.log(2.0 * np.pi))

MODEL_MAGIC = b"WGMM"
MODEL_VERSION = 1

# responsibility mass below this fraction of T marks a component as dead
_DEAD_MASS_FRACTION = 1e-10
# diagonal jitter may escalate tenfold per attempt up to this multiple of reg
_MAX_JITTER_FACTOR = 1e6


@dataclass
class GmmModel:
    """Fitted mixture: weights, means and Cholesky-factored covariances.

    Parameters
    ----------
    weights : (C,) simplex of component weights, all positive.
    means : (C, E) component means.
    chol_factors : (C, E, E) lower-triangular factors L with L @ L.T = cov.
    log_dets : (C,) covariance log-determinants, 2 * sum(log(diag(L))).
    """

    weights: np.ndarray
    means: np.ndarray
    chol_factors: np.ndarray
    log_dets: np.ndarray
    seed: int
    converged: bool
    final_log_likelihood: float
    log_likelihood_curve: np.ndarray = field(default_factory=lambda: np.empty(0))
    reg: float = 0.0

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def covariances(self) -> np.ndarray:
        return np.einsum("cij,ckj->cik", self.chol_factors, self.chol_factors)

    def validate(self) -> None:
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise NumericalError("component weights do not sum to one")
        if np.any(self.weights <= 0.0):
            raise NumericalError("component weights must be strictly positive")
        for c in range(self.n_components):
            diag = np.diag(self.chol_factors[c])
            if np.any(diag <= 0.0):
                raise NumericalError(f"component {c} Cholesky factor is not positive")
            expected = 2.0 * float(np.log(diag).sum())
            if abs(expected - self.log_dets[c]) > 1e-10 * max(1.0, abs(expected)):
                raise NumericalError(f"component {c} log-determinant is stale")


@dataclass
class ClusterAssignment:
    """Hard MAP cluster ids plus the per-component log-densities behind them."""

    cluster_ids: np.ndarray
    log_densities: np.ndarray
    responsibilities: np.ndarray | None = None


def log_pdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray, log_det: float) -> float:
    """Multivariate normal log-density evaluated through the Cholesky factor.

    Solves L z = (x - mean) by forward substitution; the covariance inverse
    is never formed.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if x.shape != mean.shape or x.ndim != 1:
        raise ShapeError(f"x and mean must be equal-length vectors, got {x.shape} and {mean.shape}")
    if chol.shape != (x.size, x.size):
        raise ShapeError(f"Cholesky factor must be {x.size} x {x.size}, got {chol.shape}")
    z = solve_triangular(chol, x - mean, lower=True, check_finite=False)
    return float(-0.5 * (x.size * LN_2PI + log_det + z @ z))


def _rows_log_pdf(data: np.ndarray, mean: np.ndarray, chol: np.ndarray,
                  log_det: float) -> np.ndarray:
    """log_pdf of every row of ``data`` under one component."""
    z = solve_triangular(chol, (data - mean).T, lower=True, check_finite=False)
    return -0.5 * (data.shape[1] * LN_2PI + log_det + np.einsum("ij,ij->j", z, z))


def component_log_densities(model: GmmModel, data: np.ndarray) -> np.ndarray:
    """(T, C) matrix of per-component log-densities."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.dim:
        raise ShapeError(
            f"data must be T x {model.dim} to match the model, got {data.shape}"
        )
    out = np.empty((data.shape[0], model.n_components), dtype=np.float64)
    for c in range(model.n_components):
        out[:, c] = _rows_log_pdf(data, model.means[c], model.chol_factors[c],
                                  float(model.log_dets[c]))
    return out


def _kmeanspp_means(data: np.ndarray, n_components: int,
                    rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: greedy D^2-weighted sampling of data rows."""
    n = data.shape[0]
    chosen = np.empty(n_components, dtype=np.int64)
    chosen[0] = rng.integers(n)
    dist_sq = ((data - data[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, n_components):
        total = dist_sq.sum()
        if total > 0.0:
            chosen[i] = rng.choice(n, p=dist_sq / total)
        else:
            chosen[i] = rng.integers(n)
        dist_sq = np.minimum(dist_sq, ((data - data[chosen[i]]) ** 2).sum(axis=1))
    return data[chosen].copy()


def _safe_cholesky(cov: np.ndarray, reg: float, component: int) -> np.ndarray:
    """Cholesky with escalating diagonal jitter, 10x per attempt up to 1e6*reg."""
    jitter = 0.0
    eye = np.eye(cov.shape[0])
    while True:
        try:
            return _cholesky(cov + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = reg * 10.0 if jitter == 0.0 else jitter * 10.0
            if jitter > _MAX_JITTER_FACTOR * reg:
                raise NumericalError(
                    f"component {component}: covariance irreparably singular "
                    f"(jitter escalated past {_MAX_JITTER_FACTOR:g} * reg)"
                ) from None


def _log_dens_all(data, means, chols, log_dets):
    out = np.empty((data.shape[0], means.shape[0]), dtype=np.float64)
    for c in range(means.shape[0]):
        out[:, c] = _rows_log_pdf(data, means[c], chols[c], log_dets[c])
    return out


def fit(data: np.ndarray, n_components: int, seed: int, reg: float = 1e-6,
        max_iter: int = 200, tol: float = 1e-4) -> GmmModel:
    """Fit a full-covariance mixture by EM.

    Means are seeded with k-means++ from the given RNG seed; covariances
    start as the global diagonal sample variance plus ``reg``. Each M-step
    adds ``reg`` to every covariance diagonal. Components whose total
    responsibility mass drops below 1e-10 * T are reseeded at the point with
    the lowest mixture density. Iteration stops when the relative change of
    the mean log-likelihood falls below ``tol`` or after ``max_iter`` steps.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"data must be a T x E matrix, got shape {data.shape}")
    n_rows, dim = data.shape
    if not 1 <= n_components <= n_rows:
        raise ConfigError(
            f"need 1 <= C <= T, got C={n_components} for T={n_rows} rows"
        )
    if reg <= 0.0:
        raise ConfigError(f"reg must be positive, got {reg}")
    if max_iter < 1:
        raise ConfigError(f"max_iter must be at least 1, got {max_iter}")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_means(data, n_components, rng)
    init_cov = np.diag(data.var(axis=0) + reg)
    chols = np.empty((n_components, dim, dim), dtype=np.float64)
    log_dets = np.empty(n_components, dtype=np.float64)
    for c in range(n_components):
        chols[c] = _safe_cholesky(init_cov, reg, c)
        log_dets[c] = 2.0 * float(np.log(np.diag(chols[c])).sum())
    weights = np.full(n_components, 1.0 / n_components)

    curve: list[float] = []
    prev_ll = None
    converged = False
    for _ in range(max_iter):
        log_dens = _log_dens_all(data, means, chols, log_dets)
        weighted = log_dens + np.log(weights)
        norm = logsumexp(weighted, axis=1)
        mean_ll = float(norm.mean())
        curve.append(mean_ll)
        if prev_ll is not None and abs(mean_ll - prev_ll) <= tol * max(1.0, abs(prev_ll)):
            converged = True
            break
        prev_ll = mean_ll

        resp = np.exp(weighted - norm[:, None])
        mass = resp.sum(axis=0)
        dead = np.flatnonzero(mass < _DEAD_MASS_FRACTION * n_rows)
        if dead.size:
            # hand each dead component the point the mixture explains worst
            order = np.argsort(norm, kind="stable")
            for rank, c in enumerate(dead):
                t = order[rank % n_rows]
                resp[t, :] = 0.0
                resp[t, c] = 1.0
            mass = resp.sum(axis=0)

        weights = mass / mass.sum()
        means = (resp.T @ data) / mass[:, None]
        for c in range(n_components):
            centered = data - means[c]
            cov = (resp[:, c, None] * centered).T @ centered / mass[c]
            cov = 0.5 * (cov + cov.T)
            cov[np.diag_indices_from(cov)] += reg
            chols[c] = _safe_cholesky(cov, reg, c)
            log_dets[c] = 2.0 * float(np.log(np.diag(chols[c])).sum())
    else:
        # iteration budget exhausted: record the likelihood of the final state
        log_dens = _log_dens_all(data, means, chols, log_dets)
        curve.append(float(logsumexp(log_dens + np.log(weights), axis=1).mean()))

    return GmmModel(
        weights=weights,
        means=means,
        chol_factors=chols,
        log_dets=log_dets,
        seed=seed,
        converged=converged,
        final_log_likelihood=curve[-1],
        log_likelihood_curve=np.asarray(curve),
        reg=reg,
    )


def assign(model: GmmModel, data: np.ndarray) -> ClusterAssignment:
    """Hard MAP assignment: argmax_c (log weight_c + log density_c), ties to the
    smallest component index."""
    log_dens = component_log_densities(model, data)
    weighted = log_dens + np.log(model.weights)
    norm = logsumexp(weighted, axis=1)
    responsibilities = np.exp(weighted - norm[:, None])
    return ClusterAssignment(
        cluster_ids=np.argmax(weighted, axis=1),
        log_densities=log_dens,
        responsibilities=responsibilities,
    )


def save_model(model: GmmModel, path) -> None:
    """Serialize to the versioned ``WGMM`` binary blob."""
    curve = np.asarray(model.log_likelihood_curve, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<III", MODEL_VERSION, model.n_components, model.dim))
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.means, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.chol_factors, dtype="<f8").tobytes())
        fh.write(struct.pack("<d?qd", model.final_log_likelihood, model.converged,
                             model.seed, model.reg))
        fh.write(struct.pack("<I", curve.size))
        fh.write(curve.tobytes())


def load_model(path) -> GmmModel:
    raw = open(path, "rb").read()
    if raw[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad model magic")
    version, n_components, dim = struct.unpack_from("<III", raw, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    offset = 16

    def take(count):
        nonlocal offset
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr

    weights = take(n_components).copy()
    means = take(n_components * dim).reshape(n_components, dim).copy()
    chols = take(n_components * dim * dim).reshape(n_components, dim, dim).copy()
    final_ll, converged, seed, reg = struct.unpack_from("<d?qd", raw, offset)
    offset += struct.calcsize("<d?qd")
    (n_curve,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    curve = take(n_curve).copy()
    log_dets = 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
    return GmmModel(
        weights=weights,
        means=means,
        chol_factors=chols,
        log_dets=log_dets,
        seed=seed,
        converged=converged,
        final_log_likelihood=final_ll,
        log_likelihood_curve=curve,
        reg=reg,
    )
