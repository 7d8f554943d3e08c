"""Real-vs-synthetic projections (PCA, exact t-SNE) and summary reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import ks_2samp

from .data import DataError, Series


@dataclass
class ProjectionResult:
    coords: np.ndarray  # [n, 2]
    labels: np.ndarray  # "real" / "synth" per row
    method: str
    explained_variance_ratio: np.ndarray | None = None
    components: np.ndarray | None = None  # [k, D] for PCA
    kl_history: list[float] = field(default_factory=list)  # t-SNE, un-exaggerated


def flatten_for_projection(real: Sequence[Series], synth: Sequence[Series] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Stack row-major flattened series; labels mark real vs synthetic rows."""
    everything = list(real) + list(synth)
    if not everything:
        raise DataError("nothing to flatten")
    shapes = {s.values.shape for s in everything}
    if len(shapes) > 1:
        raise DataError(f"series shapes differ: {sorted(shapes)}")
    X = np.stack([s.values.reshape(-1) for s in everything])
    labels = np.array(["real"] * len(real) + ["synth"] * len(synth))
    return X, labels


def unflatten(X: np.ndarray, L: int, C: int, ids: Sequence[str] | None = None) -> list[Series]:
    ids = ids if ids is not None else [str(i) for i in range(len(X))]
    return [Series(row.reshape(L, C), sid) for row, sid in zip(X, ids)]


def power_eigh(A: np.ndarray, k: int, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0):
    """Top-``k`` eigenpairs of a symmetric PSD matrix by power iteration with deflation."""
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    vecs, vals = [], []
    B = A.copy()
    for _ in range(k):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = B @ v
            for u in vecs:  # keep the iterate out of the found subspace
                w -= (u @ w) * u
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w /= norm
            if w @ v < 0:
                w = -w
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        # sign convention: largest-magnitude entry positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        lam = float(v @ A @ v)
        vecs.append(v)
        vals.append(lam)
        B = B - lam * np.outer(v, v)
    return np.array(vals), np.array(vecs)


def pca_project(X: np.ndarray, k: int = 2, labels=None) -> ProjectionResult:
    X = np.asarray(X, dtype=np.float64)
    n, D = X.shape
    if n < 2:
        raise DataError("PCA needs at least two rows")
    if k > min(n - 1, D):
        raise DataError(f"cannot take {k} components from {n} rows of width {D}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = power_eigh(cov, k)
    total = np.trace(cov)
    ratios = vals / total if total > 0 else np.zeros(k)
    labels = np.asarray(labels) if labels is not None else np.array(["real"] * n)
    return ProjectionResult(Xc @ vecs.T, labels, "pca", np.clip(ratios, 0.0, None), vecs)


def _sq_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def conditional_p(D: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50) -> np.ndarray:
    """Row-wise Gaussian affinities with bandwidth bisected to hit ``log(perplexity)`` entropy."""
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_steps):
            w = np.exp(-(d - d.min()) * beta)
            s = w.sum()
            p = w / s
            H = np.log(s) + beta * np.sum((d - d.min()) * p)
            diff = H - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -np.inf else (beta + lo) / 2
        P[i, np.arange(n) != i] = p
    return P


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne_project(
    X: np.ndarray,
    perplexity: float = 30.0,
    iters: int = 1000,
    seed: int = 0,
    learning_rate: float | None = None,
    labels=None,
) -> ProjectionResult:
    """Exact t-SNE to two dimensions.

    Momentum 0.5 then 0.8 from iteration 250, early exaggeration x4 for the
    first 100 iterations, per-coordinate adaptive gains. The default step
    size is ``max(n / 4 / exaggeration, 50)``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 4:
        raise DataError("too few points for t-SNE")
    if n > 2000:
        raise DataError("exact t-SNE is limited to 2000 points")
    perp = min(perplexity, (n - 1) / 3)
    if learning_rate is None:
        learning_rate = max(n / 4.0 / 4.0, 50.0)
    P = conditional_p(_sq_distances(X), perp)
    P = (P + P.T) / (2 * n)
    P = np.maximum(P, 1e-12)

    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = []
    for it in range(iters):
        exag = 4.0 if it < 100 else 1.0
        momentum = 0.5 if it < 250 else 0.8
        num = 1.0 / (1.0 + _sq_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        history.append(_kl(P, Q))
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        gains = np.where(np.sign(grad) != np.sign(update), gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
    num = 1.0 / (1.0 + _sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    history.append(_kl(P, np.maximum(num / num.sum(), 1e-12)))
    labels = np.asarray(labels) if labels is not None else np.array(["real"] * n)
    return ProjectionResult(Y, labels, "tsne", kl_history=history)


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    return float(ks_2samp(np.ravel(a), np.ravel(b), method="asymp").statistic)


def marginal_report(real: Sequence[Series], synth: Sequence[Series]) -> list[dict]:
    """Per-channel mean, std and two-sample KS statistic of pooled values."""
    if not real or not synth:
        raise DataError("marginal report needs non-empty real and synthetic sets")
    shapes = {s.values.shape for s in list(real) + list(synth)}
    if len(shapes) > 1:
        raise DataError(f"series shapes differ: {sorted(shapes)}")
    R = np.concatenate([s.values for s in real])
    S = np.concatenate([s.values for s in synth])
    rows = []
    for c in range(R.shape[1]):
        r, s = R[:, c], S[:, c]
        rows.append(
            {
                "channel": c,
                "real_mean": r.mean(),
                "synth_mean": s.mean(),
                "mean_delta": s.mean() - r.mean(),
                "real_std": r.std(),
                "synth_std": s.std(),
                "std_delta": s.std() - r.std(),
                "ks": ks_statistic(r, s),
            }
        )
    return rows


def diversity_report(groups: Mapping[str, Sequence[Series]]) -> tuple[dict[str, float], float]:
    """Mean pairwise Euclidean distance within each group, and their grand mean."""
    out = {}
    for name, members in groups.items():
        if len(members) < 2:
            raise DataError(f"group {name!r} has {len(members)} member(s); need at least 2")
        X, _ = flatten_for_projection(members)
        out[name] = float(pdist(X).mean())
    if not out:
        raise DataError("no groups")
    return out, float(np.mean(list(out.values())))


def write_projection(result: ProjectionResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for (x, y), label in zip(result.coords, result.labels):
            w.writerow([repr(float(x)), repr(float(y)), label])


def write_rows(rows: Sequence[dict], path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})
