"""Exact t-SNE and a silhouette score for inspecting learned features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TsneResult:
    points: np.ndarray
    kl_initial: float
    kl_final: float
    kl_history: list = field(default_factory=list)


def _sq_dists(x: np.ndarray) -> np.ndarray:
    s = (x * x).sum(axis=1)
    d = s[:, None] + s[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def conditional_affinities(d2: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 100) -> np.ndarray:
    """Row-stochastic Gaussian affinities, each row bisected to the target perplexity."""
    n = len(d2)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        di = np.delete(d2[i], i)
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_iter):
            w = np.exp(-(di - di.min()) * beta)
            sw = w.sum()
            row = w / sw
            h = -np.sum(row[row > 0] * np.log(row[row > 0]))
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        p[i, np.arange(n) != i] = row
    return p


def joint_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    p = conditional_affinities(_sq_dists(np.asarray(x, dtype=np.float64)), perplexity)
    p = (p + p.T) / (2.0 * len(p))
    return np.maximum(p, 1e-12)


def _student_q(y: np.ndarray):
    num = 1.0 / (1.0 + _sq_dists(y))
    np.fill_diagonal(num, 0.0)
    return np.maximum(num / num.sum(), 1e-12), num


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(len(p), dtype=bool)
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tsne_embed(features, perplexity: float = 30.0, iters: int = 1000, seed: int = 0,
               learning_rate: float | None = None, exaggeration: float = 12.0, exaggeration_iters: int = 250,
               record_every: int = 50) -> TsneResult:
    """Exact O(n^2) t-SNE into two dimensions.

    Uses early exaggeration, momentum 0.5 then 0.8, and per-coordinate
    adaptive gains. The default learning rate is ``max(n / exaggeration / 4, 50)``.
    ``kl_history`` holds ``(iteration, KL)`` pairs measured
    against the unexaggerated affinities.
    """
    x = np.asarray([getattr(f, "values", f) for f in features], dtype=np.float64)
    n = len(x)
    if perplexity <= 0:
        raise ValueError("perplexity must be positive")
    if n < 3 * perplexity:
        raise ValueError(f"t-SNE with perplexity {perplexity} needs at least {int(np.ceil(3 * perplexity))} "
                         f"points, got {n}")
    p = joint_affinities(x, perplexity)
    if learning_rate is None:
        learning_rate = max(n / exaggeration / 4.0, 50.0)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, (n, 2))
    vel = np.zeros_like(y)
    gains = np.ones_like(y)
    q, _ = _student_q(y)
    history = [(0, kl_divergence(p, q))]
    for it in range(1, iters + 1):
        exag = exaggeration if it <= exaggeration_iters else 1.0
        momentum = 0.5 if it <= exaggeration_iters else 0.8
        q, num = _student_q(y)
        pq = (exag * p - q) * num
        grad = 4.0 * (np.diag(pq.sum(axis=1)) - pq) @ y
        same = np.sign(grad) == np.sign(vel)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
        vel = momentum * vel - learning_rate * gains * grad
        y = y + vel
        y = y - y.mean(axis=0)
        if it % record_every == 0 or it == iters:
            history.append((it, kl_divergence(p, _student_q(y)[0])))
    return TsneResult(y, history[0][1], history[-1][1], history)


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient under Euclidean distance."""
    x = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two clusters")
    d = np.sqrt(_sq_dists(x))
    s = np.zeros(len(x))
    for i in range(len(x)):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, labels == c].mean() for c in classes if c != labels[i])
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(s.mean())
