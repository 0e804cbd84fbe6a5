"""Reconstruction-error signals, thresholds, weighted score and pseudo-labels."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass
class ReconError:
    raw: np.ndarray
    normalized: np.ndarray
    min_raw: float
    max_raw: float

    @classmethod
    def from_raw(cls, raw) -> "ReconError":
        raw = np.asarray(raw, dtype=np.float64)
        lo, hi = float(raw.min()), float(raw.max())
        if hi > lo:
            norm = (raw - lo) / (hi - lo)
        else:
            norm = np.zeros_like(raw)
        return cls(raw, norm, lo, hi)

    def normalize(self, raw) -> np.ndarray:
        """Map new raw errors onto this reference range, clamped to [0, 1]."""
        raw = np.asarray(raw, dtype=np.float64)
        if self.max_raw <= self.min_raw:
            return np.where(raw > self.max_raw, 1.0, 0.0)
        return np.clip((raw - self.min_raw) / (self.max_raw - self.min_raw), 0.0, 1.0)


def reconstruction_errors(ae, batch) -> ReconError:
    return ReconError.from_raw(ae.errors(batch))


def percentile_threshold(errs: ReconError, q: float) -> tuple[float, np.ndarray]:
    """Linear-interpolation quantile of the raw errors; flags are strict."""
    if len(errs.raw) < 2:
        raise ValueError("need at least two errors")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    tau = float(np.quantile(errs.raw, q))
    return tau, errs.raw > tau


def two_means_split(values) -> tuple[float, np.ndarray]:
    """Exact 1-D 2-means on ``values``.

    Every boundary between distinct sorted values is scored by total
    within-cluster sum of squares; the smallest wins (lowest boundary on
    ties). Returns the minimum of the upper (higher-centroid) cluster and
    the cluster membership of every value.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two values")
    uniq = np.unique(v)
    if uniq.size == 1:
        return float(uniq[0]), np.zeros(v.size, dtype=bool)
    s = np.sort(v) - v.mean()
    n = s.size
    c1 = np.cumsum(s)
    c2 = np.cumsum(s * s)
    k = np.arange(1, n)
    # split after position k-1; only where the next value differs
    valid = s[1:] > s[:-1]
    left = c2[:-1] - c1[:-1] ** 2 / k
    right = (c2[-1] - c2[:-1]) - (c1[-1] - c1[:-1]) ** 2 / (n - k)
    sse = np.where(valid, left + right, np.inf)
    # near-equal scores (within rounding) count as ties
    best = sse.min()
    cut = int(np.flatnonzero(sse <= best + 1e-12 * max(c2[-1], 1e-300))[0]) + 1
    tau = float(np.sort(v)[cut])
    return tau, v >= tau


def dynamic_threshold(errs: ReconError | np.ndarray) -> tuple[float, np.ndarray]:
    """Two-means threshold on normalized errors.

    ``tau`` is the smallest normalized error in the higher-centroid cluster
    and a sample is anomalous iff its normalized error is strictly above
    ``tau``, so that cluster's own minimum stays unflagged. A plain array is
    taken to be normalized already. All-equal input gives ``tau = 0`` and
    no anomalies.
    """
    r = errs.normalized if isinstance(errs, ReconError) else np.asarray(errs, dtype=np.float64)
    if r.size < 2:
        raise ValueError("need at least two errors")
    if np.all(r == r[0]):
        return 0.0, np.zeros(r.size, dtype=np.int64)
    tau, _ = two_means_split(r)
    return tau, (r > tau).astype(np.int64)


def dynamic_threshold_values(values) -> float:
    """Dynamic threshold expressed in the units of ``values`` (normalized
    internally, mapped back afterwards)."""
    errs = ReconError.from_raw(values)
    tau, _ = dynamic_threshold(errs)
    return errs.min_raw + tau * (errs.max_raw - errs.min_raw)


@dataclass(frozen=True)
class AnomalyScoreConfig:
    w_alpha: float
    w_gamma: float
    w_beta: float
    threshold: float

    def __post_init__(self):
        w = (self.w_alpha, self.w_gamma, self.w_beta)
        if min(w) < 0:
            raise ValueError("weights must be nonnegative")
        if max(w) <= 0:
            raise ValueError("at least one weight must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.threshold > sum(w) + 1e-12:
            raise ValueError("threshold exceeds the largest reachable score")

    @property
    def label(self) -> str:
        return f"({_fmt(self.w_alpha)}, {_fmt(self.w_gamma)}, {_fmt(self.w_beta)}) >= {_fmt(self.threshold)}"

    def scaled(self, c: float) -> "AnomalyScoreConfig":
        return AnomalyScoreConfig(self.w_alpha * c, self.w_gamma * c, self.w_beta * c,
                                  self.threshold * c)

    @classmethod
    def from_list(cls, values) -> "AnomalyScoreConfig":
        return cls(*(float(v) for v in values))


def _fmt(x: float) -> str:
    return f"{x:g}"


# Weight grid of the evaluation tables: (w_alpha, w_gamma, w_beta, T).
DEFAULT_GRID = (
    (1, 0, 0, 1), (0, 1, 0, 1), (0, 0, 1, 1), (1, 1, 1, 2),
    (1, 1.5, 1, 2.5), (1.5, 1.5, 1, 2.5), (1, 1.5, 1.5, 2.5), (1.5, 1, 1.5, 2.5),
)


def _check_unit(name, x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise DomainError(f"{name} must lie in [0, 1]")
    return x


def weighted_score(lam_a, lam_c, lam_u, cfg: AnomalyScoreConfig):
    """``w_alpha*lam_a + w_gamma*lam_c + w_beta*lam_u`` and ``score >= T``.

    Works elementwise on arrays; scalars in give scalars out.
    """
    a = _check_unit("lambda_A", lam_a)
    c = _check_unit("lambda_C", lam_c)
    u = _check_unit("lambda_U", lam_u)
    score = cfg.w_alpha * a + cfg.w_gamma * c + cfg.w_beta * u
    abnormal = score >= cfg.threshold
    if score.ndim == 0:
        return float(score), bool(abnormal)
    return score, abnormal


class PseudoLabel(enum.IntEnum):
    NORMAL = 0
    ABNORMAL = 1
    QUARANTINE = -1


@dataclass(frozen=True)
class PseudoLabelConfig:
    score: AnomalyScoreConfig
    hi_conf: float = 0.9
    lo_conf: float = 0.1

    def __post_init__(self):
        if not 0.5 < self.hi_conf <= 1:
            raise ValueError("hi_conf must lie in (0.5, 1]")
        if not 0 <= self.lo_conf < 0.5:
            raise ValueError("lo_conf must lie in [0, 0.5)")


def pseudo_label(lam_a, lam_c, lam_u, cfg: PseudoLabelConfig, tau: float | None = None):
    """Abnormal when the weighted score fires and a classifier is confident
    (``max(lam_c, lam_u) >= hi_conf``); Normal when the score does not fire,
    both classifiers are confidently low and ``lam_a`` sits below the dynamic
    threshold ``tau`` (skipped when ``tau`` is None); Quarantine otherwise.
    """
    _, abnormal = weighted_score(lam_a, lam_c, lam_u, cfg.score)
    conf = np.maximum(np.asarray(lam_c, dtype=np.float64), np.asarray(lam_u, dtype=np.float64))
    below = True if tau is None else np.asarray(lam_a, dtype=np.float64) < tau
    out = np.where(abnormal & (conf >= cfg.hi_conf), PseudoLabel.ABNORMAL,
                   np.where(~np.asarray(abnormal) & (conf <= cfg.lo_conf) & below,
                            PseudoLabel.NORMAL, PseudoLabel.QUARANTINE))
    if np.ndim(out) == 0:
        return PseudoLabel(int(out))
    return out.astype(np.int64)
