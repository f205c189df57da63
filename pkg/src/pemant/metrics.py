"""Prediction-error and ordinal-agreement metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import MetricDomainError, UndefinedKappaError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionSet:
    ids: tuple
    y: tuple
    y_hat: tuple

    @classmethod
    def from_pairs(cls, triples: Iterable[tuple]) -> "PredictionSet":
        """``triples``: (household_id, observed, predicted)."""
        ids, ys, yh = [], [], []
        for hid, y, p in triples:
            ids.append(hid)
            ys.append(y)
            yh.append(p)
        if not ids:
            raise MetricDomainError("prediction set is empty")
        if len(set(ids)) != len(ids):
            raise MetricDomainError("duplicate household id in prediction set")
        if any(v < 0 for v in ys + yh):
            raise MetricDomainError("trip counts must be non-negative")
        return cls(tuple(ids), tuple(ys), tuple(yh))

    def __len__(self) -> int:
        return len(self.ids)


def _arrays(preds) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(preds, PredictionSet):
        y, p = preds.y, preds.y_hat
    else:
        pairs = list(preds)
        y = [a for a, _ in pairs]
        p = [b for _, b in pairs]
    if len(y) == 0:
        raise MetricDomainError("metric needs at least one pair")
    return np.asarray(y, dtype=float), np.asarray(p, dtype=float)


def mae(preds) -> float:
    y, p = _arrays(preds)
    return float(np.mean(np.abs(y - p)))


def rmse(preds) -> float:
    y, p = _arrays(preds)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def smape(preds) -> float:
    """Percent; a pair with y = y_hat = 0 contributes 0."""
    y, p = _arrays(preds)
    num = 2.0 * np.abs(y - p)
    den = np.abs(y) + np.abs(p)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(100.0 * np.mean(terms))


def acc_within(preds, tol: int) -> float:
    if tol < 0:
        raise MetricDomainError("tolerance must be >= 0")
    y, p = _arrays(preds)
    return float(np.mean(np.abs(y - p) <= tol))


def qwk(pairs, k: int = 5) -> float:
    """Quadratic weighted kappa for ratings on 1..k."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise MetricDomainError("kappa needs at least two pairs")
    if k < 2:
        raise MetricDomainError("kappa needs at least two categories")
    a = np.asarray([x for x, _ in pairs], dtype=int)
    b = np.asarray([x for _, x in pairs], dtype=int)
    if a.min() < 1 or b.min() < 1 or a.max() > k or b.max() > k:
        raise MetricDomainError(f"ratings must lie in 1..{k}")
    obs = np.zeros((k, k))
    np.add.at(obs, (a - 1, b - 1), 1)
    n = obs.sum()
    exp = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / n
    idx = np.arange(k)
    w = (idx[:, None] - idx[None, :]) ** 2
    den = float((w * exp).sum())
    if den == 0:
        raise UndefinedKappaError("expected disagreement is zero (degenerate marginals)")
    return float(1.0 - (w * obs).sum() / den)


def histogram(responses: Iterable[int], k: int = 5) -> np.ndarray:
    counts = np.zeros(k)
    for r in responses:
        if not 1 <= r <= k:
            raise MetricDomainError(f"response {r} outside 1..{k}")
        counts[r - 1] += 1
    if counts.sum() == 0:
        raise MetricDomainError("no responses to histogram")
    return counts / counts.sum()


def wasserstein_ordinal(u: Sequence[float], v: Sequence[float]) -> float:
    """Sum over categories of |CDF_u - CDF_v| for two histograms on 1..K."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise MetricDomainError("histograms must have the same number of categories")
    for h in (u, v):
        if (h < 0).any() or abs(h.sum() - 1.0) > 1e-9:
            raise MetricDomainError("histogram must be non-negative and sum to 1")
    return float(np.abs(np.cumsum(u) - np.cumsum(v)).sum())


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rho with average ranks; NaN when either side is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise MetricDomainError("spearman needs equal-length inputs")
    if len(x) < 2:
        return math.nan
    rx, ry = rankdata(x) - (len(x) + 1) / 2, rankdata(y) - (len(y) + 1) / 2
    den = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if den == 0:
        return math.nan
    return float((rx * ry).sum() / den)


def correlation_structure(responses: Mapping[str, Sequence], covariates: Mapping[str, Sequence]) -> dict:
    """Spearman rho for each (covariate, opinion) pair over respondents with both values present."""
    out = {}
    for cov in sorted(covariates):
        for var in sorted(responses):
            xs, ys = [], []
            for c, r in zip(covariates[cov], responses[var]):
                if c is not None and r is not None:
                    xs.append(c)
                    ys.append(r)
            out[(cov, var)] = spearman(xs, ys)
    return out


def structural_alignment(obs_responses: Mapping[str, Sequence], obs_covariates: Mapping[str, Sequence],
                         sim_responses: Mapping[str, Sequence], sim_covariates: Mapping[str, Sequence]) -> float:
    """Spearman correlation between the observed and simulated correlation structures."""
    ro = correlation_structure(obs_responses, obs_covariates)
    rs = correlation_structure(sim_responses, sim_covariates)
    keys = []
    for key in sorted(set(ro) & set(rs)):
        if math.isnan(ro[key]) or math.isnan(rs[key]):
            log.warning("dropping pair %s/%s: constant column", *key)
            continue
        keys.append(key)
    if len(keys) < 3:
        raise MetricDomainError(f"structural alignment needs >= 3 usable pairs, got {len(keys)}")
    rho = spearman([ro[k] for k in keys], [rs[k] for k in keys])
    if math.isnan(rho):
        raise MetricDomainError("correlation structure is constant; alignment undefined")
    return rho


# --------------------------------------------------------------------------


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    smape_percent: float
    acc_within_2: float
    n: int
    excluded: dict = field(default_factory=dict)
    perception: dict | None = None

    @classmethod
    def from_predictions(cls, preds: PredictionSet, excluded: Mapping | None = None) -> "MetricsReport":
        return cls(mae(preds), rmse(preds), smape(preds), acc_within(preds, 2), len(preds), dict(excluded or {}))

    def as_dict(self) -> dict:
        d = {"mae": self.mae, "rmse": self.rmse, "smape_percent": self.smape_percent,
             "acc_within_2": self.acc_within_2, "n": self.n, "excluded": self.excluded}
        if self.perception is not None:
            d["perception"] = self.perception
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        rows = [("households", str(self.n)), ("MAE", f"{self.mae:.3f}"), ("RMSE", f"{self.rmse:.3f}"),
                ("sMAPE (%)", f"{self.smape_percent:.2f}"), ("Acc +/-2", f"{self.acc_within_2:.3f}")]
        for reason, count in sorted(self.excluded.items()):
            rows.append((f"excluded: {reason}", str(count)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a.ljust(width)}  {b}" for a, b in rows)
