"""Gaussian model-X knockoffs and the pseudo labels derived from them.

Knockoffs use the equicorrelated construction: for a fitted N(mu, Sigma)
and ``s = min(2 * lambda_min(Sigma), 1)``, each row ``x`` gets

    x_tilde ~ N(x - (x - mu) Sigma^-1 diag(s),  2 diag(s) - diag(s) Sigma^-1 diag(s)).

Only the feature matrix is read; the target never enters this module.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from .data import Dataset
from .seeding import stream

PSD_TOL = 1e-8


class ThresholdMode(str, enum.Enum):
    MEAN = "mean"
    MEDIAN = "median"


class ScoreMode(str, enum.Enum):
    # mean |pearson| of f_i against every knockoff column
    CORRELATION = "correlation"
    # normalized L2 distance between f_i and its own knockoff
    OWN_COLUMN = "own-column"


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray
    s: np.ndarray
    ridge: float


@dataclass(frozen=True)
class KnockoffResult:
    knockoffs: np.ndarray
    scores: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    threshold: Optional[float] = None
    threshold_mode: Optional[ThresholdMode] = None
    seed: Optional[int] = None


def _min_eig(m: np.ndarray) -> float:
    return float(linalg.eigvalsh(m, subset_by_index=[0, 0])[0])


def estimate_gaussian(ds: Dataset, ridge: float = 1e-6) -> GaussianModel:
    """Fit mean and (ridged, population) covariance, then pick equicorrelated s."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    x = ds.features
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    cov = 0.5 * (cov + cov.T) + ridge * np.eye(ds.d)
    lam = _min_eig(cov)
    if not lam > 1e-12 * max(1.0, float(np.trace(cov)) / ds.d):
        raise np.linalg.LinAlgError(
            f"covariance is not positive definite (min eigenvalue {lam:.3g}); increase the ridge"
        )
    s = np.full(ds.d, min(2.0 * lam, 1.0))
    # shrink until 2*Sigma - diag(s) is PSD up to tolerance
    for _ in range(60):
        if _min_eig(2.0 * cov - np.diag(s)) >= -PSD_TOL:
            break
        s *= 0.99
    return GaussianModel(mean=mean, covariance=cov, s=s, ridge=ridge)


def conditional_params(model: GaussianModel):
    """Return (A, Sigma_c) with conditional mean x - (x - mu) @ A and covariance Sigma_c."""
    cho = linalg.cho_factor(model.covariance, lower=True)
    # row form of diag(s) Sigma^-1 (x - mu) is (x - mu) @ Sigma^-1 diag(s)
    a = linalg.cho_solve(cho, np.diag(model.s))
    cond = 2.0 * np.diag(model.s) - np.diag(model.s) @ a
    return a, 0.5 * (cond + cond.T)


def sample_knockoffs(ds: Dataset, model: GaussianModel, seed: int = 0) -> KnockoffResult:
    if model.covariance.shape != (ds.d, ds.d):
        raise ValueError("Gaussian model dimension does not match the dataset")
    a, cond = conditional_params(model)
    w, v = linalg.eigh(cond)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -PSD_TOL * scale:
        raise np.linalg.LinAlgError(f"conditional covariance is not PSD (min eigenvalue {w.min():.3g})")
    root = v * np.sqrt(np.clip(w, 0.0, None))
    x = ds.features
    mu_c = x - (x - model.mean) @ a
    z = stream(seed, "knockoff").standard_normal(x.shape)
    return KnockoffResult(knockoffs=mu_c + z @ root.T, seed=seed)


def abs_corr_cross(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """|pearson(x_i, y_j)| for all column pairs; zero-variance columns give 0."""
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    nx = np.sqrt((xc ** 2).sum(axis=0))
    ny = np.sqrt((yc ** 2).sum(axis=0))
    num = xc.T @ yc
    denom = np.outer(nx, ny)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(np.abs(r), 0.0, 1.0)


def score_features(ds: Dataset, kr: KnockoffResult, mode=ScoreMode.CORRELATION) -> KnockoffResult:
    mode = ScoreMode(mode)
    x, xk = ds.features, kr.knockoffs
    if mode is ScoreMode.CORRELATION:
        scores = abs_corr_cross(x, xk).mean(axis=1)
        distances = 1.0 - scores
    else:
        gap = np.linalg.norm(x - xk, axis=0)
        norm = np.linalg.norm(x, axis=0) + np.linalg.norm(xk, axis=0)
        distances = np.where(norm > 0, gap / np.where(norm > 0, norm, 1.0), 0.0)
        scores = 1.0 - distances
    return replace(kr, scores=scores, distances=distances)


def assign_pseudo_labels(kr: KnockoffResult, mode=ThresholdMode.MEAN) -> KnockoffResult:
    """Label 1 for features at or beyond the mean (or median) distance."""
    if kr.distances is None:
        raise ValueError("score_features must run before assign_pseudo_labels")
    mode = ThresholdMode(mode)
    dist = kr.distances
    threshold = float(np.mean(dist) if mode is ThresholdMode.MEAN else np.median(dist))
    # ties count as positive; the slack absorbs summation rounding in the mean
    slack = 1e-12 * max(1.0, abs(threshold))
    labels = (dist >= threshold - slack).astype(int)
    return replace(kr, labels=labels, threshold=threshold, threshold_mode=mode)


def generate(ds: Dataset, seed: int = 0, ridge: float = 1e-6,
             threshold=ThresholdMode.MEAN, score=ScoreMode.CORRELATION) -> KnockoffResult:
    model = estimate_gaussian(ds, ridge)
    kr = sample_knockoffs(ds, model, seed)
    kr = score_features(ds, kr, score)
    return assign_pseudo_labels(kr, threshold)


def dump_knockoffs(kr: KnockoffResult, feature_names, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = kr.knockoffs.shape[1]
    with open(out_dir / "knockoffs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f~{j + 1}" for j in range(d)])
        for row in kr.knockoffs:
            w.writerow([repr(float(v)) for v in row])
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_name", "score", "distance", "label"])
        for name, sc, dist, lab in zip(feature_names, kr.scores, kr.distances, kr.labels):
            w.writerow([name, repr(float(sc)), repr(float(dist)), int(lab)])
