"""Evaluation metrics: minADE / minFDE and prior end-point statistics."""

from __future__ import annotations

import numpy as np

from .errors import EmptySet, ShapeMismatch
from .map_prior import CenterlinePrior


def _select_modes(preds: np.ndarray, conf: np.ndarray, k_eval: int) -> np.ndarray:
    """k_eval = 1 keeps only the highest-confidence mode; otherwise the first
    k_eval modes are all considered."""
    if preds.ndim != 3 or preds.shape[0] != conf.shape[0]:
        raise ShapeMismatch(f"preds {preds.shape} vs conf {conf.shape}")
    if k_eval < 1 or k_eval > preds.shape[0]:
        raise ShapeMismatch(f"k_eval {k_eval} out of range for {preds.shape[0]} modes")
    if k_eval == 1:
        return preds[int(np.argmax(conf))][None]
    return preds[:k_eval]


def min_ade(gt: np.ndarray, preds: np.ndarray, conf: np.ndarray, k_eval: int) -> float:
    """Minimum over selected modes of the mean per-step L2 distance."""
    gt = np.asarray(gt, dtype=np.float64)
    sel = _select_modes(np.asarray(preds, dtype=np.float64),
                        np.asarray(conf, dtype=np.float64), k_eval)
    if sel.shape[1:] != gt.shape:
        raise ShapeMismatch(f"preds {sel.shape} vs gt {gt.shape}")
    ade = np.linalg.norm(sel - gt, axis=2).mean(axis=1)
    return float(ade.min())


def min_fde(gt: np.ndarray, preds: np.ndarray, conf: np.ndarray, k_eval: int) -> float:
    """Minimum over selected modes of the final-point L2 distance."""
    gt = np.asarray(gt, dtype=np.float64)
    sel = _select_modes(np.asarray(preds, dtype=np.float64),
                        np.asarray(conf, dtype=np.float64), k_eval)
    if sel.shape[1:] != gt.shape:
        raise ShapeMismatch(f"preds {sel.shape} vs gt {gt.shape}")
    fde = np.linalg.norm(sel[:, -1, :] - gt[-1], axis=1)
    return float(fde.min())


def endpoint_error_stats(
    priors: list[CenterlinePrior], gts: list[np.ndarray]
) -> dict[str, float]:
    """Mean/median of the per-scenario minimum L2 distance between the ground
    truth end-point and the valid centerline end-points."""
    if len(priors) == 0 or len(priors) != len(gts):
        raise EmptySet(f"{len(priors)} priors vs {len(gts)} ground truths")
    errs = []
    for prior, gt in zip(priors, gts):
        gt_end = np.asarray(gt, dtype=np.float64)[-1]
        if prior.n_valid == 0:
            continue
        ends = prior.centerlines[prior.valid][:, -1, :]
        errs.append(float(np.min(np.linalg.norm(ends - gt_end, axis=1))))
    if not errs:
        raise EmptySet("no scenario with a valid centerline")
    arr = np.asarray(errs)
    return {"mean": float(arr.mean()), "median": float(np.median(arr)), "n": len(errs)}
