"""Image quality metrics, expression-transfer evaluation, and singular values.

SSIM deviates from the common 11x11 Gaussian window: a uniform 8x8 window at
stride 1 keeps the reference loop trivial. Singular values come from a
hand-rolled one-sided Jacobi sweep (not a library SVD) so they can be checked
against an independent eigenvalue oracle.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, UsageError
from .synthscene import GT_FRAME_STRIDE, render_gt_frame

LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10 log10(max^2 / MSE) in dB; +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_val * max_val / mse))


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ LUMA
    return img


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8, max_val: float = 1.0) -> float:
    """Mean windowed SSIM over a uniform window x window kernel at stride 1."""
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise UsageError(f"ssim shapes differ: {ga.shape} vs {gb.shape}")
    H, W = ga.shape
    if H < window or W < window:
        raise UsageError(f"image {ga.shape} smaller than the {window}x{window} window")
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    wa = np.lib.stride_tricks.sliding_window_view(ga, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(gb, (window, window))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
         / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(s.mean())


def singular_values(W: np.ndarray, tol: float = 1e-10, max_sweeps: int = 60) -> np.ndarray:
    """Singular values by one-sided Jacobi column orthogonalization, descending.

    Sweeps rotate column pairs until every pair satisfies
    |<ci, cj>| <= tol * ||ci|| ||cj||; the values are the column norms.
    """
    W = np.asarray(W, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise NumericError("matrix has non-finite entries")
    m, n = W.shape
    A = W.T.copy() if m < n else W.copy()  # work tall: more rows than columns
    ncols = A.shape[1]
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(ncols - 1):
            for q in range(p + 1, ncols):
                apq = A[:, p] @ A[:, q]
                app = A[:, p] @ A[:, p]
                aqq = A[:, q] @ A[:, q]
                denom = np.sqrt(app * aqq)
                if denom == 0.0 or abs(apq) <= tol * denom:
                    continue
                off = max(off, abs(apq) / denom)
                theta = 0.5 * np.arctan2(2.0 * apq, app - aqq)
                c, s = np.cos(theta), np.sin(theta)
                cp = A[:, p].copy()
                A[:, p] = c * cp + s * A[:, q]
                A[:, q] = -s * cp + c * A[:, q]
        if off == 0.0:
            break
    return np.sort(np.linalg.norm(A, axis=0))[::-1].copy()


def transfer_eval(state, dataset, source_name: str, target_name: str,
                  frame_indices=None) -> float:
    """Mean PSNR of rendering `target` driven by `source`'s expression sequence.

    Ground truth is the analytic scene of the target identity evaluated under
    the source's expressions (possible because scenes are synthetic). Uses the
    source's held-out frame indices by default; with source == target on those
    frames this is exactly the ordinary test PSNR.
    """
    from . import trainer  # local import; trainer imports metrics for psnr

    src = dataset.by_name(source_name)
    tgt = dataset.by_name(target_name)
    tgt_index = dataset.identity_names().index(target_name)
    picks = src.test_idx if frame_indices is None else list(frame_indices)
    vals = []
    for fidx in picks:
        e = src.frames[fidx].e
        pose = tgt.frames[fidx].pose
        frame_id = tgt_index * GT_FRAME_STRIDE + fidx
        pred = trainer.render_model_frame(state, dataset, target_name, e, pose,
                                          frame_id=frame_id)
        gt = (tgt.frames[fidx].image
              if source_name == target_name and tgt.frames[fidx].image is not None
              else render_gt_frame(dataset.scene, tgt_index, e, pose,
                                   dataset.t_near, dataset.t_far,
                                   dataset.gt_samples, dataset.seed, frame_id))
        vals.append(psnr(pred, gt))
    return float(np.mean(vals))


def transfer_matrix(state, dataset) -> np.ndarray:
    names = dataset.identity_names()
    M = np.zeros((len(names), len(names)))
    for j, src in enumerate(names):
        for i, tgt in enumerate(names):
            M[j, i] = transfer_eval(state, dataset, src, tgt)
    return M


def evaluate_images(state, dataset) -> dict:
    """Per-frame PSNR/SSIM on the held-out split, plus means and variant label."""
    from . import trainer

    window = state.cfg.get("eval", {}).get("ssim_window", 8)
    per_frame = []
    for k, idn in enumerate(dataset.identities):
        for fidx in idn.test_idx:
            fr = idn.frames[fidx]
            img = trainer.render_model_frame(state, dataset, idn.name, fr.e, fr.pose,
                                             frame_id=k * GT_FRAME_STRIDE + fidx)
            per_frame.append({"identity": idn.name, "frame": fidx,
                              "psnr": psnr(img, fr.image),
                              "ssim": ssim(img, fr.image, window=window)})
    finite = [r["psnr"] for r in per_frame if np.isfinite(r["psnr"])]
    return {
        "variant": state.cfg["conditioning"]["variant"],
        "frames": per_frame,
        "mean_psnr": float(np.mean(finite)) if finite else float("inf"),
        "mean_ssim": float(np.mean([r["ssim"] for r in per_frame])),
    }
