"""Evaluation metrics: SSIM, mouth landmark distance, full-face landmark distance.

SSIM follows the standard definition: 11x11 Gaussian window (sigma 1.5),
stabilizers C1=(0.01 L)^2 and C2=(0.03 L)^2 with data range L=1, mean local
score over valid windows, averaged over channels. Landmarks are the
renderer's analytic points, so no detector is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coeffspace import MOUTH_LANDMARK_IDX, NUM_LANDMARKS, load_frame_pixels
from .errors import DataError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(a, b) -> float:
    """Mean local structural similarity between two images in [0,1]."""
    pa = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    pb = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if pa.shape != pb.shape:
        raise ShapeError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    if pa.ndim == 2:
        pa, pb = pa[None], pb[None]
    if pa.ndim != 3:
        raise ShapeError(f"expected (C, H, W) images, got {pa.shape}")
    h, w = pa.shape[1:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"images must be at least {SSIM_WINDOW}px per side, got {h}x{w}")
    for img in (pa, pb):
        if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
            raise DataError("image values must lie in [0, 1]")

    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    scores = []
    for c in range(pa.shape[0]):
        x, y = pa[c], pb[c]
        mu_x = _windowed_mean(x, kernel)
        mu_y = _windowed_mean(y, kernel)
        var_x = _windowed_mean(x * x, kernel) - mu_x**2
        var_y = _windowed_mean(y * y, kernel) - mu_y**2
        cov = _windowed_mean(x * y, kernel) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
        scores.append(float((num / den).mean()))
    return float(np.mean(scores))


def lmd(pred_landmarks, target_landmarks, subset: str = "face") -> float:
    """Mean Euclidean distance over selected landmarks and frames.

    subset "mouth" uses the renderer's six mouth points; "face" uses all.
    """
    pred = np.asarray(pred_landmarks, dtype=np.float64)
    target = np.asarray(target_landmarks, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[None]
    if target.ndim == 2:
        target = target[None]
    if pred.shape != target.shape:
        raise DataError(f"landmark shapes differ: {pred.shape} vs {target.shape}")
    if pred.ndim != 3 or pred.shape[-1] != 2:
        raise DataError(f"expected (frames, points, 2) landmarks, got {pred.shape}")
    if subset == "mouth":
        if pred.shape[1] != NUM_LANDMARKS:
            raise DataError(
                f"mouth subset requires the {NUM_LANDMARKS}-point layout, got {pred.shape[1]} points"
            )
        pred = pred[:, MOUTH_LANDMARK_IDX, :]
        target = target[:, MOUTH_LANDMARK_IDX, :]
    elif subset != "face":
        raise DataError(f"subset must be 'mouth' or 'face', got {subset!r}")
    return float(np.sqrt(((pred - target) ** 2).sum(axis=-1)).mean())


@dataclass
class EvalReport:
    ssim: float
    m_lmd: float
    f_lmd: float
    per_video: list = field(default_factory=list)

    def to_dict(self):
        return {
            "ssim": self.ssim,
            "m_lmd": self.m_lmd,
            "f_lmd": self.f_lmd,
            "per_video": self.per_video,
        }

    def table(self) -> str:
        """Plain-text table with the familiar column layout."""
        header = f"{'video':<12} {'SSIM':>8} {'M-LMD':>8} {'F-LMD':>8}"
        lines = [header, "-" * len(header)]
        for row in self.per_video:
            lines.append(
                f"{row['video_id']:<12} {row['ssim']:>8.4f} {row['m_lmd']:>8.4f} {row['f_lmd']:>8.4f}"
            )
        lines.append("-" * len(header))
        lines.append(f"{'mean':<12} {self.ssim:>8.4f} {self.m_lmd:>8.4f} {self.f_lmd:>8.4f}")
        return "\n".join(lines)


def _load_video_dir(video_dir: Path):
    video_dir = Path(video_dir)
    meta_path = None
    for name in ("meta.json", "index.json"):
        if (video_dir / name).exists():
            meta_path = video_dir / name
            break
    if meta_path is None:
        raise DataError(f"no meta.json or index.json under {video_dir}")
    meta = json.loads(meta_path.read_text())
    landmarks = np.asarray(meta["landmarks"], dtype=np.float64)
    frame_paths = sorted((video_dir / "frames").glob("*.png"))
    if len(frame_paths) != landmarks.shape[0]:
        raise DataError(
            f"{video_dir}: {len(frame_paths)} frames but {landmarks.shape[0]} landmark rows"
        )
    pixels = [load_frame_pixels(p) for p in frame_paths]
    return pixels, landmarks


def _video_dirs(root: Path) -> dict:
    root = Path(root)
    if (root / "frames").is_dir():
        return {root.name: root}
    out = {}
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        if (child / "frames").is_dir():
            out[child.name] = child
    if not out:
        raise DataError(f"no video directories under {root}")
    return out


def evaluate_dirs(pred_root, gt_root) -> EvalReport:
    """Per-video SSIM/M-LMD/F-LMD between matching video directories, plus
    frame-count-weighted aggregates."""
    preds = _video_dirs(Path(pred_root))
    gts = _video_dirs(Path(gt_root))
    shared = sorted(set(preds) & set(gts))
    if len(preds) == 1 and len(gts) == 1:
        shared = [(next(iter(preds)), next(iter(gts)))]
    else:
        if not shared:
            raise DataError("no matching video ids between prediction and ground-truth roots")
        shared = [(vid, vid) for vid in shared]

    rows = []
    total_frames = 0
    sums = np.zeros(3)
    for pred_id, gt_id in shared:
        pred_pixels, pred_lm = _load_video_dir(preds[pred_id])
        gt_pixels, gt_lm = _load_video_dir(gts[gt_id])
        if len(pred_pixels) != len(gt_pixels):
            raise DataError(
                f"{pred_id}: prediction has {len(pred_pixels)} frames, ground truth {len(gt_pixels)}"
            )
        n = len(pred_pixels)
        vid_ssim = float(np.mean([ssim(p, g) for p, g in zip(pred_pixels, gt_pixels)]))
        vid_m = lmd(pred_lm, gt_lm, subset="mouth")
        vid_f = lmd(pred_lm, gt_lm, subset="face")
        rows.append(
            {"video_id": pred_id, "num_frames": n, "ssim": vid_ssim, "m_lmd": vid_m, "f_lmd": vid_f}
        )
        sums += n * np.array([vid_ssim, vid_m, vid_f])
        total_frames += n
    agg = sums / total_frames
    return EvalReport(ssim=float(agg[0]), m_lmd=float(agg[1]), f_lmd=float(agg[2]), per_video=rows)
