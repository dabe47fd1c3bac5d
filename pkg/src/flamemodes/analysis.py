"""Latent phase-distribution analysis and mode classification.

A case's latent cloud is rotated onto its principal axes; the spread along the
minor axis relative to the major one separates single- from double-variable
patterns, and a 2-means split measures whether the points gather around two
separate limit points.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model
from .exceptions import InputError
from .formats import Checkpoint
from .pipeline import make_windows
from .records import ModeLabel, OperatingPoint, PressureRecord

TAU_BIMODAL = 3.0
TAU_RATIO = 0.1
MIN_POINTS = 8
N_RESTARTS = 10


@dataclass
class LatentCloud:
    points: np.ndarray
    case_id: str = ""
    operating_point: OperatingPoint | None = None
    truth: ModeLabel | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.points)):
            raise InputError(f"latent cloud {self.case_id!r} has non-finite points")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class ModeDiagnostics:
    rotation: np.ndarray
    var1: float
    var2: float
    variance_ratio: float
    cluster_centers: np.ndarray
    bimodality_score: float
    degenerate: bool = False
    n_points: int = 0


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, LatentCloud) else np.asarray(cloud, dtype=np.float64)
    pts = pts.reshape(-1, 2) if pts.ndim == 1 and pts.size == 2 else pts
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError(f"latent points must be n x 2, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InputError("latent points must be finite")
    return pts


def encode_cloud(checkpoint: Checkpoint, rec: PressureRecord, chunk: int = 256) -> LatentCloud:
    """Deterministic (eps = 0) latent point of every window of a record, in time order."""
    if rec.samples.shape[1] != checkpoint.n_channels:
        raise InputError(f"record has {rec.samples.shape[1]} channels, checkpoint expects {checkpoint.n_channels}")
    x = checkpoint.normalizer.apply(rec.samples)
    windows = make_windows(x, checkpoint.window_len, checkpoint.stride)
    mus = []
    for start in range(0, windows.shape[0], chunk):
        mu, _ = model.encode_batch(windows[start:start + chunk], checkpoint.params, checkpoint.window_len)
        mus.append(mu)
    return LatentCloud(np.concatenate(mus), rec.case_id, rec.operating_point, rec.label)


def orthogonal_decompose(cloud):
    """Rotate mean-centred points onto their principal axes.

    Returns ``(rotated, rotation, var1, var2, degenerate)`` where
    ``rotated = (points - mean) @ rotation``, ``var1 >= var2`` are the
    population variances along the new axes, and the first axis has a
    non-negative Z1 loading (Z2 on ties). Identical points give the identity
    rotation with ``degenerate=True``.
    """
    pts = _points(cloud)
    if pts.shape[0] < 2:
        raise InputError(f"need at least 2 points, got {pts.shape[0]}")
    centred = pts - pts.mean(axis=0)
    cov = centred.T @ centred / pts.shape[0]
    scale = float(np.abs(pts).max())
    if np.trace(cov) <= (1e-12 * scale) ** 2:
        return centred, np.eye(2), 0.0, 0.0, True
    _, vecs = np.linalg.eigh(cov)
    v1 = vecs[:, 1]
    if v1[0] < 0 or (v1[0] == 0 and v1[1] < 0):
        v1 = -v1
    rotation = np.array([[v1[0], -v1[1]], [v1[1], v1[0]]])
    rotated = centred @ rotation
    var1 = float(np.mean(rotated[:, 0] ** 2))
    var2 = float(np.mean(rotated[:, 1] ** 2))
    return rotated, rotation, var1, var2, False


def _lloyd(points: np.ndarray, labels: np.ndarray, max_iter: int = 100):
    """Lloyd iterations from an initial partition; exact distance ties go to cluster 0."""
    for _ in range(max_iter):
        centers = np.stack([points[labels == k].mean(axis=0) for k in range(2)])
        d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        new = (d[:, 1] < d[:, 0]).astype(np.intp)
        if new.all() or not new.any():
            break
        if np.array_equal(new, labels):
            break
        labels = new
    centers = np.stack([points[labels == k].mean(axis=0) for k in range(2)])
    inertia = float(((points - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def threshold_splits(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best two-group split along each centroid-to-point direction.

    For every direction the points are sorted by their projection and the
    prefix/suffix split with the smallest within-group sum of squares is kept.
    Returns boolean masks ``(m, n)`` and their sums of squares ``(m,)``.
    The candidate set depends only on the geometry of the cloud, so it moves
    with the cloud under rotation, scaling and reordering.
    """
    n = points.shape[0]
    centred = points - points.mean(axis=0)
    norms = np.linalg.norm(centred, axis=1)
    keep = norms > 1e-12 * norms.max()
    dirs = centred[keep] / norms[keep, None]
    order = np.argsort(centred @ dirs.T, axis=0, kind="stable")  # (n, m)
    xs = centred[order]  # (n, m, 2)
    s1 = np.cumsum(xs, axis=0)[:-1]
    s2 = np.cumsum((xs**2).sum(axis=-1), axis=0)[:-1]
    k = np.arange(1, n, dtype=np.float64)[:, None]
    total1, total2 = s1[-1] + xs[-1], s2[-1] + (xs[-1] ** 2).sum(axis=-1)
    sse = (s2 - (s1**2).sum(axis=-1) / k) + ((total2 - s2) - ((total1 - s1) ** 2).sum(axis=-1) / (n - k))
    cut = np.argmin(sse, axis=0)
    cols = np.arange(dirs.shape[0])
    masks = np.zeros((dirs.shape[0], n), dtype=bool)
    rank = np.empty_like(order)
    rank[order, cols[None, :]] = np.arange(n)[:, None]
    masks[:] = (rank <= cut[None, :]).T
    return masks, sse[cut, cols]


def two_means(points, n_init: int = N_RESTARTS):
    """Best-inertia 2-means over ``n_init`` deterministic restarts.

    Restarts begin from the ``n_init`` best distinct threshold splits (see
    :func:`threshold_splits`) and are refined with Lloyd iterations. No random
    seeding is involved, so the result is equivariant under rotation and
    scaling of the cloud and independent of point order.
    Returns ``(points, labels, centers, inertia)``.
    """
    pts = _points(points)
    if pts.shape[0] < 2:
        raise InputError("2-means needs at least 2 points")
    masks, sse = threshold_splits(pts)
    if masks.shape[0] == 0:
        labels = (np.arange(pts.shape[0]) >= pts.shape[0] // 2).astype(np.intp)
        return (pts, *_lloyd(pts, labels, max_iter=0))
    masks = np.where(masks[:, :1], ~masks, masks)  # same partition, same mask
    _, first = np.unique(masks, axis=0, return_index=True)
    ranked = first[np.lexsort((first, sse[first]))][:n_init]
    best = None
    tol = 1e-12 * float(((pts - pts.mean(axis=0)) ** 2).sum())
    for idx in ranked:
        labels, centers, inertia = _lloyd(pts, masks[idx].astype(np.intp))
        if best is None or inertia < best[2] - tol:
            best = (labels, centers, inertia)
    labels, centers, inertia = best
    return pts, labels, centers, inertia


def bimodality_score(points, labels, centers) -> float:
    """Centre separation over the mean within-cluster RMS distance."""
    spread = []
    for k in range(2):
        members = points[labels == k]
        spread.append(np.sqrt(np.mean(((members - centers[k]) ** 2).sum(axis=1))) if len(members) else 0.0)
    return float(np.linalg.norm(centers[0] - centers[1]) / (np.mean(spread) + 1e-12))


def mode_diagnostics(cloud, n_init: int = N_RESTARTS) -> ModeDiagnostics:
    pts = _points(cloud)
    if pts.shape[0] < MIN_POINTS:
        raise InputError(f"need at least {MIN_POINTS} latent points for diagnostics, got {pts.shape[0]}")
    rotated, rotation, var1, var2, degenerate = orthogonal_decompose(pts)
    ratio = var2 / var1 if var1 > 0 else 0.0
    if degenerate:
        return ModeDiagnostics(rotation, 0.0, 0.0, 0.0, np.zeros((2, 2)), 0.0, True, pts.shape[0])
    unit = np.sqrt(var1)
    # cluster in units of the major-axis std so the score is scale free
    std_pts, labels, centers, _ = two_means(rotated / unit, n_init)
    score = bimodality_score(std_pts, labels, centers)
    order = np.argsort(centers[:, 0], kind="stable")
    return ModeDiagnostics(rotation, var1, var2, float(min(max(ratio, 0.0), 1.0)), centers[order] * unit, score,
                           False, pts.shape[0])


def classify(diag: ModeDiagnostics, tau_bimodal: float = TAU_BIMODAL, tau_ratio: float = TAU_RATIO) -> ModeLabel:
    if diag.bimodality_score >= tau_bimodal:
        return ModeLabel.MODE_III
    if diag.variance_ratio <= tau_ratio:
        return ModeLabel.MODE_I
    return ModeLabel.MODE_II


# ---------------------------------------------------------------------------
# mode map report
# ---------------------------------------------------------------------------

MODE_MAP_COLUMNS = ["case_id", "Q", "phi", "var1", "var2", "variance_ratio", "bimodality_score", "label",
                    "truth", "agree"]


@dataclass
class CaseResult:
    case_id: str
    operating_point: OperatingPoint | None
    diagnostics: ModeDiagnostics
    label: ModeLabel
    truth: ModeLabel | None = None

    @property
    def agree(self) -> bool | None:
        return None if self.truth is None else self.truth == self.label


def analyze(clouds: Sequence[LatentCloud], tau_bimodal: float = TAU_BIMODAL,
            tau_ratio: float = TAU_RATIO) -> list[CaseResult]:
    out = []
    for c in clouds:
        diag = mode_diagnostics(c)
        out.append(CaseResult(c.case_id, c.operating_point, diag, classify(diag, tau_bimodal, tau_ratio), c.truth))
    return out


def mode_map(results: Sequence[CaseResult]) -> str:
    """CSV table, one row per case; a trailing ``# accuracy`` line when truth is known."""
    if not results:
        raise InputError("mode map needs at least one case")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MODE_MAP_COLUMNS)
    for r in results:
        d = r.diagnostics
        op = r.operating_point
        w.writerow([
            r.case_id, "" if op is None else repr(op.Q), "" if op is None else repr(op.phi),
            repr(d.var1), repr(d.var2), repr(d.variance_ratio), repr(d.bimodality_score), str(r.label),
            "" if r.truth is None else str(r.truth), "" if r.agree is None else int(r.agree),
        ])
    known = [r for r in results if r.truth is not None]
    if known:
        hits = sum(r.agree for r in known)
        buf.write(f"# accuracy {hits}/{len(known)} = {hits / len(known):.4f}\n")
    return buf.getvalue()


def accuracy(results: Sequence[CaseResult]) -> tuple[int, int]:
    known = [r for r in results if r.truth is not None]
    return sum(r.agree for r in known), len(known)


_MARKER_COLOR = {ModeLabel.MODE_I: "#1f77b4", ModeLabel.MODE_II: "#ff7f0e", ModeLabel.MODE_III: "#2ca02c"}


def _marker(label: ModeLabel, x: float, y: float, r: float = 7.0) -> str:
    color = _MARKER_COLOR[label]
    if label == ModeLabel.MODE_I:
        return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.1f}" fill="{color}"/>'
    if label == ModeLabel.MODE_II:
        return f'<rect x="{x - r:.2f}" y="{y - r:.2f}" width="{2 * r:.1f}" height="{2 * r:.1f}" fill="{color}"/>'
    pts = f"{x:.2f},{y - r:.2f} {x - r:.2f},{y + r:.2f} {x + r:.2f},{y + r:.2f}"
    return f'<polygon points="{pts}" fill="{color}"/>'


def _svg_frame(width, height, title, body, xlabel, ylabel) -> str:
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">{ylabel}</text>',
        *body,
        "</svg>",
        "",
    ])


def mode_map_svg(results: Sequence[CaseResult]) -> str:
    """Scatter of cases over (phi, Q) with one marker shape per predicted mode."""
    width, height, pad = 560, 420, 60
    ops = [r.operating_point for r in results if r.operating_point is not None]
    phis = [op.phi for op in ops] or [0.0]
    qs = [op.Q for op in ops] or [0.0]
    x0, x1 = min(phis) - 0.025, max(phis) + 0.025
    y0, y1 = min(qs) - 150, max(qs) + 150

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    body = [f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>']
    for phi in sorted(set(phis)):
        body.append(f'<text x="{sx(phi):.2f}" y="{height - pad + 16}" text-anchor="middle" font-family="sans-serif" '
                    f'font-size="10">{phi:.2f}</text>')
    for q in sorted(set(qs)):
        body.append(f'<text x="{pad - 6}" y="{sy(q) + 3:.2f}" text-anchor="end" font-family="sans-serif" '
                    f'font-size="10">{q:g}</text>')
    for r in results:
        if r.operating_point is None:
            continue
        x, y = sx(r.operating_point.phi), sy(r.operating_point.Q)
        body.append(_marker(r.label, x, y))
        if r.agree is False:
            body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="11" fill="none" stroke="red" stroke-width="2"/>')
    present = sorted({r.label for r in results})
    for k, label in enumerate(present):
        ly = pad + 14 + 18 * k
        body.append(_marker(label, width - pad + 14, ly, 5))
        body.append(f'<text class="legend" x="{width - pad + 24}" y="{ly + 4}" font-family="sans-serif" '
                    f'font-size="11">Mode {label}</text>')
    hits, total = accuracy(results)
    if total:
        body.append(f'<text x="{pad}" y="{pad - 8}" font-family="sans-serif" font-size="11">'
                    f'agreement {hits}/{total}</text>')
    return _svg_frame(width + 40, height, "Mode map", body, "equivalence ratio phi", "Q (SLM)")


def cloud_svg(cloud: LatentCloud, label: ModeLabel | None = None) -> str:
    """Scatter of one latent cloud in (Z1, Z2)."""
    width, height, pad = 420, 420, 50
    pts = _points(cloud)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    sx = pad + (pts[:, 0] - lo[0]) / (hi[0] - lo[0]) * (width - 2 * pad)
    sy = height - pad - (pts[:, 1] - lo[1]) / (hi[1] - lo[1]) * (height - 2 * pad)
    color = _MARKER_COLOR.get(label, "#444444")
    body = [f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>']
    body += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>' for x, y in zip(sx, sy)]
    title = cloud.case_id if isinstance(cloud, LatentCloud) else "latent cloud"
    if label is not None:
        title += f" (Mode {label})"
    return _svg_frame(width, height, title, body, "Z1", "Z2")
