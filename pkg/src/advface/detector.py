"""Distorted-input detection from hidden-layer activation statistics.

Clean training images define a per-layer mean activation vector. Any image is
then summarized by one Canberra distance per tapped layer between its
activations and those means; a linear max-margin classifier over the
z-scored distance vector separates clean from distorted inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import FormatError, Image
from .featnet import FilterMask, NetworkModel, forward_batch
from .seeds import rng_from

_MREP_MAGIC = b"MREP1"
_STD_FLOOR = 1e-8

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class MeanReps:
    """Mean activation vector per tapped layer over a clean training corpus."""

    means: tuple[np.ndarray, ...]
    n_train: int

    def __post_init__(self):
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")


@dataclass(frozen=True)
class DetectorModel:
    w: np.ndarray
    b: float
    C: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    mean_reps: MeanReps

    @property
    def n_layers(self) -> int:
        return len(self.w)


def _stack_batch(images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        return images
    return np.stack([im.pixels for im in images])


def compute_mean_reps(model: NetworkModel, clean_images) -> MeanReps:
    """Elementwise average of tapped activations over the clean corpus."""
    batch = _stack_batch(clean_images)
    if batch.shape[0] < 1:
        raise ValueError("need at least one clean image")
    sums = None
    n = batch.shape[0]
    for lo in range(0, n, 256):
        _, taps = forward_batch(model, batch[lo : lo + 256])
        part = [t.astype(np.float64).sum(axis=0) for t in taps]
        sums = part if sums is None else [s + p for s, p in zip(sums, part)]
    return MeanReps(tuple(s / n for s in sums), n)


def canberra(a: np.ndarray, b: np.ndarray) -> float:
    """Canberra distance with 0/0 terms counted as 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    denom = np.abs(a) + np.abs(b)
    num = np.abs(a - b)
    return float(np.sum(np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)))


def canberra_features_batch(model: NetworkModel, mean_reps: MeanReps,
                            images, mask: FilterMask | None = None) -> np.ndarray:
    """(N, n_taps) matrix of per-layer Canberra distances to the clean means."""
    batch = _stack_batch(images)
    out = np.empty((batch.shape[0], len(mean_reps.means)))
    for lo in range(0, batch.shape[0], 256):
        _, taps = forward_batch(model, batch[lo : lo + 256], mask)
        for i, (t, mu) in enumerate(zip(taps, mean_reps.means)):
            t = t.astype(np.float64)
            if t.shape[1] != mu.shape[0]:
                raise ValueError(f"tap {i} length {t.shape[1]} != mean length {mu.shape[0]}")
            denom = np.abs(t) + np.abs(mu)[None, :]
            num = np.abs(t - mu[None, :])
            terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
            out[lo : lo + t.shape[0], i] = terms.sum(axis=1)
    return out


def canberra_features(model: NetworkModel, mean_reps: MeanReps, img: Image) -> np.ndarray:
    return canberra_features_batch(model, mean_reps, [img])[0]


# ---------------------------------------------------------------------------
# Linear soft-margin classifier (L2-regularized hinge, monotone full-batch descent)
# ---------------------------------------------------------------------------

def hinge_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, C: float) -> float:
    margins = 1.0 - y * (x @ w + b)
    return 0.5 * float(w @ w) + C * float(np.maximum(margins, 0.0).sum())


def _fit_hinge(x: np.ndarray, y: np.ndarray, C: float,
               epochs: int = 300) -> tuple[np.ndarray, float]:
    """Full-batch subgradient descent with backtracking; objective never increases."""
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    step = 1.0 / (C * n + 1.0)
    f = hinge_objective(w, b, x, y, C)
    for _ in range(epochs):
        margins = 1.0 - y * (x @ w + b)
        active = margins > 0
        gw = w - C * (y[active, None] * x[active]).sum(axis=0)
        gb = -C * float(y[active].sum())
        accepted = False
        for _ in range(60):
            w_new = w - step * gw
            b_new = b - step * gb
            f_new = hinge_objective(w_new, b_new, x, y, C)
            if f_new <= f:
                w, b, f = w_new, b_new, f_new
                step *= 1.3
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return w, b


def _fold_assignments(n: int, k: int, seed: int) -> np.ndarray:
    perm = rng_from(seed, 0xF01D).permutation(n)
    folds = np.empty(n, dtype=int)
    folds[perm] = np.arange(n) % k
    return folds


def train_detector(model: NetworkModel, mean_reps: MeanReps, clean, distorted,
                   C_grid=DEFAULT_C_GRID, seed: int = 0,
                   features: tuple[np.ndarray, np.ndarray] | None = None) -> DetectorModel:
    """Fit the clean/distorted classifier with 5-fold cross-validated C.

    `features` optionally supplies precomputed (clean, distorted) Canberra
    feature matrices to skip the forward passes.
    """
    if features is not None:
        fc, fd = features
    else:
        if len(clean) == 0 or len(distorted) == 0:
            raise ValueError("both classes must be non-empty")
        fc = canberra_features_batch(model, mean_reps, clean)
        fd = canberra_features_batch(model, mean_reps, distorted)
    if fc.shape[0] == 0 or fd.shape[0] == 0:
        raise ValueError("both classes must be non-empty")
    for name, f in (("clean", fc), ("distorted", fd)):
        bad = ~np.isfinite(f)
        if bad.any():
            raise ValueError(f"non-finite feature for {name} image "
                             f"{int(np.argwhere(bad.any(axis=1))[0][0])}")
    x = np.vstack([fc, fd])
    y = np.concatenate([-np.ones(fc.shape[0]), np.ones(fd.shape[0])])

    feat_mean = x.mean(axis=0)
    feat_std = np.maximum(x.std(axis=0), _STD_FLOOR)
    xn = (x - feat_mean) / feat_std

    C_grid = list(C_grid)
    if not C_grid:
        raise ValueError("C grid must be non-empty")
    folds = _fold_assignments(len(y), 5, seed)
    best_C, best_acc = None, -1.0
    for C in sorted(C_grid):
        accs = []
        for f in range(5):
            tr, te = folds != f, folds == f
            if te.sum() == 0 or len(np.unique(y[tr])) < 2:
                continue
            w, b = _fit_hinge(xn[tr], y[tr], C)
            pred = np.where(xn[te] @ w + b > 0, 1.0, -1.0)
            accs.append(float((pred == y[te]).mean()))
        acc = float(np.mean(accs)) if accs else 0.0
        if acc > best_acc:  # grid iterated ascending, so ties keep the smaller C
            best_acc, best_C = acc, C
    w, b = _fit_hinge(xn, y, best_C)
    return DetectorModel(w, float(b), float(best_C), feat_mean, feat_std, mean_reps)


def detect_scores(det: DetectorModel, model: NetworkModel, images) -> np.ndarray:
    feats = canberra_features_batch(model, det.mean_reps, images)
    xn = (feats - det.feat_mean) / det.feat_std
    return xn @ det.w + det.b


def detect(det: DetectorModel, model: NetworkModel, img: Image) -> tuple[float, str]:
    """Score one image; verdict is 'distorted' iff score > 0."""
    score = float(detect_scores(det, model, [img])[0])
    return score, ("distorted" if score > 0 else "clean")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_mean_reps(reps: MeanReps, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MREP_MAGIC)
        fh.write(struct.pack("<II", len(reps.means), reps.n_train))
        for mu in reps.means:
            fh.write(struct.pack("<I", len(mu)))
            fh.write(np.asarray(mu, "<f8").tobytes())


def load_mean_reps(path) -> MeanReps:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:5] != _MREP_MAGIC:
        raise FormatError('bad magic, expected "MREP1"')
    pos = 5
    try:
        n_layers, n_train = struct.unpack_from("<II", buf, pos)
        pos += 8
        means = []
        for i in range(n_layers):
            (length,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            end = pos + 8 * length
            if end > len(buf):
                raise FormatError(f"truncated mean file at layer {i}")
            means.append(np.frombuffer(buf[pos:end], "<f8").copy())
            pos = end
    except struct.error as exc:
        raise FormatError(f"truncated mean file header: {exc}") from None
    return MeanReps(tuple(means), n_train)


def save_detector(det: DetectorModel, path, mean_reps_path) -> None:
    save_mean_reps(det.mean_reps, mean_reps_path)
    doc = {
        "w": det.w.tolist(),
        "b": det.b,
        "C": det.C,
        "feat_mean": det.feat_mean.tolist(),
        "feat_std": det.feat_std.tolist(),
        "n_layers": det.n_layers,
        "mean_reps_path": str(mean_reps_path),
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_detector(path) -> DetectorModel:
    doc = json.loads(Path(path).read_text())
    reps = load_mean_reps(doc["mean_reps_path"])
    return DetectorModel(np.array(doc["w"]), doc["b"], doc["C"],
                         np.array(doc["feat_mean"]), np.array(doc["feat_std"]), reps)
