"""Verification benchmark: score matrices, ROC, GAR@FAR, distortion protocol.

All-vs-all matching: every image is compared with every other, self-matches
excluded. The protocol evaluates three conditions — original, distorted
(a fraction of images corrupted, no defense), and corrected (the corrupted
set run through detect-then-mitigate).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import distortions
from .featnet import NetworkModel, forward_batch
from .mitigator import MitigationPlan, mitigate_batch
from .imagecore import median_filter_array
from .synthface import Dataset, split_protocol


class ProtocolError(ValueError):
    """Evaluation input cannot support the verification protocol."""


@dataclass(frozen=True)
class ScoreMatrix:
    scores: np.ndarray
    genuine_mask: np.ndarray
    probe_ids: tuple[int, ...]
    gallery_ids: tuple[int, ...]

    def __post_init__(self):
        if self.scores.shape != self.genuine_mask.shape:
            raise ValueError("scores and genuine mask shapes disagree")

    def _offdiag(self) -> np.ndarray:
        return ~np.eye(self.scores.shape[0], dtype=bool)

    def genuine_scores(self) -> np.ndarray:
        return self.scores[self.genuine_mask & self._offdiag()]

    def impostor_scores(self) -> np.ndarray:
        return self.scores[~self.genuine_mask & self._offdiag()]


@dataclass(frozen=True)
class RocCurve:
    """Operating points at descending thresholds; FAR/GAR non-decreasing."""

    thresholds: np.ndarray
    far: np.ndarray
    gar: np.ndarray

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.far.tolist(), self.gar.tolist()))


def _embed_plain(model: NetworkModel, batch: np.ndarray) -> np.ndarray:
    out = []
    for lo in range(0, batch.shape[0], 256):
        emb, _ = forward_batch(model, batch[lo : lo + 256])
        out.append(emb)
    return np.vstack(out)


def pipeline_embeddings(model: NetworkModel, batch: np.ndarray,
                        det, plan: MitigationPlan) -> np.ndarray:
    """Two-stage embeddings: detect each image, mitigate the flagged ones."""
    from .detector import detect_scores

    emb = _embed_plain(model, batch)
    flags = detect_scores(det, model, batch) > 0
    if flags.any():
        emb[flags] = mitigate_batch(model, plan, batch[flags])
    return emb


def _cosine_matrix(emb: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    unit = np.divide(emb, norms, out=np.zeros_like(emb), where=norms > 0)
    return unit @ unit.T


def score_matrix(model: NetworkModel, images, plan: MitigationPlan | None = None,
                 det=None) -> ScoreMatrix:
    """All-vs-all cosine score matrix over (Image, subject_id) pairs."""
    images = list(images)
    ids = [sid for _, sid in images]
    if len(images) < 2 or len(set(ids)) < 2:
        raise ProtocolError("need at least 2 images spanning at least 2 subjects")
    batch = np.stack([im.pixels for im, _ in images])
    if det is not None and plan is not None:
        emb = pipeline_embeddings(model, batch, det, plan)
    else:
        emb = _embed_plain(model, batch)
    scores = _cosine_matrix(emb)
    labels = np.array(ids)
    genuine = labels[:, None] == labels[None, :]
    return ScoreMatrix(scores, genuine, tuple(ids), tuple(ids))


def roc(sm: ScoreMatrix) -> RocCurve:
    """Threshold sweep over all observed scores, descending."""
    gen = sm.genuine_scores()
    imp = sm.impostor_scores()
    if len(gen) == 0 or len(imp) == 0:
        raise ProtocolError("need at least one genuine and one impostor pair")
    thresholds = np.unique(np.concatenate([gen, imp]))[::-1]
    imp_sorted = np.sort(imp)
    gen_sorted = np.sort(gen)
    # count of scores >= t via binary search on the ascending-sorted arrays;
    # dividing the integer counts directly keeps the rates exact fractions
    far = (len(imp) - np.searchsorted(imp_sorted, thresholds, side="left")) / len(imp)
    gar = (len(gen) - np.searchsorted(gen_sorted, thresholds, side="left")) / len(gen)
    return RocCurve(thresholds, far, gar)


def gar_at_far(curve: RocCurve, far_target: float) -> float:
    """GAR at the best qualifying operating point (FAR <= target), no interpolation."""
    if not 0 < far_target < 1:
        raise ValueError("far_target must be in (0, 1)")
    ok = curve.far <= far_target
    if not ok.any():
        return 0.0
    return float(curve.gar[ok].max())


# ---------------------------------------------------------------------------
# 50%-distorted protocol
# ---------------------------------------------------------------------------

def _distorted_copy(ds: Dataset, spec: distortions.DistortionSpec,
                    fraction: float, seed: int):
    """(pixel batch, subject ids, distorted-index set) for the protocol split."""
    _, to_distort = split_protocol(ds, fraction, seed)
    distorted = set(to_distort)
    batch = np.empty((len(ds),) + ds.items[0].image.pixels.shape, dtype=np.uint8)
    for i, item in enumerate(ds.items):
        if i in distorted:
            out, _ = distortions.apply(distortions.per_image_spec(spec, i),
                                       item.image, item.landmarks)
            batch[i] = out.pixels
        else:
            batch[i] = item.image.pixels
    ids = np.array([it.subject_id for it in ds.items])
    return batch, ids, distorted


def _gar_from_embeddings(emb: np.ndarray, ids: np.ndarray,
                         far_target: float) -> tuple[float, int, int]:
    scores = _cosine_matrix(emb)
    genuine = ids[:, None] == ids[None, :]
    sm = ScoreMatrix(scores, genuine, tuple(ids), tuple(ids))
    curve = roc(sm)
    return (gar_at_far(curve, far_target),
            len(sm.genuine_scores()), len(sm.impostor_scores()))


def run_protocol(ds: Dataset, model: NetworkModel, spec: distortions.DistortionSpec,
                 det=None, plan: MitigationPlan | None = None,
                 fraction: float = 0.5, seed: int = 0,
                 far_target: float = 0.01) -> list[dict]:
    """Original / distorted / corrected GAR@FAR rows for one distortion."""
    clean_batch = np.stack([it.image.pixels for it in ds.items])
    ids = np.array([it.subject_id for it in ds.items])
    if len(np.unique(ids)) < 2:
        raise ProtocolError("dataset must span at least 2 subjects")

    rows = []

    def row(condition, gar, n_gen, n_imp):
        rows.append({
            "condition": condition, "distortion": spec.kind, "gar_at_far": gar,
            "far_target": far_target, "n_genuine": n_gen, "n_impostor": n_imp,
            "seed": seed,
        })

    gar, n_gen, n_imp = _gar_from_embeddings(_embed_plain(model, clean_batch),
                                             ids, far_target)
    row("original", gar, n_gen, n_imp)

    mixed, _, _ = _distorted_copy(ds, spec, fraction, seed)
    gar, n_gen, n_imp = _gar_from_embeddings(_embed_plain(model, mixed), ids, far_target)
    row("distorted", gar, n_gen, n_imp)

    if det is not None and plan is not None:
        emb = pipeline_embeddings(model, mixed, det, plan)
        gar, n_gen, n_imp = _gar_from_embeddings(emb, ids, far_target)
        row("corrected", gar, n_gen, n_imp)
    return rows


def write_report(rows, path) -> None:
    """CSV report with 6-decimal fixed-point metrics."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "distortion", "gar_at_far", "far_target",
                         "n_genuine", "n_impostor", "seed"])
        for r in rows:
            writer.writerow([r["condition"], r["distortion"],
                             f"{r['gar_at_far']:.6f}", f"{r['far_target']:.6f}",
                             r["n_genuine"], r["n_impostor"], r["seed"]])


# ---------------------------------------------------------------------------
# Split evaluation used by the mitigation grid search
# ---------------------------------------------------------------------------

def prepare_pipeline_eval(model: NetworkModel, ds: Dataset,
                          spec: distortions.DistortionSpec, det,
                          fraction: float = 0.5, seed: int = 0) -> dict:
    """Plan-independent state for repeated corrected-GAR evaluations."""
    from .detector import detect_scores

    mixed, ids, _ = _distorted_copy(ds, spec, fraction, seed)
    emb_plain = _embed_plain(model, mixed)
    flags = detect_scores(det, model, mixed) > 0
    flagged_raw = mixed[flags]
    return {
        "ids": ids,
        "emb_plain": emb_plain,
        "flags": flags,
        "flagged_raw": flagged_raw,
        "flagged_median5": median_filter_array(flagged_raw, 5),
    }


def finish_pipeline_eval(model: NetworkModel, prep: dict, plan: MitigationPlan,
                         far_target: float) -> float:
    """Corrected-condition GAR@FAR for one candidate plan."""
    emb = prep["emb_plain"].copy()
    if prep["flags"].any():
        if plan.use_median_filter and plan.median_size == 5:
            batch = prep["flagged_median5"]
        elif plan.use_median_filter:
            batch = median_filter_array(prep["flagged_raw"], plan.median_size)
        else:
            batch = prep["flagged_raw"]
        masked, _ = forward_batch(model, batch, plan.mask)
        emb[prep["flags"]] = masked
    gar, _, _ = _gar_from_embeddings(emb, prep["ids"], far_target)
    return gar
