import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advface.detector import DetectorModel, compute_mean_reps
from advface.distortions import DistortionSpec
from advface.featnet import FilterMask
from advface.mitigator import MitigationPlan
from advface.synthface import Dataset, DatasetItem, generate_dataset
from advface.verifybench import (
    ProtocolError,
    RocCurve,
    ScoreMatrix,
    gar_at_far,
    roc,
    run_protocol,
    score_matrix,
    write_report,
)

from oracles import gar_at_far_exhaustive, roc_exhaustive


def matrix_from_pairs(genuine_vals, impostor_vals):
    """5x5 symmetric ScoreMatrix whose genuine/impostor rates match the inputs.

    Each of the 5+5 values is placed on one unordered off-diagonal pair, so
    every value appears exactly twice; duplicating the full multiset leaves
    all FAR/GAR fractions unchanged.
    """
    assert len(genuine_vals) == 5 and len(impostor_vals) == 5
    pairs = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    scores = np.eye(5)
    mask = np.zeros((5, 5), dtype=bool)
    for (i, j), v in zip(pairs[:5], genuine_vals):
        scores[i, j] = scores[j, i] = v
        mask[i, j] = mask[j, i] = True
    for (i, j), v in zip(pairs[5:], impostor_vals):
        scores[i, j] = scores[j, i] = v
    ids = tuple(range(5))
    return ScoreMatrix(scores, mask, ids, ids)


def random_score_matrix(rng):
    n = int(rng.integers(3, 8))
    emb = rng.normal(size=(n, 4))
    scores = rng.normal(size=(n, n))
    scores = (scores + scores.T) / 2
    ids = rng.integers(0, max(2, n // 2), size=n)
    while len(np.unique(ids)) < 2:
        ids = rng.integers(0, max(2, n // 2), size=n)
    mask = ids[:, None] == ids[None, :]
    return ScoreMatrix(scores, mask, tuple(ids), tuple(ids))


class TestScoreMatrix:
    def test_counts_four_images_two_subjects(self, default_model):
        ds = generate_dataset(2, 2, 64, seed=1)
        sm = score_matrix(default_model,
                          [(it.image, it.subject_id) for it in ds.items])
        assert sm.scores.shape == (4, 4)
        off_diag = sm.scores.shape[0] * (sm.scores.shape[0] - 1)
        assert off_diag == 12
        assert len(sm.genuine_scores()) == 4
        assert len(sm.impostor_scores()) == 8

    def test_single_subject_rejected(self, default_model):
        ds = generate_dataset(2, 2, 64, seed=1)
        imgs = [(it.image, 0) for it in ds.items]
        with pytest.raises(ProtocolError, match="at least 2 subjects"):
            score_matrix(default_model, imgs)

    def test_too_few_images_rejected(self, default_model):
        ds = generate_dataset(2, 2, 64, seed=1)
        with pytest.raises(ProtocolError):
            score_matrix(default_model, [(ds.items[0].image, 0)])

    def test_duplicate_image_under_two_subjects_scores_one(self, default_model):
        img = generate_dataset(2, 2, 64, seed=1).items[0].image
        sm = score_matrix(default_model, [(img, 0), (img, 1)])
        assert sm.impostor_scores() == pytest.approx([1.0, 1.0])

    def test_symmetry(self, default_model, small_dataset):
        sm = score_matrix(default_model,
                          [(it.image, it.subject_id) for it in small_dataset.items])
        assert np.abs(sm.scores - sm.scores.T).max() < 1e-9

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shapes disagree"):
            ScoreMatrix(np.zeros((2, 2)), np.zeros((3, 3), dtype=bool), (0, 1), (0, 1))


class TestRoc:
    def test_perfect_separation(self):
        sm = matrix_from_pairs([0.9] * 5, [0.1] * 5)
        curve = roc(sm)
        assert gar_at_far(curve, 0.01) == 1.0
        # at every threshold at or below the genuine score, GAR is already 1
        assert curve.gar[curve.thresholds <= 0.9].min() == 1.0

    def test_identical_distributions_gar_tracks_far(self):
        vals = [0.1, 0.3, 0.5, 0.7, 0.9]
        curve = roc(matrix_from_pairs(vals, vals))
        assert np.allclose(curve.gar, curve.far)

    def test_hand_enumerated_example(self):
        sm = matrix_from_pairs([0.9, 0.8, 0.7, 0.6, 0.5],
                               [0.65, 0.55, 0.45, 0.35, 0.25])
        curve = roc(sm)
        expected = roc_exhaustive([0.9, 0.8, 0.7, 0.6, 0.5],
                                  [0.65, 0.55, 0.45, 0.35, 0.25])
        assert len(curve.points) == len(expected)
        for (t1, f1, g1), (t2, f2, g2) in zip(curve.points, expected):
            assert t1 == pytest.approx(t2)
            assert f1 == pytest.approx(f2)
            assert g1 == pytest.approx(g2)
        assert gar_at_far(curve, 0.2) == pytest.approx(0.8)

    def test_empty_class_rejected(self):
        scores = np.array([[1.0, 0.5], [0.5, 1.0]])
        mask = np.ones((2, 2), dtype=bool)
        with pytest.raises(ProtocolError, match="at least one genuine"):
            roc(ScoreMatrix(scores, mask, (0, 0), (0, 0)))

    @settings(max_examples=200)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_matches_exhaustive_oracle_and_is_monotone(self, seed):
        rng = np.random.default_rng(seed)
        sm = random_score_matrix(rng)
        curve = roc(sm)
        expected = roc_exhaustive(sm.genuine_scores(), sm.impostor_scores())
        assert len(curve.points) == len(expected)
        for (t1, f1, g1), (t2, f2, g2) in zip(curve.points, expected):
            assert t1 == pytest.approx(t2, abs=1e-12)
            assert f1 == pytest.approx(f2, abs=1e-12)
            assert g1 == pytest.approx(g2, abs=1e-12)
        assert (np.diff(curve.far) >= -1e-12).all()
        assert (np.diff(curve.gar) >= -1e-12).all()
        assert ((0 <= curve.far) & (curve.far <= 1)).all()
        assert ((0 <= curve.gar) & (curve.gar <= 1)).all()


class TestGarAtFar:
    def test_no_qualifying_threshold_gives_zero(self):
        # every impostor above every genuine: the loosest threshold already
        # admits 1/5 of impostors, above a 1% target
        sm = matrix_from_pairs([0.1] * 5, [0.9] * 5)
        assert gar_at_far(roc(sm), 0.01) == 0.0

    def test_far_target_validated(self):
        curve = roc(matrix_from_pairs([0.9] * 5, [0.1] * 5))
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError, match="far_target"):
                gar_at_far(curve, bad)

    @settings(max_examples=200)
    @given(seed=st.integers(0, 2**32 - 1),
           t1=st.floats(0.01, 0.99), t2=st.floats(0.01, 0.99))
    def test_non_decreasing_in_target_and_matches_oracle(self, seed, t1, t2):
        rng = np.random.default_rng(seed)
        sm = random_score_matrix(rng)
        curve = roc(sm)
        lo, hi = sorted((t1, t2))
        g_lo, g_hi = gar_at_far(curve, lo), gar_at_far(curve, hi)
        assert g_lo <= g_hi + 1e-12
        assert g_lo == pytest.approx(gar_at_far_exhaustive(
            sm.genuine_scores(), sm.impostor_scores(), lo), abs=1e-12)


class TestRelabeling:
    @settings(max_examples=200)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_permuting_subject_labels_preserves_metrics(self, seed):
        rng = np.random.default_rng(seed)
        sm = random_score_matrix(rng)
        labels = np.array(sm.probe_ids)
        perm = {old: new for new, old in enumerate(rng.permutation(np.unique(labels)))}
        relabeled = np.array([perm[v] for v in labels])
        sm2 = ScoreMatrix(sm.scores, relabeled[:, None] == relabeled[None, :],
                          tuple(relabeled), tuple(relabeled))
        assert gar_at_far(roc(sm), 0.1) == gar_at_far(roc(sm2), 0.1)


class TestProtocol:
    def test_fraction_zero_distorted_equals_original(self, default_model, small_dataset):
        rows = run_protocol(small_dataset, default_model,
                            DistortionSpec("grids", seed=1), fraction=0.0, seed=2)
        assert [r["condition"] for r in rows] == ["original", "distorted"]
        assert rows[0]["gar_at_far"] == rows[1]["gar_at_far"]

    def test_three_conditions_with_detector_and_plan(self, default_model, small_dataset):
        reps = compute_mean_reps(default_model,
                                 [it.image for it in small_dataset.items])
        n = len(reps.means)
        det = DetectorModel(np.zeros(n), 1.0, 1.0, np.zeros(n), np.ones(n), reps)
        plan = MitigationPlan(1, 0.0, FilterMask())
        rows = run_protocol(small_dataset, default_model,
                            DistortionSpec("xmsb", seed=4), det=det, plan=plan,
                            fraction=0.5, seed=2)
        assert [r["condition"] for r in rows] == ["original", "distorted", "corrected"]
        for r in rows:
            assert 0.0 <= r["gar_at_far"] <= 1.0
            assert r["n_genuine"] > 0 and r["n_impostor"] > 0

    def test_deterministic(self, default_model, small_dataset):
        args = (small_dataset, default_model, DistortionSpec("grids", seed=9))
        assert run_protocol(*args, fraction=0.5, seed=5) == \
            run_protocol(*args, fraction=0.5, seed=5)

    def test_single_subject_dataset_rejected(self, default_model, small_dataset):
        items = tuple(DatasetItem(it.image, it.landmarks, 0, i)
                      for i, it in enumerate(small_dataset.items))
        ds = Dataset(items, 0)
        with pytest.raises(ProtocolError, match="at least 2 subjects"):
            run_protocol(ds, default_model, DistortionSpec("grids"))


class TestReport:
    def test_csv_format(self, tmp_path):
        rows = [{"condition": "original", "distortion": "grids",
                 "gar_at_far": 0.8125, "far_target": 0.01,
                 "n_genuine": 10, "n_impostor": 20, "seed": 3}]
        path = tmp_path / "report.csv"
        write_report(rows, path)
        with open(path, newline="") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["condition", "distortion", "gar_at_far", "far_target",
                             "n_genuine", "n_impostor", "seed"]
        assert parsed[1] == ["original", "grids", "0.812500", "0.010000",
                             "10", "20", "3"]
