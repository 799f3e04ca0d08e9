import numpy as np
import pytest

from hieract.dictionaries import assign_labels, kmeans
from hieract.evaluation import (DetectionCriterion, SyntheticSpec, accuracy,
                                detection_pr, interval_iou,
                                intervals_from_frames, plant_synthetic,
                                pooled_pr, spatiotemporal_pr)
from hieract.skeleton import ActionInterval


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy({"a": 1, "b": 2}, {"a": 1, "b": 2}) == 1.0

    def test_none_correct(self):
        assert accuracy({"a": 1, "b": 2}, {"a": 2, "b": 1}) == 0.0

    def test_three_of_four(self):
        preds = {"a": 0, "b": 1, "c": 2, "d": 9}
        truth = {"a": 0, "b": 1, "c": 2, "d": 3}
        assert accuracy(preds, truth) == 0.75

    def test_misaligned_ids_rejected(self):
        with pytest.raises(ValueError):
            accuracy({"a": 1}, {"b": 1})


class TestDetectionPr:
    def test_identical_sets(self):
        intervals = [ActionInterval(0, 0, 9), ActionInterval(1, 20, 29)]
        assert detection_pr(intervals, intervals) == (1.0, 1.0)

    def test_half_iou_is_a_false_positive(self):
        pred = [ActionInterval(0, 0, 9)]
        truth = [ActionInterval(0, 0, 4)]
        assert interval_iou(pred[0], truth[0]) == 0.5
        assert detection_pr(pred, truth) == (0.0, 0.0)

    def test_containment_counts(self):
        pred = [ActionInterval(0, 1, 3)]
        truth = [ActionInterval(0, 0, 9)]
        # IoU is 0.3 but the prediction is completely covered
        assert detection_pr(pred, truth) == (1.0, 1.0)

    def test_containment_can_be_disabled(self):
        pred = [ActionInterval(0, 1, 3)]
        truth = [ActionInterval(0, 0, 9)]
        criterion = DetectionCriterion(containment_counts=False)
        assert detection_pr(pred, truth, criterion) == (0.0, 0.0)

    def test_action_must_match(self):
        pred = [ActionInterval(1, 0, 9)]
        truth = [ActionInterval(0, 0, 9)]
        assert detection_pr(pred, truth) == (0.0, 0.0)

    def test_greedy_one_to_one(self):
        # two predictions over one truth: only one true positive
        pred = [ActionInterval(0, 0, 9), ActionInterval(0, 1, 8)]
        truth = [ActionInterval(0, 0, 9)]
        precision, recall = detection_pr(pred, truth)
        assert precision == 0.5
        assert recall == 1.0

    def test_empty_prediction_conventions(self):
        assert detection_pr([], []) == (1.0, 1.0)
        assert detection_pr([], [ActionInterval(0, 0, 5)]) == (0.0, 0.0)
        assert detection_pr([ActionInterval(0, 0, 5)], []) == (0.0, 0.0)

    def test_symmetry_precision_recall(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            def random_intervals():
                out = []
                for _q in range(int(rng.integers(1, 5))):
                    start = int(rng.integers(0, 40))
                    out.append(ActionInterval(int(rng.integers(0, 2)), start,
                                              start + int(rng.integers(1, 15))))
                return out

            a, b = random_intervals(), random_intervals()
            criterion = DetectionCriterion(containment_counts=False)
            pa, ra = detection_pr(a, b, criterion)
            pb, rb = detection_pr(b, a, criterion)
            assert pa == pytest.approx(rb)
            assert ra == pytest.approx(pb)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        pred = [ActionInterval(0, 0, 9), ActionInterval(1, 12, 20),
                ActionInterval(0, 25, 30)]
        truth = [ActionInterval(0, 0, 9), ActionInterval(1, 13, 20)]
        base = detection_pr(pred, truth)
        for _ in range(5):
            p = [pred[i] for i in rng.permutation(len(pred))]
            t = [truth[i] for i in rng.permutation(len(truth))]
            assert detection_pr(p, t) == base


class TestSpatioTemporalPr:
    def test_region_mismatch_is_fp(self):
        pred = [ActionInterval(0, 0, 9, region=0)]
        truth = [ActionInterval(0, 0, 9, region=1)]
        assert spatiotemporal_pr(pred, truth) == (0.0, 0.0)
        assert detection_pr(pred, truth) == (1.0, 1.0)

    def test_identical(self):
        items = [ActionInterval(0, 0, 9, region=2)]
        assert spatiotemporal_pr(items, items) == (1.0, 1.0)

    def test_mixed_two_of_three(self):
        pred = [ActionInterval(0, 0, 9, region=0),
                ActionInterval(1, 10, 19, region=1),
                ActionInterval(0, 30, 35, region=0)]
        truth = [ActionInterval(0, 0, 9, region=0),
                 ActionInterval(1, 10, 19, region=1),
                 ActionInterval(0, 30, 35, region=1)]
        precision, recall = spatiotemporal_pr(pred, truth)
        assert precision == pytest.approx(2 / 3)
        assert recall == pytest.approx(2 / 3)

    def test_pooled_over_videos(self):
        preds = {"a": [ActionInterval(0, 0, 9, region=0)],
                 "b": [ActionInterval(1, 0, 9, region=0)]}
        truths = {"a": [ActionInterval(0, 0, 9, region=0)],
                  "b": [ActionInterval(1, 0, 9, region=1)]}
        precision, recall = pooled_pr(preds, truths, match_region=True)
        assert precision == 0.5
        assert recall == 0.5


class TestIntervalsFromFrames:
    def test_runs_merge_per_region(self):
        u = np.array([[0, 1]] * 4 + [[2, 1]] * 5)
        intervals = intervals_from_frames(u, min_run=3)
        assert ActionInterval(0, 0, 3, region=0) in intervals
        assert ActionInterval(2, 4, 8, region=0) in intervals
        assert ActionInterval(1, 0, 8, region=1) in intervals

    def test_short_runs_dropped(self):
        u = np.array([[0], [0], [1], [0], [0]])
        intervals = intervals_from_frames(u, min_run=3)
        assert all(iv.action_id == 0 for iv in intervals)


class TestPlantSynthetic:
    def _spec(self, **kw):
        base = dict(num_classes=2, num_actions=2, num_actionlets=2,
                    num_poselets=3, num_regions=2, dim=5,
                    frames_range=(12, 16), videos_per_class=3, sigma=0.05,
                    seed=11, actions_per_class=1)
        base.update(kw)
        return SyntheticSpec(**base)

    def test_zero_noise_emits_exact_prototypes(self):
        ds = plant_synthetic(self._spec(sigma=0.0, pose_noise=0.0))
        for video in ds.videos:
            for r in range(2):
                np.testing.assert_array_equal(
                    video.x[:, r, :], ds.prototypes[video.z[:, r]])

    def test_nearest_prototype_decodes_planted_poses(self):
        ds = plant_synthetic(self._spec(sigma=0.0))
        for video in ds.videos:
            for r in range(2):
                labels, _ = assign_labels(video.x[:, r, :], ds.prototypes)
                np.testing.assert_array_equal(labels, video.z[:, r])

    def test_deterministic_given_seed(self):
        a = plant_synthetic(self._spec())
        b = plant_synthetic(self._spec())
        for va, vb in zip(a.videos, b.videos):
            np.testing.assert_array_equal(va.x, vb.x)
            np.testing.assert_array_equal(va.v, vb.v)
        c = plant_synthetic(self._spec(seed=12))
        assert not np.array_equal(a.videos[0].x, c.videos[0].x)

    def test_prototypes_orthonormal(self):
        ds = plant_synthetic(self._spec())
        gram = ds.prototypes @ ds.prototypes.T
        np.testing.assert_allclose(gram, np.eye(len(ds.prototypes)),
                                   atol=1e-9)

    def test_kmeans_recovers_prototypes(self):
        spec = SyntheticSpec()           # default desk-scale spec
        ds = plant_synthetic(spec)
        points = np.concatenate([v.x[:, 0, :] for v in ds.videos])
        centroids, _ = kmeans(points, spec.num_poselets, seed=0)
        # each planted prototype has a centroid within 3 sigma
        for proto in ds.prototypes:
            gap = np.linalg.norm(centroids - proto, axis=1).min()
            assert gap < 3 * spec.sigma

    def test_intervals_cover_consistent_truth(self):
        ds = plant_synthetic(self._spec())
        for video in ds.videos:
            for iv in video.intervals:
                chunk = video.u[iv.t_start:iv.t_end + 1, iv.region]
                assert (chunk == iv.action_id).all()

    def test_noise_injection_marks_frames(self):
        ds = plant_synthetic(self._spec(noise_frame_fraction=0.3))
        total = sum(v.noise_mask.sum() for v in ds.videos)
        frames = sum(v.noise_mask.size for v in ds.videos)
        assert 0.15 < total / frames < 0.45

    def test_separability_guard(self):
        with pytest.raises(ValueError, match="sigma"):
            self._spec(sigma=0.5)
