"""Scene-generator tests: construction guarantees and the cross-module
annotation oracle."""

import numpy as np
import pytest

from handseg.annotate import annotate_frame, crop_depth_range
from handseg.metrics import ConfusionMatrix, pixel_accuracy
from handseg.synth import (
    Frame,
    inject_color_noise,
    inject_sliver,
    synth_dataset,
    synth_frame,
)


@pytest.fixture(scope="module")
def frames():
    return synth_dataset(24, 64, rng=11)


class TestConstruction:
    def test_labels_are_three_valued(self, frames):
        for f in frames:
            assert set(np.unique(f.label)) <= {0, 1, 2}

    def test_both_classes_present(self, frames):
        for f in frames:
            assert (f.label == 1).any() and (f.label == 2).any()

    def test_background_has_no_depth_return(self, frames):
        for f in frames:
            np.testing.assert_array_equal(f.depth > 0, f.label > 0)

    def test_hand_within_crop_range_of_nearest_depth(self, frames):
        for f in frames:
            d_min = f.depth[f.depth > 0].min()
            hand_depths = f.depth[f.label == 1]
            assert np.all(hand_depths <= d_min + 160)
            # the whole scene survives the depth crop
            fg = crop_depth_range(f.depth)
            np.testing.assert_array_equal(fg, f.label > 0)

    def test_object_behind_hand_by_at_most_120mm(self, frames):
        for f in frames:
            hand_med = np.median(f.depth[f.label == 1])
            obj = f.depth[f.label == 2].astype(np.float64)
            assert np.all(obj > hand_med)
            assert np.all(obj - hand_med <= 120 + 25)  # plus hand-plane tilt

    def test_contact_share_at_least_ten_percent(self, frames):
        share = np.mean([f.contact for f in frames])
        assert share >= 0.10

    def test_contact_flag_matches_geometry(self):
        rng = np.random.default_rng(5)
        f = synth_frame(64, rng, force_contact=True)
        assert f.contact

    def test_deterministic_given_seed(self):
        a = synth_dataset(5, 64, rng=3)
        b = synth_dataset(5, 64, rng=3)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.depth, fb.depth)
            np.testing.assert_array_equal(fa.color, fb.color)
            np.testing.assert_array_equal(fa.label, fb.label)

    def test_rejects_empty_request(self):
        with pytest.raises(ValueError):
            synth_dataset(0)


class TestAnnotationCrossCheck:
    def test_clean_frames_annotate_to_generated_labels(self, frames):
        cm = ConfusionMatrix()
        for f in frames[:10]:
            cm.accumulate(annotate_frame(f.depth, f.color), f.label)
        assert pixel_accuracy(cm) >= 0.99


class TestInjection:
    def test_noise_respects_avoid_mask(self, frames):
        rng = np.random.default_rng(21)
        avoid = np.zeros((64, 64), dtype=bool)
        avoid[:, :32] = True
        noisy = inject_color_noise(frames[0], rng, n_pixels=12, avoid=avoid)
        changed = np.argwhere((noisy.color != frames[0].color).any(axis=2))
        assert len(changed) > 0
        assert np.all(changed[:, 1] >= 32)

    def test_sliver_lands_on_background_with_clearance(self, frames):
        rng = np.random.default_rng(22)
        for f in frames[:8]:
            g, sliver = inject_sliver(f, rng)
            assert not (f.label[sliver] > 0).any()
            assert np.all(g.depth[sliver] > 0)
            # clearance: no hand pixel within Chebyshev distance 4
            hr, hc = np.nonzero(f.label == 1)
            sr, sc = np.nonzero(sliver)
            dmin = min(np.max(np.abs([r - hr, c - hc]), axis=0).min()
                       for r, c in zip(sr[::7], sc[::7]))
            assert dmin >= 4

    def test_sliver_compactness_exceeds_default_threshold(self, frames):
        rng = np.random.default_rng(23)
        _, sliver = inject_sliver(frames[0], rng)
        area = sliver.sum()
        length = max(sliver.sum(axis=0).max(), sliver.sum(axis=1).max())
        perimeter = 2 * length + 2
        assert perimeter ** 2 / area > 64

    def test_sliver_removed_by_annotation(self, frames):
        rng = np.random.default_rng(24)
        for f in frames[:8]:
            g, sliver = inject_sliver(f, rng)
            auto = annotate_frame(g.depth, g.color)
            assert not (auto[sliver] == 1).any()
