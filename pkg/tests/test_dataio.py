import filecmp
import json
import os

import numpy as np
import pytest

from gazeref.dataio import (RULE_ASCII, RULE_MIN_WORDS, SyntheticSpec,
                            export_dataset, generate_synthetic,
                            load_manifest, split_dataset,
                            validate_expression)
from gazeref.errors import DataError, GenerationError
from gazeref.features import box_iou
from gazeref.model import ModelConfig
from gazeref.pipeline import ScenePrep, candidate_tracks
from gazeref.proposals import CandidateSet


class TestValidateExpression:
    def test_too_few_words(self):
        report = validate_expression("a red car")
        assert not report.passed
        assert any(r == RULE_MIN_WORDS for r, _ in report.violations)

    def test_five_word_pass(self):
        assert validate_expression(
            "a red car is parked near the tree").passed

    def test_non_ascii(self):
        report = validate_expression("ein rotes Auto überholt uns schnell")
        assert not report.passed
        assert any(r == RULE_ASCII for r, _ in report.violations)

    def test_pass_iff_no_violations(self):
        for text in ("", "a b c d e", "uno dos"):
            report = validate_expression(text)
            assert report.passed == (not report.violations)


def small_spec(**kw):
    defaults = dict(num_scenes=4, num_candidates=6)
    defaults.update(kw)
    return SyntheticSpec(**defaults)


class TestGenerateSynthetic:
    def test_deterministic_export(self, tmp_path):
        for run in ("a", "b"):
            ds = generate_synthetic(small_spec(ambiguity="mixed"), seed=5)
            export_dataset(ds, tmp_path / run)
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")

        def assert_equal(c):
            assert not c.diff_files and not c.left_only and not c.right_only
            for sub in c.subdirs.values():
                assert_equal(sub)

        assert_equal(cmp)
        # content equality, not just metadata
        for root, _, files in os.walk(tmp_path / "a"):
            for f in files:
                pa = os.path.join(root, f)
                pb = pa.replace(str(tmp_path / "a"), str(tmp_path / "b"))
                assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_expressions_pass_qc(self):
        ds = generate_synthetic(small_spec(ambiguity="mixed"), seed=1)
        for scene in ds:
            assert validate_expression(scene.expression_text).passed

    def test_planted_positive_and_twin(self):
        ds = generate_synthetic(small_spec(ambiguity="motion-only"), seed=2)
        for scene in ds:
            ious = [box_iou(b, scene.gt_box) for b in scene.candidates.boxes]
            assert sum(v >= 0.5 for v in ious) == 1
            twin = next(o for o in scene.objects if o.role == "twin")
            assert any(b.as_tuple() == twin.box.as_tuple()
                       for b in scene.candidates.boxes)

    @pytest.mark.parametrize("mode,masked", [
        ("motion-only", "motion"),
        ("depth-only", "depth"),
        ("gaze-only", "gaze"),
    ])
    def test_ambiguity_feature_equality(self, mode, masked):
        # with the ambiguous modality masked, target and twin local
        # features must be identical
        ds = generate_synthetic(small_spec(ambiguity=mode), seed=3)
        cfg = ModelConfig(vocab_size=4, track_len=4, patch_grid=2,
                          lang_hidden=4, visual_hidden=4, fusion_hidden=4,
                          embed_dim=4)
        for scene in ds:
            target = next(o for o in scene.objects if o.role == "target")
            twin = next(o for o in scene.objects if o.role == "twin")
            prep = ScenePrep(scene, cfg)
            tracks = candidate_tracks(
                scene, CandidateSet(boxes=[target.box, twin.box]))
            bt = prep.bundle(tracks[0])
            bd = prep.bundle(tracks[1])
            for mod in ("image", "depth", "motion"):
                if mod == masked:
                    continue
                np.testing.assert_allclose(bt.local[mod], bd.local[mod],
                                           atol=1e-6)

    def test_unsatisfiable_spec(self):
        with pytest.raises(GenerationError):
            SyntheticSpec(num_scenes=1, image_w=10, image_h=10)


class TestSplitDataset:
    def test_80_20(self):
        ds = list(range(10))
        train, held = split_dataset(ds, 0.8, seed=0)
        assert len(train) == 8 and len(held) == 2

    def test_disjoint_exhaustive(self):
        ds = list(range(13))
        train, held = split_dataset(ds, 0.8, seed=1)
        assert set(train) | set(held) == set(ds)
        assert not set(train) & set(held)

    def test_seed_deterministic(self):
        ds = list(range(9))
        assert split_dataset(ds, 0.8, 4) == split_dataset(ds, 0.8, 4)
        assert split_dataset(ds, 0.8, 4) != split_dataset(ds, 0.8, 5)


class TestManifest:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(small_spec(ambiguity="depth-only"), seed=7)
        path = export_dataset(ds, tmp_path / "out")
        loaded = load_manifest(path)
        assert len(loaded) == len(ds)
        for a, b in zip(ds, loaded):
            assert a.scene_id == b.scene_id
            assert a.expression_text == b.expression_text
            assert a.gt_box.as_tuple() == b.gt_box.as_tuple()
            assert len(b.objects) == len(a.objects)
            for fa, fb in zip(a.frames, b.frames):
                np.testing.assert_array_equal(fa.appearance, fb.appearance)
                np.testing.assert_array_equal(fa.depth, fb.depth)
                np.testing.assert_array_equal(fa.flow, fb.flow)
            assert [x.as_tuple() for x in a.candidates.boxes] == \
                [x.as_tuple() for x in b.candidates.boxes]

    def test_qc_failure_names_scene(self, tmp_path):
        ds = generate_synthetic(small_spec(), seed=8)
        path = export_dataset(ds, tmp_path / "out")
        doc = json.load(open(path))
        doc["scenes"][1]["expression"] = "a car"
        json.dump(doc, open(path, "w"))
        with pytest.raises(DataError, match="scene_0001"):
            load_manifest(path)

    def test_missing_file_reported(self, tmp_path):
        ds = generate_synthetic(small_spec(), seed=9)
        path = export_dataset(ds, tmp_path / "out")
        os.remove(tmp_path / "out" / "scene_0000" / "gaze.json")
        with pytest.raises(FileNotFoundError, match="gaze.json"):
            load_manifest(path)
