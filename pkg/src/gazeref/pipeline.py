"""Glue between scene records and the model: per-candidate feature bundle
extraction and training-set preparation.
"""

import numpy as np

from .features import (CameraGeom, Track, assemble_track_features,
                       depth_to_hha, full_image_box, patch_feature,
                       spatial_feature)
from .gaze import GazeConfig, gaze_feature
from .model import FeatureBundle
from .proposals import build_tracks, CandidateSet


def scene_camera(scene):
    """Ground-plane geometry used for the HHA encoding of synthetic scenes."""
    return CameraGeom(focal_px=120.0, baseline_m=0.3,
                      horizon_row=float(scene.image_h),
                      meters_per_unit=1.0, h_max_m=20.0, max_disparity=8.0)


class ScenePrep:
    """Per-scene caches shared by all candidates: HHA frames and the
    global (full-image) feature sequences."""

    def __init__(self, scene, cfg, camera=None):
        self.scene = scene
        self.cfg = cfg
        camera = camera or scene_camera(scene)
        self.hha = [depth_to_hha(fr.depth, camera) for fr in scene.frames]
        full = full_image_box(scene.image_w, scene.image_h)
        full_track = Track(boxes=[full] * scene.frame_count)
        self.global_ctx = {
            mod: np.stack(self._track_features(mod, full_track))
            for mod in cfg.stream_mods
        }
        self.gaze_cfg = GazeConfig(sigma_frac=cfg.sigma_frac,
                                   pooling=cfg.gaze_pooling)

    def _channel(self, mod, frame_index):
        if mod == "image":
            return self.scene.frames[frame_index].appearance
        if mod == "depth":
            return self.hha[frame_index]
        return self.scene.frames[frame_index].flow

    def _track_features(self, mod, track):
        indices = list(range(self.scene.frame_count))

        def extractor(frame_index, box):
            return patch_feature(self._channel(mod, frame_index), box,
                                 self.cfg.patch_grid)

        return assemble_track_features(indices, track, extractor,
                                       self.cfg.track_len)

    def bundle(self, track):
        """FeatureBundle for one candidate track."""
        cfg = self.cfg
        scene = self.scene
        local = {mod: np.stack(self._track_features(mod, track))
                 for mod in cfg.stream_mods}
        gaze_values = None
        if cfg.use_gaze:
            ts = scene.frame_timestamps[-cfg.track_len:]
            gaze_values = np.asarray(gaze_feature(
                scene.trace, track, ts, scene.image_w, scene.image_h,
                self.gaze_cfg))
        return FeatureBundle(
            local=local,
            global_ctx=self.global_ctx,
            spatial=spatial_feature(track.boxes[-1], scene.image_w,
                                    scene.image_h),
            gaze_values=gaze_values,
        ).validate(cfg)


def candidate_tracks(scene, candidates):
    return build_tracks(candidates, scene.scripted_motion(),
                        scene.frame_count, scene.image_w, scene.image_h)


def gt_bundle(scene, cfg, camera=None):
    """Bundle for the annotated ground-truth box (training positives)."""
    prep = ScenePrep(scene, cfg, camera)
    track = candidate_tracks(scene, CandidateSet(boxes=[scene.gt_box]))[0]
    return prep.bundle(track)


def training_samples(scenes, cfg, vocab):
    """(bundle, expression) pairs from ground-truth annotations."""
    return [(gt_bundle(scene, cfg), vocab.expression(scene.expression_text))
            for scene in scenes]
