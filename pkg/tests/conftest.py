import numpy as np
import pytest

from gazeref.language import EOS, Expression
from gazeref.model import FeatureBundle, ModelConfig, init_model


def tiny_config(vocab_size=11, hidden=6, embed=5, track_len=3,
                modalities=("image", "depth", "motion", "gaze"),
                gaze_pooling="max_over_frames", patch_grid=2):
    return ModelConfig(
        vocab_size=vocab_size, embed_dim=embed, lang_hidden=hidden,
        visual_hidden=hidden, fusion_hidden=hidden, track_len=track_len,
        patch_grid=patch_grid, gaze_pooling=gaze_pooling,
        modalities=modalities)


def random_bundle(cfg, rng):
    local = {m: rng.normal(0, 0.5, (cfg.track_len, cfg.feat_dim(m)))
             for m in cfg.stream_mods}
    global_ctx = {m: rng.normal(0, 0.5, (cfg.track_len, cfg.feat_dim(m)))
                  for m in cfg.stream_mods}
    gaze_values = rng.uniform(0, 1, cfg.gaze_steps) if cfg.use_gaze else None
    return FeatureBundle(local=local, global_ctx=global_ctx,
                         spatial=rng.uniform(0, 1, 8),
                         gaze_values=gaze_values)


def random_expression(cfg, rng, max_len=6):
    n = int(rng.integers(1, max_len + 1))
    ids = list(rng.integers(4, cfg.vocab_size, n)) + [EOS]
    return Expression(raw="<random>", token_ids=[int(i) for i in ids])


def random_model(cfg, rng_seed=0):
    return init_model(cfg, seed=rng_seed)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
