"""The full referring network: per-modality recurrent encoders, language
encoder, local/global fusion recurrences, word prediction, candidate
scoring, and training with exact backpropagation through time.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import gaze as gaze_mod
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .features import load_features, save_features
from .language import encode_expression
from .numkit import (AdamHyper, AdamState, LstmGrads, LstmParams, LstmState,
                     adam_step, check_finite, clip_gradients, init_lstm,
                     lstm_sequence, lstm_sequence_backward, lstm_step,
                     softmax, zero_grads_like)

VISUAL_MODALITIES = ("image", "depth", "motion")
SPATIAL_DIM = 8


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    lang_hidden: int = 64
    visual_hidden: int = 64
    fusion_hidden: int = 64
    track_len: int = 8
    patch_grid: int = 4
    gaze_pooling: str = gaze_mod.POOL_MAX
    sigma_frac: float = 0.10
    modalities: tuple = ("image", "depth", "motion", "gaze")

    def __post_init__(self):
        if "image" not in self.modalities:
            raise ConfigError("the image modality is required")
        for m in self.modalities:
            if m not in VISUAL_MODALITIES + ("gaze",):
                raise ConfigError(f"unknown modality {m!r}")
        if self.gaze_pooling not in gaze_mod.POOL_MODES:
            raise ConfigError(f"unknown gaze pooling {self.gaze_pooling!r}")
        if min(self.vocab_size, self.embed_dim, self.lang_hidden,
               self.visual_hidden, self.fusion_hidden, self.track_len,
               self.patch_grid) < 1:
            raise ConfigError("all dimensions must be positive")

    @property
    def stream_mods(self):
        return tuple(m for m in VISUAL_MODALITIES if m in self.modalities)

    @property
    def use_gaze(self):
        return "gaze" in self.modalities

    def feat_dim(self, mod):
        channels = {"image": 3, "depth": 3, "motion": 2}[mod]
        return self.patch_grid * self.patch_grid * channels * 2

    @property
    def gaze_steps(self):
        if self.gaze_pooling == gaze_mod.POOL_TIMESTAMP:
            return self.track_len
        return 1

    @property
    def local_segments(self):
        """(name, size) layout of the local fusion input vector."""
        segs = [("lang", self.lang_hidden)]
        segs += [(f"{m}_local", self.visual_hidden) for m in self.stream_mods]
        if self.use_gaze:
            segs.append(("gaze", self.visual_hidden))
        segs.append(("spatial", SPATIAL_DIM))
        return segs

    @property
    def global_segments(self):
        segs = [("lang", self.lang_hidden)]
        segs += [(f"{m}_global", self.visual_hidden) for m in self.stream_mods]
        return segs

    @property
    def local_input_dim(self):
        return sum(s for _, s in self.local_segments)

    @property
    def global_input_dim(self):
        return sum(s for _, s in self.global_segments)

    def lstm_groups(self):
        """name -> (input_dim, hidden_dim) for every recurrent group."""
        groups = {"lang": (self.embed_dim, self.lang_hidden)}
        for m in self.stream_mods:
            groups[f"{m}_local"] = (self.feat_dim(m), self.visual_hidden)
            groups[f"{m}_global"] = (self.feat_dim(m), self.visual_hidden)
        if self.use_gaze:
            groups["gaze"] = (1, self.visual_hidden)
        groups["fusion_local"] = (self.local_input_dim, self.fusion_hidden)
        groups["fusion_global"] = (self.global_input_dim, self.fusion_hidden)
        return groups

    def to_dict(self):
        d = dict(self.__dict__)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["modalities"] = tuple(d["modalities"])
        return cls(**d)


@dataclass
class FeatureBundle:
    """Per-candidate input sequences for one scene.

    local/global_ctx map modality -> (track_len, feat_dim) arrays;
    gaze_values holds the raw per-step pooled gaze confidences (or None);
    spatial is the 8-vector box configuration.
    """
    local: dict
    global_ctx: dict
    spatial: np.ndarray
    gaze_values: np.ndarray = None

    def validate(self, cfg):
        for m in cfg.stream_mods:
            for side, table in (("local", self.local),
                                ("global", self.global_ctx)):
                if m not in table:
                    raise ConfigError(f"bundle missing {side} {m} stream")
                seq = table[m]
                want = (cfg.track_len, cfg.feat_dim(m))
                if seq.shape != want:
                    raise DimensionError(
                        f"{side} {m} sequence shape {seq.shape} != {want}")
        if cfg.use_gaze:
            if self.gaze_values is None:
                raise ConfigError("bundle missing gaze values")
            if self.gaze_values.shape != (cfg.gaze_steps,):
                raise DimensionError(
                    f"gaze values shape {self.gaze_values.shape} != "
                    f"{(cfg.gaze_steps,)}")
        if self.spatial.shape != (SPATIAL_DIM,):
            raise DimensionError("spatial feature must be an 8-vector")
        return self


@dataclass
class ORModel:
    """Configuration plus the flat parameter map (name -> array)."""
    config: ModelConfig
    values: dict

    def lstm(self, group):
        inp, hid = self.config.lstm_groups()[group]
        return LstmParams(inp, hid, self.values[f"{group}.W_x"],
                          self.values[f"{group}.W_h"],
                          self.values[f"{group}.b"])


def init_model(cfg, seed=0):
    rng = np.random.default_rng(seed)
    values = {}
    a = 1.0 / np.sqrt(cfg.embed_dim)
    values["embed"] = rng.uniform(-a, a, (cfg.vocab_size, cfg.embed_dim))
    for name, (inp, hid) in cfg.lstm_groups().items():
        p = init_lstm(inp, hid, rng)
        values[f"{name}.W_x"] = p.W_x
        values[f"{name}.W_h"] = p.W_h
        values[f"{name}.b"] = p.b
    a = 1.0 / np.sqrt(cfg.fusion_hidden)
    values["w_local"] = rng.uniform(-a, a, (cfg.vocab_size, cfg.fusion_hidden))
    values["w_global"] = rng.uniform(-a, a,
                                     (cfg.vocab_size, cfg.fusion_hidden))
    values["r"] = np.zeros(cfg.vocab_size)
    return ORModel(config=cfg, values=values)


# --- forward ---------------------------------------------------------------

@dataclass
class _VisualCache:
    caches: dict = field(default_factory=dict)


def encode_visuals(model, bundle):
    """Final hidden state of each per-modality encoder.

    Returns (features, cache); features maps segment names (image_local,
    ..., gaze, spatial) to vectors.
    """
    cfg = model.config
    bundle.validate(cfg)
    feats = {}
    vc = _VisualCache()
    for m in cfg.stream_mods:
        for side, table in (("local", bundle.local),
                            ("global", bundle.global_ctx)):
            name = f"{m}_{side}"
            states, caches = lstm_sequence(list(table[m]), model.lstm(name))
            feats[name] = states[-1].h
            vc.caches[name] = caches
    if cfg.use_gaze:
        xs = [np.array([v]) for v in bundle.gaze_values]
        states, caches = lstm_sequence(xs, model.lstm("gaze"))
        feats["gaze"] = states[-1].h
        vc.caches["gaze"] = caches
    feats["spatial"] = np.asarray(bundle.spatial, dtype=np.float64)
    return feats, vc


@dataclass
class _ForwardCache:
    feats: dict
    visual: _VisualCache
    lang_caches: list
    local_caches: list
    global_caches: list
    h_local: list
    h_global: list
    probs: np.ndarray
    expr: object


def _fusion_const(cfg, feats, segments):
    # everything after the leading language slot is constant across steps
    return np.concatenate([feats[name] for name, _ in segments[1:]])


def forward_words(model, bundle, expr):
    """Next-word probability rows for one candidate and expression.

    Row n is the distribution over the vocabulary predicting target n
    (content words then <eos>); one row per target. Returns
    (probs, cache).
    """
    cfg = model.config
    feats, vc = encode_visuals(model, bundle)
    lang_states, lang_caches = encode_expression(
        expr, model.values["embed"], model.lstm("lang"))
    local_const = _fusion_const(cfg, feats, cfg.local_segments)
    global_const = _fusion_const(cfg, feats, cfg.global_segments)
    p_local = model.lstm("fusion_local")
    p_global = model.lstm("fusion_global")
    st_l = LstmState.zeros(cfg.fusion_hidden)
    st_g = LstmState.zeros(cfg.fusion_hidden)
    n_rows = len(expr.target_ids)
    h_local, h_global = [], []
    local_caches, global_caches = [], []
    probs = np.empty((n_rows, cfg.vocab_size))
    w_l, w_g, r = (model.values["w_local"], model.values["w_global"],
                   model.values["r"])
    for n in range(n_rows):
        x_l = np.concatenate([lang_states[n].h, local_const])
        x_g = np.concatenate([lang_states[n].h, global_const])
        st_l, cache_l = lstm_step(x_l, st_l, p_local)
        st_g, cache_g = lstm_step(x_g, st_g, p_global)
        local_caches.append(cache_l)
        global_caches.append(cache_g)
        h_local.append(st_l.h)
        h_global.append(st_g.h)
        probs[n] = softmax(w_l @ st_l.h + w_g @ st_g.h + r)
    cache = _ForwardCache(feats, vc, lang_caches, local_caches,
                          global_caches, h_local, h_global, probs, expr)
    return probs, cache


@dataclass
class CandidateScore:
    index: int
    log_score: float


def score_candidate(model, bundle, expr, index=0):
    """Log generative probability of the expression given the candidate."""
    probs, _ = forward_words(model, bundle, expr)
    log_score = float(sum(np.log(probs[n, t])
                          for n, t in enumerate(expr.target_ids)))
    return CandidateScore(index=index, log_score=log_score)


def rank_candidates(model, bundles, expr):
    """Candidates sorted by descending log score, ties to the lower index."""
    if not bundles:
        raise ContractError("empty candidate list")
    scores = [score_candidate(model, b, expr, i)
              for i, b in enumerate(bundles)]
    return sorted(scores, key=lambda s: (-s.log_score, s.index))


# --- backward --------------------------------------------------------------

def _split_segments(vec, segments):
    out = {}
    pos = 0
    for name, size in segments:
        out[name] = vec[pos:pos + size]
        pos += size
    return out


def sample_loss_and_grads(model, bundle, expr):
    """Mean per-token NLL of the expression and exact parameter gradients."""
    cfg = model.config
    probs, fc = forward_words(model, bundle, expr)
    targets = expr.target_ids
    n_rows = len(targets)
    loss = -float(np.mean([np.log(probs[n, t])
                           for n, t in enumerate(targets)]))
    grads = zero_grads_like(model.values)

    dh_local = [None] * n_rows
    dh_global = [None] * n_rows
    for n, t in enumerate(targets):
        dlogit = probs[n].copy()
        dlogit[t] -= 1.0
        dlogit /= n_rows
        grads["w_local"] += np.outer(dlogit, fc.h_local[n])
        grads["w_global"] += np.outer(dlogit, fc.h_global[n])
        grads["r"] += dlogit
        dh_local[n] = model.values["w_local"].T @ dlogit
        dh_global[n] = model.values["w_global"].T @ dlogit

    def lstm_accum(group):
        return LstmGrads(grads[f"{group}.W_x"], grads[f"{group}.W_h"],
                         grads[f"{group}.b"])

    dx_local, _ = lstm_sequence_backward(fc.local_caches, dh_local,
                                         lstm_accum("fusion_local"))
    dx_global, _ = lstm_sequence_backward(fc.global_caches, dh_global,
                                          lstm_accum("fusion_global"))

    dh_lang = [np.zeros(cfg.lang_hidden) for _ in range(n_rows)]
    dfeat = {name: np.zeros(size)
             for name, size in cfg.local_segments + cfg.global_segments
             if name != "lang"}
    for n in range(n_rows):
        parts = _split_segments(dx_local[n], cfg.local_segments)
        dh_lang[n] += parts["lang"]
        for name, _ in cfg.local_segments[1:]:
            dfeat[name] += parts[name]
        parts = _split_segments(dx_global[n], cfg.global_segments)
        dh_lang[n] += parts["lang"]
        for name, _ in cfg.global_segments[1:]:
            dfeat[name] += parts[name]

    dx_lang, _ = lstm_sequence_backward(fc.lang_caches, dh_lang,
                                        lstm_accum("lang"))
    for token_id, dx in zip(expr.lm_input_ids, dx_lang):
        grads["embed"][token_id] += dx

    for name, caches in fc.visual.caches.items():
        dh_per_step = [None] * len(caches)
        dh_per_step[-1] = dfeat[name if name != "gaze" else "gaze"]
        lstm_sequence_backward(caches, dh_per_step, lstm_accum(name))
    # spatial features are raw inputs; no parameters behind them
    return loss, grads


def dataset_loss_and_grads(model, samples):
    """Mean sample loss and gradients over (bundle, expression) pairs."""
    if not samples:
        raise ContractError("empty dataset")
    total = 0.0
    grads = zero_grads_like(model.values)
    for bundle, expr in samples:
        loss, g = sample_loss_and_grads(model, bundle, expr)
        total += loss
        for k in grads:
            grads[k] += g[k]
    n = len(samples)
    for k in grads:
        grads[k] /= n
    return total / n, grads


# --- training --------------------------------------------------------------

@dataclass
class TrainHyper:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float = 5.0
    early_stop_nll: float = None


def train(model, samples, hyper=TrainHyper()):
    """Minimize mean per-token NLL over (bundle, expression) samples.

    Deterministic given the seed; returns the per-epoch mean loss log.
    The model is updated in place.
    """
    if not samples:
        raise ContractError("empty training set")
    rng = np.random.default_rng(hyper.seed)
    opt = AdamState(model.values)
    adam_hyper = AdamHyper(lr=hyper.lr)
    loss_log = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = [samples[i] for i in order[start:start + hyper.batch_size]]
            loss, grads = dataset_loss_and_grads(model, batch)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch "
                    f"{start // hyper.batch_size}")
            clip_gradients(grads, hyper.clip_norm)
            adam_step(model.values, grads, opt, adam_hyper)
            epoch_loss += loss * len(batch)
        epoch_loss /= len(samples)
        loss_log.append(epoch_loss)
        if hyper.early_stop_nll is not None and \
                epoch_loss < hyper.early_stop_nll:
            break
    return loss_log


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, model, extra=None):
    """FTB1 parameter container plus a JSON config sidecar at path + '.json'.

    `extra` is an optional JSON-serializable payload stored alongside the
    config (the CLI keeps the vocabulary there).
    """
    save_features(path, model.values)
    doc = {"config": model.config.to_dict(), "extra": extra}
    with open(str(path) + ".json", "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    """Returns (model, extra)."""
    with open(str(path) + ".json") as fh:
        doc = json.load(fh)
    cfg = ModelConfig.from_dict(doc["config"])
    raw = load_features(path)
    template = init_model(cfg, seed=0).values
    if set(raw) != set(template):
        missing = set(template) ^ set(raw)
        raise ConfigError(f"checkpoint parameter groups mismatch: {missing}")
    values = {}
    for name, arr in raw.items():
        if tuple(arr.shape) != template[name].shape:
            raise DimensionError(
                f"checkpoint group '{name}' shape {arr.shape} != "
                f"{template[name].shape}")
        values[name] = check_finite(arr.astype(np.float64), name)
    return ORModel(config=cfg, values=values), doc.get("extra")


def with_modalities(cfg, modalities):
    return replace(cfg, modalities=tuple(modalities))
