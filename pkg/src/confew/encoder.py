"""Compact trainable sentence encoder with a growable relation classifier.

Stack: token embeddings + scaled sinusoidal positions -> one bidirectional
multi-head self-attention block with a GELU feed-forward (post-norm
residuals) -> the sentence feature is the concatenation of the contextual
representations at the two entity-marker positions (width 2h).  A separate
projection head (dropout -> linear -> layer norm) maps features to hidden
vectors (width d); a bias-bearing linear classifier maps hidden vectors to
one logit per observed relation.

Dropout lives only in the projection head.  Everything runs in float64
through the autodiff engine; eval-mode forwards build no graph when the
model is frozen.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Sample
from .errors import ConfigError, ValidationError

LN_EPS = 1e-5
MASK_BIAS = -1e30
PE_SCALE = 0.25  # keep position signal below token content at desk scale
CLS_INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    model_dim: int = 64    # per-token width h; features are 2h
    hidden_dim: int = 64   # projected hidden width d
    n_heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.5

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover the two marker tokens")
        if self.model_dim % self.n_heads != 0:
            raise ConfigError("model_dim must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


@lru_cache(maxsize=None)
def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Standard sin/cos positional table, shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis; eps sits inside the sqrt so zero-variance
    inputs map to the bias exactly."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc * ((var + eps) ** -0.5) * gain + bias


def gelu(x: Tensor) -> Tensor:
    c = math.sqrt(2.0 / math.pi)
    inner = ad.tanh((x + (x * x * x) * 0.044715) * c)
    return x * (inner + 1.0) * 0.5


class Model:
    """Encoder + projection head + growable classifier."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.relations: list[str] = []
        self.frozen = False
        V, h, d, ff = config.vocab_size, config.model_dim, config.hidden_dim, config.ff_dim
        w = rng.normal

        def t(a):
            return Tensor(a, requires_grad=True)

        # Marker rows start at zero: a marker slot then carries no content of
        # its own and its contextual representation is built entirely from
        # the tokens around it, which keeps entity-similarity comparisons
        # between marker representations content-driven.
        tok = w(0.0, 0.5, (V, h))
        tok[:2] = 0.0

        self.params: dict[str, Tensor] = {
            "tok_emb": t(tok),
            "attn_wq": t(w(0.0, h ** -0.5, (h, h))), "attn_bq": t(np.zeros(h)),
            "attn_wk": t(w(0.0, h ** -0.5, (h, h))), "attn_bk": t(np.zeros(h)),
            "attn_wv": t(w(0.0, h ** -0.5, (h, h))), "attn_bv": t(np.zeros(h)),
            "attn_wo": t(w(0.0, h ** -0.5, (h, h))), "attn_bo": t(np.zeros(h)),
            "ln1_g": t(np.ones(h)), "ln1_b": t(np.zeros(h)),
            "ff_w1": t(w(0.0, h ** -0.5, (h, ff))), "ff_b1": t(np.zeros(ff)),
            "ff_w2": t(w(0.0, ff ** -0.5, (ff, h))), "ff_b2": t(np.zeros(h)),
            "ln2_g": t(np.ones(h)), "ln2_b": t(np.zeros(h)),
            "proj_w": t(w(0.0, (2 * h) ** -0.5, (2 * h, d))), "proj_b": t(np.zeros(d)),
            "proj_ln_g": t(np.ones(d)), "proj_ln_b": t(np.zeros(d)),
            "cls_w": t(np.zeros((0, d))), "cls_b": t(np.zeros(0)),
        }

    # -- parameter groups (distinct learning rates) --------------------

    PROJECTION_PARAMS = ("proj_w", "proj_b", "proj_ln_g", "proj_ln_b")
    CLASSIFIER_PARAMS = ("cls_w", "cls_b")

    def parameter_group(self, name: str) -> str:
        if name in self.CLASSIFIER_PARAMS:
            return "classifier"
        if name in self.PROJECTION_PARAMS:
            return "projection"
        return "encoder"

    def relation_index(self, relation: str) -> int:
        return self.relations.index(relation)

    # -- forward pieces -------------------------------------------------

    def _prepare_batch(self, samples: list[Sample]):
        if not samples:
            raise ValueError("empty batch")
        V = self.config.vocab_size
        B = len(samples)
        S = max(len(s.tokens) for s in samples)
        tokens = np.zeros((B, S), dtype=np.int64)
        key_bias = np.full((B, 1, 1, S), MASK_BIAS)
        head_pos = np.empty(B, dtype=np.int64)
        tail_pos = np.empty(B, dtype=np.int64)
        for i, s in enumerate(samples):
            ids = np.asarray(s.tokens, dtype=np.int64)
            if ids.max() >= V:
                raise ValidationError(f"sample {s.id}: token id {ids.max()} >= vocab size {V}")
            tokens[i, : len(ids)] = ids
            key_bias[i, 0, 0, : len(ids)] = 0.0
            head_pos[i] = s.head_marker_pos
            tail_pos[i] = s.tail_marker_pos
        return tokens, key_bias, head_pos, tail_pos

    def forward_tokens(self, samples: list[Sample]) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Contextual token representations (B, S, h) plus marker positions."""
        p = self.params
        tokens, key_bias, head_pos, tail_pos = self._prepare_batch(samples)
        B, S = tokens.shape
        h, nh = self.config.model_dim, self.config.n_heads
        dk = h // nh

        x = ad.take_rows(p["tok_emb"], tokens) + sinusoidal_positions(S, h) * PE_SCALE

        def heads(m: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(m, (B, S, nh, dk)), (0, 2, 1, 3))

        q = heads(x @ p["attn_wq"] + p["attn_bq"])
        k = heads(x @ p["attn_wk"] + p["attn_bk"])
        v = heads(x @ p["attn_wv"] + p["attn_bv"])
        scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * dk ** -0.5 + key_bias
        ctx = ad.softmax(scores, axis=-1) @ v
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, S, h))
        y = layer_norm(x + ctx @ p["attn_wo"] + p["attn_bo"], p["ln1_g"], p["ln1_b"])
        ff = gelu(y @ p["ff_w1"] + p["ff_b1"]) @ p["ff_w2"] + p["ff_b2"]
        z = layer_norm(y + ff, p["ln2_g"], p["ln2_b"])
        return z, head_pos, tail_pos

    def encode_features(self, samples: list[Sample]) -> Tensor:
        """Sentence features (B, 2h): marker representations, head then tail.
        The encoder applies no dropout, so this is the same in train and eval."""
        z, head_pos, tail_pos = self.forward_tokens(samples)
        return ad.concat([ad.gather_positions(z, head_pos), ad.gather_positions(z, tail_pos)], axis=1)

    def entity_representations(self, samples: list[Sample]) -> tuple[Tensor, Tensor]:
        """Head and tail marker representations, (B, h) each."""
        z, head_pos, tail_pos = self.forward_tokens(samples)
        return ad.gather_positions(z, head_pos), ad.gather_positions(z, tail_pos)

    def project_hidden(self, features: Tensor, train_mode: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Dropout -> linear -> layer norm; dropout only in train mode."""
        p = self.params
        rate = self.config.dropout
        if train_mode and rate > 0.0:
            if rng is None:
                raise ValueError("train-mode projection needs a dropout rng")
            keep = (rng.random(features.data.shape) >= rate) / (1.0 - rate)
            features = features * keep  # inverted dropout: eval path has no scaling
        return layer_norm(features @ p["proj_w"] + p["proj_b"], p["proj_ln_g"], p["proj_ln_b"])

    def classify(self, hidden: Tensor) -> Tensor:
        """Logits over observed relations, (B, |R|)."""
        p = self.params
        return hidden @ ad.transpose(p["cls_w"], (1, 0)) + p["cls_b"]

    def forward(self, samples: list[Sample], train_mode: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """(features, hiddens, logits) for a batch."""
        f = self.encode_features(samples)
        h = self.project_hidden(f, train_mode=train_mode, rng=rng)
        return f, h, self.classify(h)

    # -- classifier growth, snapshots, persistence ----------------------

    def extend_classifier(self, new_relations: list[str], rng: np.random.Generator) -> None:
        """Append one row per new relation; existing rows keep their bits."""
        if self.frozen:
            raise ValueError("cannot extend a frozen model")
        dup = [r for r in new_relations if r in self.relations]
        if dup or len(set(new_relations)) != len(new_relations):
            raise ValueError(f"duplicate relations in classifier extension: {dup or new_relations}")
        if not new_relations:
            return
        d = self.config.hidden_dim
        rows = rng.normal(0.0, CLS_INIT_STD, (len(new_relations), d))
        self.params["cls_w"] = Tensor(
            np.concatenate([self.params["cls_w"].data, rows], axis=0), requires_grad=True)
        self.params["cls_b"] = Tensor(
            np.concatenate([self.params["cls_b"].data, np.zeros(len(new_relations))]),
            requires_grad=True)
        self.relations.extend(new_relations)

    def copy(self, frozen: bool = False) -> "Model":
        other = Model.__new__(Model)
        other.config = self.config
        other.relations = list(self.relations)
        other.frozen = frozen
        other.params = {
            name: Tensor(t.data.copy(), requires_grad=not frozen)
            for name, t in self.params.items()
        }
        return other

    def snapshot(self) -> "ModelSnapshot":
        return ModelSnapshot(self)


class ModelSnapshot:
    """Frozen deep copy of a model; forwards run eval-mode and build no graph."""

    def __init__(self, model: Model):
        self._model = model.copy(frozen=True)

    @property
    def relations(self) -> list[str]:
        return list(self._model.relations)

    @property
    def params(self) -> dict[str, Tensor]:
        return self._model.params

    def forward(self, samples: list[Sample]) -> tuple[Tensor, Tensor, Tensor]:
        return self._model.forward(samples, train_mode=False)


def compute_gradients(model: Model, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every parameter (zeros when off-path)."""
    if loss.data.size != 1:
        raise ValueError("loss must be scalar")
    for t in model.params.values():
        t.zero_grad()
    loss.backward()
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in model.params.items()
    }


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write parameters (exact float64 bits) plus a JSON sidecar manifest."""
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **{name: t.data for name, t in model.params.items()})
    manifest = {
        "config": asdict(model.config),
        "relations": model.relations,
        "params": {name: list(t.data.shape) for name, t in model.params.items()},
    }
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path: str | Path) -> Model:
    path = Path(path)
    manifest = json.loads(Path(str(path) + ".json").read_text())
    model = Model.__new__(Model)
    model.config = EncoderConfig(**manifest["config"])
    model.relations = list(manifest["relations"])
    model.frozen = False
    with np.load(path) as arrays:
        model.params = {name: Tensor(arrays[name].copy(), requires_grad=True)
                        for name in arrays.files}
    for name, shape in manifest["params"].items():
        if list(model.params[name].data.shape) != shape:
            raise ValidationError(f"checkpoint {path}: shape mismatch for {name}")
    return model
