"""Policy network: per-frame context embedding, temporal attention encoder
with a classification token, and actor/critic heads.

Two ablation switches exist. `use_embedding=False` feeds raw frames
(zero-padded to a head-divisible width) straight into the encoder;
`use_transformer=False` replaces the encoder with a flatten+linear+ReLU
block. Both keep the actor/critic interface unchanged.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .tensor import Tensor, concat

CHECKPOINT_VERSION = 1


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int,
            shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape if shape is not None else (fan_in, fan_out))


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


@dataclass(frozen=True)
class NetConfig:
    frame_width: int
    n_actions: int
    k_frames: int = 6
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    d_out: int = 64
    use_embedding: bool = True
    use_transformer: bool = True

    def __post_init__(self):
        for field in ("frame_width", "n_actions", "k_frames", "d_model",
                      "n_layers", "n_heads", "d_ff", "d_out"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")


class ContextEmbedding:
    """Per-frame ReLU linear map from raw frame width to the model width."""

    def __init__(self, width_in: int, width_out: int, seed):
        rng = np.random.default_rng(seed)
        self.width_in = width_in
        self.width_out = width_out
        self.weight = _param(_xavier(rng, width_in, width_out))
        self.bias = _param(np.zeros(width_out))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.width_in:
            raise ValueError(
                f"frame width {x.shape[-1]} does not match embedding width {self.width_in}")
        return (x @ self.weight + self.bias).relu()

    def params(self) -> Dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class TemporalTransformer:
    """Pre-norm encoder over K frame tokens plus a learned CLS token.

    The CLS row of the final layer, layer-normed and projected, is the
    episode-context feature handed to the heads.
    """

    def __init__(self, d_model: int, k_frames: int, n_layers: int,
                 n_heads: int, d_ff: int, d_out: int, seed):
        if d_model % n_heads != 0:
            raise ValueError("d_model must divide evenly across heads")
        rng = np.random.default_rng(seed)
        self.d_model = d_model
        self.k_frames = k_frames
        self.n_heads = n_heads
        self.d_out = d_out

        self.cls = _param(rng.normal(0.0, 0.02, d_model))
        self.pos = _param(rng.normal(0.0, 0.02, (k_frames + 1, d_model)))
        self.layers: List[Dict[str, Tensor]] = []
        for _ in range(n_layers):
            layer = {
                "ln1_gain": _param(np.ones(d_model)),
                "ln1_bias": _param(np.zeros(d_model)),
                "wq": _param(_xavier(rng, d_model, d_model)),
                "bq": _param(np.zeros(d_model)),
                "wk": _param(_xavier(rng, d_model, d_model)),
                "bk": _param(np.zeros(d_model)),
                "wv": _param(_xavier(rng, d_model, d_model)),
                "bv": _param(np.zeros(d_model)),
                "wo": _param(_xavier(rng, d_model, d_model)),
                "bo": _param(np.zeros(d_model)),
                "ln2_gain": _param(np.ones(d_model)),
                "ln2_bias": _param(np.zeros(d_model)),
                "w1": _param(_xavier(rng, d_model, d_ff)),
                "b1": _param(np.zeros(d_ff)),
                "w2": _param(_xavier(rng, d_ff, d_model)),
                "b2": _param(np.zeros(d_model)),
            }
            self.layers.append(layer)
        self.final_gain = _param(np.ones(d_model))
        self.final_bias = _param(np.zeros(d_model))
        self.out_weight = _param(_xavier(rng, d_model, d_out))
        self.out_bias = _param(np.zeros(d_out))

    def forward(self, x: Tensor, attn_out: Optional[list] = None) -> Tensor:
        b, k, d = x.shape
        if k != self.k_frames:
            raise ValueError(f"expected {self.k_frames} frames, got {k}")
        if d != self.d_model:
            raise ValueError(f"token width {d} does not match model width {self.d_model}")

        cls_tokens = self.cls.reshape((1, 1, d)) + Tensor(np.zeros((b, 1, d)))
        h = concat([cls_tokens, x], axis=1) + self.pos.reshape((1, k + 1, d))
        for layer in self.layers:
            z = h.layer_norm() * layer["ln1_gain"] + layer["ln1_bias"]
            h = h + self._attention(z, layer, attn_out)
            z = h.layer_norm() * layer["ln2_gain"] + layer["ln2_bias"]
            h = h + ((z @ layer["w1"] + layer["b1"]).relu() @ layer["w2"] + layer["b2"])
        h = h.layer_norm() * self.final_gain + self.final_bias
        return h[:, 0, :] @ self.out_weight + self.out_bias

    def _attention(self, z: Tensor, layer: Dict[str, Tensor],
                   attn_out: Optional[list]) -> Tensor:
        b, t, d = z.shape
        heads = self.n_heads
        d_head = d // heads

        def split(m: Tensor) -> Tensor:
            return m.reshape((b, t, heads, d_head)).transpose((0, 2, 1, 3))

        q = split(z @ layer["wq"] + layer["bq"])
        k = split(z @ layer["wk"] + layer["bk"])
        v = split(z @ layer["wv"] + layer["bv"])
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(d_head))
        attn = scores.softmax(axis=-1)
        if attn_out is not None:
            attn_out.append(attn.data.copy())
        ctx = (attn @ v).transpose((0, 2, 1, 3)).reshape((b, t, d))
        return ctx @ layer["wo"] + layer["bo"]

    def params(self) -> Dict[str, Tensor]:
        out = {"cls": self.cls, "pos": self.pos,
               "final_gain": self.final_gain, "final_bias": self.final_bias,
               "out_weight": self.out_weight, "out_bias": self.out_bias}
        for i, layer in enumerate(self.layers):
            for key, p in layer.items():
                out[f"layer{i}.{key}"] = p
        return out


class PolicyNetwork:
    """Actor-critic over stacked state frames."""

    def __init__(self, config: NetConfig, seed=0):
        self.config = config
        seeds = np.random.SeedSequence(seed).spawn(4)
        cfg = config

        if cfg.use_embedding:
            self.embed: Optional[ContextEmbedding] = ContextEmbedding(
                cfg.frame_width, cfg.d_model, seeds[0])
            token_dim = cfg.d_model
        else:
            self.embed = None
            if cfg.use_transformer:
                # pad raw frames so the width splits across heads
                token_dim = -(-cfg.frame_width // cfg.n_heads) * cfg.n_heads
            else:
                token_dim = cfg.frame_width
        self._token_dim = token_dim
        self._pad = token_dim - cfg.frame_width if self.embed is None else 0

        rng = np.random.default_rng(seeds[2])
        if cfg.use_transformer:
            self.encoder: Optional[TemporalTransformer] = TemporalTransformer(
                token_dim, cfg.k_frames, cfg.n_layers, cfg.n_heads,
                cfg.d_ff, cfg.d_out, seeds[1])
            self.mlp_weight = None
            self.mlp_bias = None
        else:
            self.encoder = None
            flat = cfg.k_frames * token_dim
            self.mlp_weight = _param(_xavier(rng, flat, cfg.d_out))
            self.mlp_bias = _param(np.zeros(cfg.d_out))

        head_rng = np.random.default_rng(seeds[3])
        self.actor_weight = _param(_xavier(head_rng, cfg.d_out, cfg.n_actions))
        self.actor_bias = _param(np.zeros(cfg.n_actions))
        self.critic_weight = _param(_xavier(head_rng, cfg.d_out, 1))
        self.critic_bias = _param(np.zeros(1))

    def forward(self, stacks, attn_out: Optional[list] = None
                ) -> Tuple[Tensor, Tensor]:
        """Map (batch, K, frame_width) stacks to (logits, values)."""
        x = stacks if isinstance(stacks, Tensor) else Tensor(np.asarray(stacks))
        cfg = self.config
        if x.data.ndim != 3 or x.shape[1] != cfg.k_frames or x.shape[2] != cfg.frame_width:
            raise ValueError(
                f"expected stacks of shape (batch, {cfg.k_frames}, {cfg.frame_width}), "
                f"got {x.shape}")
        b = x.shape[0]

        if self.embed is not None:
            tokens = self.embed.forward(x)
        elif self._pad:
            tokens = concat([x, Tensor(np.zeros((b, cfg.k_frames, self._pad)))], axis=2)
        else:
            tokens = x

        if self.encoder is not None:
            feat = self.encoder.forward(tokens, attn_out=attn_out)
        else:
            flat = tokens.reshape((b, cfg.k_frames * self._token_dim))
            feat = (flat @ self.mlp_weight + self.mlp_bias).relu()

        logits = feat @ self.actor_weight + self.actor_bias
        values = (feat @ self.critic_weight + self.critic_bias).reshape((b,))
        return logits, values

    def parameters(self) -> List[Tuple[str, Tensor]]:
        out: List[Tuple[str, Tensor]] = []
        if self.embed is not None:
            out.extend((f"embed.{k}", p) for k, p in self.embed.params().items())
        if self.encoder is not None:
            out.extend((f"encoder.{k}", p) for k, p in self.encoder.params().items())
        if self.mlp_weight is not None:
            out.append(("mlp.weight", self.mlp_weight))
            out.append(("mlp.bias", self.mlp_bias))
        out.extend([("actor.weight", self.actor_weight),
                    ("actor.bias", self.actor_bias),
                    ("critic.weight", self.critic_weight),
                    ("critic.bias", self.critic_bias)])
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None


def config_hash(config: NetConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(net: PolicyNetwork, path) -> None:
    """Write all parameters plus a json meta record to a .npz archive.

    Layout: one little-endian float64 .npy entry per parameter, keyed by the
    dotted parameter name; `__meta__` holds {format_version, config,
    config_hash} as a json string.
    """
    meta = {"format_version": CHECKPOINT_VERSION,
            "config": asdict(net.config),
            "config_hash": config_hash(net.config)}
    arrays = {name: p.data for name, p in net.parameters()}
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> PolicyNetwork:
    blob = np.load(path, allow_pickle=False)
    meta = json.loads(str(blob["__meta__"]))
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = NetConfig(**meta["config"])
    if meta.get("config_hash") != config_hash(config):
        raise ValueError("checkpoint config hash mismatch")

    net = PolicyNetwork(config, seed=0)
    for name, p in net.parameters():
        arr = np.asarray(blob[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise ValueError(f"checkpoint parameter {name} has shape {arr.shape}, "
                             f"expected {p.data.shape}")
        p.data = arr
    return net
