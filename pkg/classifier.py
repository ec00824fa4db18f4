"""
Transformer encoder classifier over patch tokens.

Architecture (pre-norm)::

    tokens (B, P, token_dim)
      -> linear projection to d_model
      -> prepend learnable CLS token, add fixed sinusoidal positions (P + 1)
      -> n_layers x [x + MHA(LN(x)); x + FFN(LN(x))], FFN = d -> ffn -> d with GELU
      -> final LN -> linear head on the CLS position -> (B, n_classes)

Trainable parameters::

    n_layers * [4 (d^2 + d) + (d f + f) + (f d + d) + 2 (2d)]
      + (token_dim d + d) + d + 2d + (d n_classes + n_classes) + pooling

which is 159,814 for the baseline (token_dim 144) and 164,430 for the
hybrid L3 GeM model (token_dim 216, 8 exponents).
"""
import json
import logging
from collections import OrderedDict
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tensor, parameter
from artifacts import atomic_write_text
from errors import ConfigError, DimensionError
from models import ModelConfig, TokenizerConfig
from tokenizer import HybridTokenizer

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hiwave-checkpoint/1"


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    position = np.arange(length)[:, None]
    div_term = np.exp(np.arange(0, width, 2) * (-np.log(10000.0) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(position * div_term)
    table[:, 1::2] = np.cos(position * div_term)
    return table


def expected_parameter_count(model_cfg: ModelConfig, token_dim: int, pooling_params: int = 0) -> int:
    """Closed-form trainable parameter count."""
    d, f, c = model_cfg.d_model, model_cfg.ffn_dim, model_cfg.n_classes
    per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d)
    return (
        model_cfg.n_layers * per_layer
        + (token_dim * d + d)
        + d
        + 2 * d
        + (d * c + c)
        + pooling_params
    )


class Classifier:
    """Tokenizer + encoder + head, with every parameter in one ordered mapping."""

    def __init__(self, model_cfg: ModelConfig, tokenizer_cfg: TokenizerConfig, seed: int):
        self.model_cfg = model_cfg
        self.tokenizer_cfg = tokenizer_cfg
        self.seed = seed
        self.tokenizer = HybridTokenizer(tokenizer_cfg)
        self.num_positions = tokenizer_cfg.num_patches + 1
        self.positions = sinusoidal_positions(self.num_positions, model_cfg.d_model)
        self.weights: "OrderedDict[str, Tensor]" = OrderedDict()
        self._initialize(np.random.default_rng(seed))

    # -- construction --------------------------------------------------
    def _linear(self, rng: np.random.Generator, name: str, fan_in: int, fan_out: int,
                scale: float = 1.0) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        self.weights[f"{name}.weight"] = parameter(
            scale * rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=f"{name}.weight"
        )
        self.weights[f"{name}.bias"] = parameter(np.zeros(fan_out), name=f"{name}.bias")

    def _norm(self, name: str) -> None:
        width = self.model_cfg.d_model
        self.weights[f"{name}.gain"] = parameter(np.ones(width), name=f"{name}.gain")
        self.weights[f"{name}.bias"] = parameter(np.zeros(width), name=f"{name}.bias")

    def _initialize(self, rng: np.random.Generator) -> None:
        cfg = self.model_cfg
        d = cfg.d_model
        self._linear(rng, "input_proj", self.tokenizer_cfg.token_dim, d)
        self.weights["cls_token"] = parameter(rng.normal(0.0, 0.02, size=d), name="cls_token")
        for i in range(cfg.n_layers):
            prefix = f"layers.{i}"
            self._norm(f"{prefix}.ln1")
            for proj in ("q", "k", "v", "o"):
                self._linear(rng, f"{prefix}.attn.{proj}", d, d)
            self._norm(f"{prefix}.ln2")
            self._linear(rng, f"{prefix}.ffn.fc1", d, cfg.ffn_dim)
            self._linear(rng, f"{prefix}.ffn.fc2", cfg.ffn_dim, d)
        self._norm("final_ln")
        self._linear(rng, "head", d, cfg.n_classes, scale=cfg.head_init_scale)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict(self.weights)
        for name, tensor in self.tokenizer.parameters().items():
            params[f"tokenizer.{name}"] = tensor
        return params

    def zero_grad(self) -> None:
        for tensor in self.parameters().values():
            tensor.zero_grad()

    # -- forward -------------------------------------------------------
    def _heads(self, h: Tensor, name: str) -> Tensor:
        """Project ``(B, L, d)`` and split into ``(B, heads, L, head_dim)``."""
        cfg = self.model_cfg
        w = self.weights
        batch, length = h.shape[0], h.shape[1]
        x = ad.linear(h, w[f"{name}.weight"], w[f"{name}.bias"])
        return x.reshape(batch, length, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)

    def attention_weights(self, h: Tensor, prefix: str) -> Tensor:
        """Row-stochastic ``(B, heads, L, L)`` weights of one attention block."""
        q, k = self._heads(h, f"{prefix}.q"), self._heads(h, f"{prefix}.k")
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.model_cfg.head_dim))
        return ad.softmax(scores, axis=-1)

    def _attention(self, h: Tensor, prefix: str, train_mode: bool,
                   rng: Optional[np.random.Generator]) -> Tensor:
        cfg = self.model_cfg
        w = self.weights
        batch, length = h.shape[0], h.shape[1]
        attn = ad.dropout(self.attention_weights(h, prefix), cfg.dropout, rng, train_mode)
        context = ad.matmul(attn, self._heads(h, f"{prefix}.v"))
        context = context.transpose(0, 2, 1, 3).reshape(batch, length, cfg.d_model)
        return ad.linear(context, w[f"{prefix}.o.weight"], w[f"{prefix}.o.bias"])

    def _feed_forward(self, h: Tensor, prefix: str, train_mode: bool,
                      rng: Optional[np.random.Generator]) -> Tensor:
        w = self.weights
        hidden = ad.gelu(ad.linear(h, w[f"{prefix}.fc1.weight"], w[f"{prefix}.fc1.bias"]))
        hidden = ad.dropout(hidden, self.model_cfg.dropout, rng, train_mode)
        return ad.linear(hidden, w[f"{prefix}.fc2.weight"], w[f"{prefix}.fc2.bias"])

    def _norm_apply(self, x: Tensor, name: str) -> Tensor:
        return ad.layer_norm(x, self.weights[f"{name}.gain"], self.weights[f"{name}.bias"],
                             self.model_cfg.ln_eps)

    def forward(self, tokens: Tensor, train_mode: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """``(B, P, token_dim)`` tokens -> ``(B, n_classes)`` logits."""
        cfg = self.model_cfg
        expected = (self.tokenizer_cfg.num_patches, self.tokenizer_cfg.token_dim)
        if tokens.ndim != 3 or tokens.shape[1:] != expected:
            raise DimensionError(f"expected tokens of shape (B, {expected[0]}, {expected[1]}), got {tokens.shape}")
        batch = tokens.shape[0]
        w = self.weights

        x = ad.linear(tokens, w["input_proj.weight"], w["input_proj.bias"])
        cls = ad.broadcast_to(w["cls_token"].reshape(1, 1, cfg.d_model), (batch, 1, cfg.d_model))
        x = ad.concat([cls, x], axis=1)
        x = x + Tensor(np.broadcast_to(self.positions, (batch,) + self.positions.shape))

        for i in range(cfg.n_layers):
            prefix = f"layers.{i}"
            x = x + self._attention(self._norm_apply(x, f"{prefix}.ln1"), f"{prefix}.attn", train_mode, rng)
            x = x + self._feed_forward(self._norm_apply(x, f"{prefix}.ln2"), f"{prefix}.ffn", train_mode, rng)

        x = self._norm_apply(x, "final_ln")
        return ad.linear(x[:, 0, :], w["head.weight"], w["head.bias"])

    def forward_windows(self, windows: np.ndarray, train_mode: bool = False,
                        rng: Optional[np.random.Generator] = None) -> Tensor:
        """``(B, C, T)`` raw windows -> logits."""
        return self.forward(self.tokenizer(windows), train_mode, rng)

    def predict_logits(self, windows: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.forward_windows(windows, train_mode=False).data


def build(model_cfg: ModelConfig, tokenizer_cfg: TokenizerConfig, seed: int) -> Classifier:
    """Validate both configs and construct a deterministically initialized model."""
    model_cfg.validate()
    tokenizer_cfg.validate()
    if model_cfg.token_dim is not None and model_cfg.token_dim != tokenizer_cfg.token_dim:
        raise ConfigError(
            f"model.token_dim {model_cfg.token_dim} does not match the tokenizer's {tokenizer_cfg.token_dim}"
        )
    model = Classifier(model_cfg, tokenizer_cfg, seed)
    expected = expected_parameter_count(model_cfg, tokenizer_cfg.token_dim, tokenizer_cfg.pooling_param_count)
    actual = count_parameters(model)
    if actual != expected:
        raise ConfigError(f"parameter count {actual} disagrees with the closed form {expected}")
    return model


def count_parameters(model: Classifier) -> int:
    """Every trainable element, GeM exponents included."""
    return sum(t.size for t in model.parameters().values() if t.requires_grad)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: Classifier, path: Path, extra: Optional[Dict[str, Any]] = None) -> None:
    """Write parameters, both configs and the seed as one JSON document.

    Layout::

        {"format": "hiwave-checkpoint/1", "seed": int,
         "tokenizer": {...}, "model": {...}, "extra": {...},
         "parameters": {name: {"shape": [...], "values": [...]}}}

    Values are written with repr precision, so loading is bit-exact.
    """
    tokenizer = asdict(model.tokenizer_cfg)
    tokenizer["depth_set"] = list(model.tokenizer_cfg.depth_set)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "seed": model.seed,
        "tokenizer": tokenizer,
        "model": asdict(model.model_cfg),
        "extra": extra or {},
        "parameters": {
            name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
            for name, t in model.parameters().items()
        },
    }
    atomic_write_text(Path(path), json.dumps(payload))
    logger.debug("checkpoint written to %s", path)


def load_checkpoint(path: Path) -> Tuple[Classifier, Dict[str, Any]]:
    """Rebuild a model from :func:`save_checkpoint` output; returns (model, extra)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    tokenizer_cfg = TokenizerConfig(**payload["tokenizer"])
    model_cfg = ModelConfig(**payload["model"])
    model = build(model_cfg, tokenizer_cfg, payload["seed"])
    stored = payload["parameters"]
    params = model.parameters()
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        unexpected = sorted(set(stored) - set(params))
        raise ConfigError(f"checkpoint parameters mismatch: missing {missing}, unexpected {unexpected}")
    for name, tensor in params.items():
        entry = stored[name]
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != tensor.shape:
            raise DimensionError(f"checkpoint {name}: shape {values.shape} vs model {tensor.shape}")
        tensor.data[...] = values
    return model, payload.get("extra", {})
