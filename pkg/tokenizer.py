"""
Patch tokenizer: turns raw windows into the token sequence of the encoder.

A window ``(C, T)`` is cut into overlapping patches ``(P, C, L_p)``. Each
patch yields a temporal token (the flattened patch, channel-major), a
wavelet token (every WPD packet of every channel pooled to one scalar), or
their concatenation with the temporal part first.
"""
import logging
from typing import Dict, List, Optional, Union

import numpy as np

from autodiff import Tensor, as_tensor, broadcast_to, clamp, concat, parameter
from errors import ConfigError, DimensionError
from models import GEM_EPS, GEM_P_MAX, GEM_P_MIN, TokenizerConfig
from wavelet import make_filters, wpd_batch

logger = logging.getLogger(__name__)


def extract_patches(window: Union[np.ndarray, Tensor], cfg: TokenizerConfig) -> np.ndarray:
    """``(..., C, T)`` -> ``(..., P, C, L_p)``; patch i covers ``[i*S, i*S + L_p)``."""
    data = window.data if isinstance(window, Tensor) else np.asarray(window, dtype=np.float64)
    if data.ndim < 2 or data.shape[-1] != cfg.window_len or data.shape[-2] != cfg.channels:
        raise DimensionError(
            f"expected windows of shape (..., {cfg.channels}, {cfg.window_len}), got {data.shape}"
        )
    views = np.lib.stride_tricks.sliding_window_view(data, cfg.patch_len, axis=-1)
    patches = views[..., ::cfg.stride, :]                # (..., C, P, L_p)
    return np.ascontiguousarray(np.moveaxis(patches, -2, -3))


def gem(coeffs, p, eps: float = GEM_EPS) -> Tensor:
    """Generalized mean of magnitudes over the last axis.

    ``((1/N) * sum (|x| + eps)^p)^(1/p)``. ``p`` is a scalar, or a 1-D tensor
    with one exponent per block along the second-to-last axis of ``coeffs``.
    """
    coeffs = as_tensor(coeffs)
    magnitudes = coeffs.abs() + eps
    if isinstance(p, Tensor) and p.ndim == 1:
        if coeffs.ndim < 2 or coeffs.shape[-2] != p.shape[0]:
            raise DimensionError(f"gem: {p.shape[0]} exponents for coefficient blocks {coeffs.shape}")
        exponent = broadcast_to(p.reshape(p.shape[0], 1), coeffs.shape)
        pooled = (magnitudes ** exponent).mean(axis=-1)
        return pooled ** broadcast_to(1.0 / p, pooled.shape)
    pooled = (magnitudes ** p).mean(axis=-1)
    return pooled ** (1.0 / p)


class GemPool:
    """GeM pooling with one learnable exponent per packet index, shared by all channels."""

    def __init__(self, packet_count: int, init: float = 3.0, name: str = "gem_p",
                 eps: float = GEM_EPS, p_min: float = GEM_P_MIN, p_max: float = GEM_P_MAX):
        self.p = parameter(np.full(packet_count, float(init)), name=name)
        self.eps = eps
        self.p_min = p_min
        self.p_max = p_max

    def __call__(self, coeffs: Tensor) -> Tensor:
        """``(..., packets, n)`` -> ``(..., packets)``."""
        return gem(coeffs, clamp(self.p, self.p_min, self.p_max), self.eps)

    def values(self) -> List[float]:
        return np.clip(self.p.data, self.p_min, self.p_max).tolist()


class HybridTokenizer:
    """Builds temporal, wavelet or hybrid tokens according to a TokenizerConfig."""

    def __init__(self, cfg: TokenizerConfig):
        cfg.validate()
        self.cfg = cfg
        self.filters = make_filters(cfg.wavelet) if cfg.uses_wavelets else None
        self.pools: Dict[int, GemPool] = {}
        if cfg.uses_wavelets and cfg.pooling == "gem":
            for level in cfg.depth_set:
                self.pools[level] = GemPool(2 ** level, cfg.gem_init, name=f"gem_p.level{level}")

    @property
    def token_dim(self) -> int:
        return self.cfg.token_dim

    def parameters(self) -> Dict[str, Tensor]:
        return {f"gem_p.level{level}": pool.p for level, pool in self.pools.items()}

    def learned_p(self) -> Dict[str, List[float]]:
        """Clamped exponents keyed by WPD level."""
        return {str(level): pool.values() for level, pool in self.pools.items()}

    def __call__(self, windows: np.ndarray) -> Tensor:
        """``(B, C, T)`` windows -> ``(B, P, token_dim)`` tokens."""
        return self.tokens_from_patches(extract_patches(windows, self.cfg))

    def tokens_from_patches(self, patches: np.ndarray) -> Tensor:
        """``(..., C, L_p)`` patches -> ``(..., token_dim)`` tokens."""
        patches = np.asarray(patches, dtype=np.float64)
        cfg = self.cfg
        if patches.shape[-2:] != (cfg.channels, cfg.patch_len):
            raise DimensionError(
                f"expected patches ending in ({cfg.channels}, {cfg.patch_len}), got {patches.shape}"
            )
        lead = patches.shape[:-2]
        parts = []
        if cfg.uses_temporal:
            parts.append(Tensor(patches.reshape(lead + (cfg.temporal_dim,))))
        if cfg.uses_wavelets:
            parts.append(self._wavelet_features(patches))
        return parts[0] if len(parts) == 1 else concat(parts, axis=-1)

    def _wavelet_features(self, patches: np.ndarray) -> Tensor:
        cfg = self.cfg
        pooled = []
        for level in cfg.depth_set:
            coeffs = Tensor(wpd_batch(patches, self.filters, level))     # (..., C, 2^d, L_p/2^d)
            if cfg.pooling == "gem":
                pooled.append(self.pools[level](coeffs))
            else:
                pooled.append(coeffs.abs().mean(axis=-1))
        features = pooled[0] if len(pooled) == 1 else concat(pooled, axis=-1)   # (..., C, sum 2^d)
        return features.reshape(patches.shape[:-2] + (cfg.wavelet_dim,))

    def wavelet_token(self, patch: np.ndarray) -> Tensor:
        """Pooled packet features of one ``(C, L_p)`` patch, channel-major."""
        if not self.cfg.uses_wavelets:
            raise ConfigError("the baseline tokenizer has no wavelet stream")
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != (self.cfg.channels, self.cfg.patch_len):
            raise DimensionError(f"expected one patch of shape {(self.cfg.channels, self.cfg.patch_len)}, got {patch.shape}")
        return self._wavelet_features(patch)

    def hybrid_token(self, patch: np.ndarray) -> Tensor:
        """The full token of one ``(C, L_p)`` patch for the configured variant."""
        return self.tokens_from_patches(patch)


def pooling_parameter_count(tokenizer: HybridTokenizer) -> int:
    return sum(p.size for p in tokenizer.parameters().values())


def describe(tokenizer: HybridTokenizer) -> str:
    cfg = tokenizer.cfg
    parts: List[str] = []
    if cfg.uses_temporal:
        parts.append(f"temporal {cfg.temporal_dim}")
    if cfg.uses_wavelets:
        levels = "+".join(f"L{d}" for d in cfg.depth_set)
        parts.append(f"wavelet {cfg.wavelet_dim} ({cfg.wavelet} {levels} {cfg.pooling})")
    return f"{' + '.join(parts)} = {cfg.token_dim}"


def check_p_band(values: List[float], low: float = 2.0, high: float = 4.0) -> Optional[str]:
    """Message describing exponents outside [low, high], or None."""
    outside = [v for v in values if not low <= v <= high]
    if not outside:
        return None
    return f"{len(outside)} of {len(values)} GeM exponents outside [{low}, {high}]: " + ", ".join(
        f"{v:.3f}" for v in outside
    )
