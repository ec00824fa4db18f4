"""
Named experiment variants and their published reference numbers.

Each entry pins the tokenizer; the encoder is shared across variants so
accuracy differences come from the token alone.
"""
from dataclasses import replace
from typing import Dict, List, Optional

from errors import ConfigError
from models import ModelConfig, TokenizerConfig, VariantSpec

CHAMPION = "hybrid-L3-db2-gem"
BASELINE = "baseline"

# Tokenizer settings per variant
VARIANT_MAP: Dict[str, Dict[str, object]] = {
    BASELINE: {"variant": "baseline"},
    CHAMPION: {"variant": "hybrid", "wavelet": "db2", "depth_set": (3,), "pooling": "gem"},
    "replacement-L3-db2-gem": {"variant": "replacement", "wavelet": "db2", "depth_set": (3,), "pooling": "gem"},
    "hybrid-L2-db2-gem": {"variant": "hybrid", "wavelet": "db2", "depth_set": (2,), "pooling": "gem"},
    "hybrid-pyramid-db2-gem": {"variant": "hybrid", "wavelet": "db2", "depth_set": (1, 2, 3), "pooling": "gem"},
    "hybrid-L3-db4-gem": {"variant": "hybrid", "wavelet": "db4", "depth_set": (3,), "pooling": "gem"},
    "hybrid-L3-db2-avg": {"variant": "hybrid", "wavelet": "db2", "depth_set": (3,), "pooling": "avg"},
}

# Human-readable labels used in reports
VARIANT_LABELS: Dict[str, str] = {
    BASELINE: "Baseline (temporal patches)",
    CHAMPION: "Hybrid L3 db2 GeM",
    "replacement-L3-db2-gem": "Wavelet replacement L3 db2 GeM",
    "hybrid-L2-db2-gem": "Hybrid L2 db2 GeM",
    "hybrid-pyramid-db2-gem": "Hybrid pyramid {1,2,3} db2 GeM",
    "hybrid-L3-db4-gem": "Hybrid L3 db4 GeM",
    "hybrid-L3-db2-avg": "Hybrid L3 db2 average pooling",
}

# Published test accuracy (mean, std) and, where given, parameter counts
PUBLISHED_RESULTS: Dict[str, Dict[str, Optional[float]]] = {
    BASELINE: {"mean": 0.9259, "std": 0.0039, "params": 159814},
    CHAMPION: {"mean": 0.9338, "std": 0.0043, "params": 164430},
    "replacement-L3-db2-gem": {"mean": 0.9115, "std": 0.0031, "params": None},
    "hybrid-L2-db2-gem": {"mean": 0.9301, "std": 0.0019, "params": None},
    "hybrid-pyramid-db2-gem": {"mean": 0.9324, "std": 0.0051, "params": None},
    "hybrid-L3-db4-gem": {"mean": 0.9290, "std": 0.0025, "params": None},
    "hybrid-L3-db2-avg": {"mean": 0.9287, "std": 0.0059, "params": None},
}

# Variants compared against the champion in the ablation-ordering check
ABLATION_GROUP = [
    "hybrid-L2-db2-gem",
    "hybrid-pyramid-db2-gem",
    "hybrid-L3-db4-gem",
    "hybrid-L3-db2-avg",
    CHAMPION,
]


def all_variants() -> List[str]:
    return list(VARIANT_MAP)


def get_variant(name: str, model_cfg: Optional[ModelConfig] = None,
                gem_init: Optional[float] = None,
                base: Optional[TokenizerConfig] = None) -> VariantSpec:
    """Resolve a variant name into a VariantSpec.

    ``base`` supplies the settings a variant does not pin (patch geometry,
    GeM initialization); ``gem_init`` overrides the base value.
    """
    if name not in VARIANT_MAP:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANT_MAP)}")
    tokenizer = replace(base or TokenizerConfig(), **VARIANT_MAP[name])
    if gem_init is not None:
        tokenizer = replace(tokenizer, gem_init=gem_init)
    tokenizer.validate()
    return VariantSpec(name=name, tokenizer=tokenizer, model=model_cfg or ModelConfig())


def variant_name(cfg: TokenizerConfig) -> str:
    """Derive a variant name from a tokenizer config.

    Named variants come back under their registered names; other depth sets
    produce e.g. ``hybrid-L1+L3-db2-gem``.
    """
    if cfg.variant == "baseline":
        return BASELINE
    if cfg.depth_set == (1, 2, 3):
        levels = "pyramid"
    else:
        levels = "+".join(f"L{d}" for d in cfg.depth_set)
    return f"{cfg.variant}-{levels}-{cfg.wavelet}-{cfg.pooling}"


def variant_label(name: str) -> str:
    return VARIANT_LABELS.get(name, name)
