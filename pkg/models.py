"""
Data models for hiwave-tst experiments: configs, run records and summaries.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from errors import ConfigError

TOKEN_VARIANTS = ("baseline", "hybrid", "replacement")
POOLINGS = ("gem", "avg")
WAVELETS = ("db2", "db4")
SELECTIONS = ("final", "best")

GEM_EPS = 1e-6
GEM_P_MIN = 0.5
GEM_P_MAX = 10.0


@dataclass
class TokenizerConfig:
    """How a raw window becomes a sequence of patch tokens."""
    variant: str = "hybrid"                 # baseline | hybrid | replacement
    wavelet: str = "db2"
    depth_set: Tuple[int, ...] = (3,)       # WPD levels pooled into the wavelet token
    pooling: str = "gem"                    # gem | avg
    gem_init: float = 3.0
    patch_len: int = 16
    stride: int = 8
    channels: int = 9
    window_len: int = 128

    def __post_init__(self):
        self.depth_set = tuple(sorted(set(int(d) for d in self.depth_set)))

    @property
    def uses_temporal(self) -> bool:
        return self.variant != "replacement"

    @property
    def uses_wavelets(self) -> bool:
        return self.variant != "baseline"

    @property
    def num_patches(self) -> int:
        return (self.window_len - self.patch_len) // self.stride + 1

    @property
    def temporal_dim(self) -> int:
        return self.channels * self.patch_len if self.uses_temporal else 0

    @property
    def wavelet_dim(self) -> int:
        if not self.uses_wavelets:
            return 0
        return self.channels * sum(2 ** d for d in self.depth_set)

    @property
    def token_dim(self) -> int:
        return self.temporal_dim + self.wavelet_dim

    @property
    def pooling_param_count(self) -> int:
        if not self.uses_wavelets or self.pooling != "gem":
            return 0
        return sum(2 ** d for d in self.depth_set)

    def validate(self) -> None:
        if self.variant not in TOKEN_VARIANTS:
            raise ConfigError(f"tokenizer.variant must be one of {TOKEN_VARIANTS}, got {self.variant!r}")
        if self.wavelet not in WAVELETS:
            raise ConfigError(f"tokenizer.wavelet must be one of {WAVELETS}, got {self.wavelet!r}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"tokenizer.pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if not self.depth_set or min(self.depth_set) < 1:
            raise ConfigError(f"tokenizer.depth_set needs levels >= 1, got {list(self.depth_set)}")
        if self.patch_len % (2 ** max(self.depth_set)):
            raise ConfigError(
                f"patch length {self.patch_len} is not divisible by 2^{max(self.depth_set)}"
            )
        if not GEM_P_MIN <= self.gem_init <= GEM_P_MAX:
            raise ConfigError(f"tokenizer.gem_init must lie in [{GEM_P_MIN}, {GEM_P_MAX}]")
        if self.patch_len > self.window_len or (self.window_len - self.patch_len) % self.stride:
            raise ConfigError(
                f"window {self.window_len} cannot be tiled by patches of {self.patch_len} at stride {self.stride}"
            )


@dataclass
class ModelConfig:
    """Transformer encoder classifier hyperparameters."""
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 3
    ffn_dim: int = 256
    dropout: float = 0.1
    n_classes: int = 6
    token_dim: Optional[int] = None     # None: taken from the tokenizer config
    head_init_scale: float = 0.1
    ln_eps: float = 1e-5

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ConfigError(f"model.d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {self.dropout}")
        for key in ("d_model", "n_heads", "n_layers", "ffn_dim", "n_classes"):
            if getattr(self, key) < 1:
                raise ConfigError(f"model.{key} must be positive")


@dataclass
class TrainConfig:
    """AdamW training schedule."""
    epochs: int = 30
    lr: float = 5e-4
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    clip: Optional[float] = None
    selection: str = "final"            # final | best

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.seeds:
            raise ConfigError("train.seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"train.seeds must be distinct, got {self.seeds}")
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"train.selection must be one of {SELECTIONS}")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError("train.clip must be positive when set")


@dataclass
class DataConfig:
    root: Optional[str] = None
    standardize: bool = True
    cache: Optional[str] = None


@dataclass
class OutputConfig:
    dir: str = "runs"


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one `train` or `ablate` invocation."""
    data: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        self.tokenizer.validate()
        self.model.validate()
        self.train.validate()

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["tokenizer"]["depth_set"] = list(self.tokenizer.depth_set)
        return result


@dataclass
class VariantSpec:
    """A named tokenizer/model pairing, e.g. the champion or one ablation."""
    name: str
    tokenizer: TokenizerConfig
    model: ModelConfig


@dataclass
class RunRecord:
    """Metrics of one training run."""
    variant: str
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)
    param_count: int = 0
    initial_loss: Optional[float] = None
    epoch_loss: List[float] = field(default_factory=list)
    epoch_accuracy: List[float] = field(default_factory=list)
    epoch_test_accuracy: List[float] = field(default_factory=list)
    test_accuracy: float = 0.0
    final_test_accuracy: float = 0.0
    selection: str = "final"
    learned_p: Dict[str, List[float]] = field(default_factory=dict)
    initial_p: Dict[str, List[float]] = field(default_factory=dict)
    dead_parameters: List[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def p_values(self) -> List[float]:
        """All learned exponents, lowest level first."""
        values: List[float] = []
        for level in sorted(self.learned_p, key=int):
            values.extend(self.learned_p[level])
        return values

    def same_metrics(self, other: "RunRecord") -> bool:
        """Equality of everything except wall time."""
        mine, theirs = asdict(self), asdict(other)
        mine.pop("wall_time_s")
        theirs.pop("wall_time_s")
        return mine == theirs

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RunRecord":
        return cls(**payload)


@dataclass
class VariantSummary:
    variant: str
    mean_acc: float
    std_acc: float
    n_seeds: int
    param_count: int
    mean_p: List[float] = field(default_factory=list)


@dataclass
class ExperimentSummary:
    """Per-variant aggregate over seeds plus every underlying run."""
    rows: List[VariantSummary] = field(default_factory=list)
    records: List[RunRecord] = field(default_factory=list)

    def row(self, variant: str) -> Optional[VariantSummary]:
        for row in self.rows:
            if row.variant == variant:
                return row
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variants": [asdict(row) for row in self.rows],
            "runs": [record.to_dict() for record in self.records],
        }
