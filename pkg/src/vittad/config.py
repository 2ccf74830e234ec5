"""Model and run configuration with validation and JSON loading."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError

PROP_KINDS = ("none", "local", "global1d", "global3d")
PLACEMENTS = ("evenly", "first", "last")


@dataclass
class ModelConfig:
    """Architecture hyperparameters for the detector."""

    T: int = 32                 # frames per clip
    H: int = 32
    W: int = 32
    Ns: int = 4                 # snippet count
    n_blocks: int = 4           # backbone depth
    C: int = 64                 # embed dim
    m: int = 4                  # attention heads
    tubelet: tuple[int, int, int] = (2, 4, 4)
    k_prop: int = 1             # number of propagation blocks (0 iff prop_kind=none)
    prop_kind: str = "global1d"
    placement: str = "evenly"
    L_post: int = 3             # post-backbone encoder layers
    pyramid_levels: int = 3
    num_classes: int = 4
    fps: float = 8.0

    def __post_init__(self):
        self.tubelet = tuple(int(v) for v in self.tubelet)
        self.validate()

    def validate(self) -> None:
        kt, kh, kw = self.tubelet
        if self.T <= 0 or self.H <= 0 or self.W <= 0:
            raise ConfigurationError("clip dims T, H, W must be positive")
        if self.Ns < 1 or self.T % self.Ns != 0:
            raise ConfigurationError(
                f"T={self.T} is not divisible into Ns={self.Ns} snippets"
            )
        ls = self.T // self.Ns
        if ls % kt != 0 or self.H % kh != 0 or self.W % kw != 0:
            raise ConfigurationError(
                f"tubelet {self.tubelet} does not divide snippet dims "
                f"({ls}, {self.H}, {self.W})"
            )
        if self.C % self.m != 0:
            raise ConfigurationError(
                f"embed dim C={self.C} not divisible by heads m={self.m}"
            )
        if self.prop_kind not in PROP_KINDS:
            raise ConfigurationError(f"unknown prop_kind {self.prop_kind!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(f"unknown placement {self.placement!r}")
        if self.prop_kind == "none":
            if self.k_prop != 0:
                raise ConfigurationError("k_prop must be 0 when prop_kind is 'none'")
        else:
            if not 1 <= self.k_prop <= self.n_blocks:
                raise ConfigurationError(
                    f"k_prop={self.k_prop} must be in [1, n_blocks={self.n_blocks}]"
                )
            if self.placement == "evenly" and self.n_blocks % self.k_prop != 0:
                raise ConfigurationError(
                    f"evenly placement needs n_blocks={self.n_blocks} divisible "
                    f"by k_prop={self.k_prop}"
                )
        if self.L_post < 0:
            raise ConfigurationError("L_post must be >= 0")
        if self.pyramid_levels < 1:
            raise ConfigurationError("pyramid_levels must be >= 1")
        if self.t_tokens < 2 ** (self.pyramid_levels - 1):
            raise ConfigurationError(
                f"{self.pyramid_levels} pyramid levels need at least "
                f"{2 ** (self.pyramid_levels - 1)} temporal tokens, have {self.t_tokens}"
            )
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")
        if self.fps <= 0:
            raise ConfigurationError("fps must be positive")

    # derived dims ----------------------------------------------------------

    @property
    def snippet_len(self) -> int:
        return self.T // self.Ns

    @property
    def t_tokens(self) -> int:
        return self.T // self.tubelet[0]

    @property
    def h_tokens(self) -> int:
        return self.H // self.tubelet[1]

    @property
    def w_tokens(self) -> int:
        return self.W // self.tubelet[2]

    @property
    def snippet_tokens(self) -> int:
        return self.snippet_len // self.tubelet[0]

    @property
    def head_dim(self) -> int:
        return self.C // self.m

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {unknown}")
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["tubelet"] = list(self.tubelet)
        return doc

    def with_updates(self, **updates) -> "ModelConfig":
        doc = self.to_dict()
        doc.update(updates)
        return ModelConfig.from_dict(doc)


@dataclass
class OptimConfig:
    """SGD-with-momentum settings for the toy training loop."""

    learning_rate: float = 0.02
    momentum: float = 0.9
    steps: int = 1500
    batch_size: int = 2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "OptimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown optimizer config keys: {unknown}")
        return cls(**doc)


@dataclass
class DataConfig:
    """Synthetic dataset settings (mirrors the generator's spec)."""

    n_train: int = 8
    n_val: int = 8
    num_classes: int = 4
    actions_min: int = 1
    actions_max: int = 2
    min_len: int = 12
    max_len: int = 16
    noise: float = 0.05

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 0:
            raise ConfigurationError("n_train must be >= 1 and n_val >= 0")
        if not 0 <= self.actions_min <= self.actions_max:
            raise ConfigurationError("need 0 <= actions_min <= actions_max")
        if not 2 <= self.min_len <= self.max_len:
            raise ConfigurationError("need 2 <= min_len <= max_len")
        if self.noise < 0:
            raise ConfigurationError("noise must be >= 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "DataConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown data config keys: {unknown}")
        return cls(**doc)


@dataclass
class EvalConfig:
    """Detection post-processing and metric settings."""

    thresholds: list[float] = field(default_factory=lambda: [0.3, 0.4, 0.5, 0.6, 0.7])
    score_thresh: float = 0.05
    nms_iou: float = 0.5
    topk: int = 100

    def __post_init__(self):
        if not self.thresholds or sorted(self.thresholds) != list(self.thresholds):
            raise ConfigurationError("thresholds must be non-empty and ascending")
        if not 0.0 <= self.score_thresh <= 1.0:
            raise ConfigurationError("score_thresh must be in [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ConfigurationError("nms_iou must be in [0, 1]")
        if self.topk < 1:
            raise ConfigurationError("topk must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown eval config keys: {unknown}")
        return cls(**doc)


@dataclass
class RunConfig:
    """Everything one CLI run needs; seed fixes every stochastic choice."""

    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.model.num_classes != self.data.num_classes:
            raise ConfigurationError(
                f"model num_classes={self.model.num_classes} differs from "
                f"data num_classes={self.data.num_classes}"
            )

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {"model", "optimizer", "data", "eval", "seed", "out_dir"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown run config keys: {unknown}")
        return cls(
            model=ModelConfig.from_dict(doc.get("model", {})),
            optimizer=OptimConfig.from_dict(doc.get("optimizer", {})),
            data=DataConfig.from_dict(doc.get("data", {})),
            eval=EvalConfig.from_dict(doc.get("eval", {})),
            seed=int(doc.get("seed", 0)),
            out_dir=str(doc.get("out_dir", "runs/default")),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"config {path} must be a JSON object")
        return cls.from_dict(doc)
