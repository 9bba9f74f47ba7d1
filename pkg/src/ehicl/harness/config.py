"""Run configuration: one flat key=value document covers every knob.

Defaults follow the training recipe where one exists (100 epochs, learning
rate 1e-4, batch 64, mask ratio 0.7, loss weights 0.05/5.0/5.0/0.01) and the
published involvement-category counts (11417 / 20478 / 132739 / 4280 of
168914). Corpus sizes default to the desk-scale profile; ``desk_config``
additionally shortens training to 30 epochs, which is the CI profile.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

__all__ = ["RunConfig", "ConfigError", "load_config", "save_config", "desk_config"]

_CATEGORY_COUNTS = (11417, 20478, 132739, 4280)  # left, right, both, none
_CATEGORY_TOTAL = sum(_CATEGORY_COUNTS)


class ConfigError(ValueError):
    """Unusable configuration (exit code 2)."""


@dataclass
class RunConfig:
    seed: int = 0
    rig_seed: int = 7
    # corpus
    train_size: int = 2000
    val_size: int = 400
    test_size: int = 400
    prop_left: float = _CATEGORY_COUNTS[0] / _CATEGORY_TOTAL
    prop_right: float = _CATEGORY_COUNTS[1] / _CATEGORY_TOTAL
    prop_both: float = _CATEGORY_COUNTS[2] / _CATEGORY_TOTAL
    prop_none: float = _CATEGORY_COUNTS[3] / _CATEGORY_TOTAL
    # coarse-estimate corruption
    sigma_pose: float = 0.1
    sigma_beta: float = 0.3
    sigma_feat: float = 0.05
    two_hand_noise_scale: float = 2.0
    p_swap: float = 0.05
    p_miss: float = 0.03
    # training
    mask_ratio: float = 0.7
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 64
    weight_decay: float = 0.01
    lambda_mano: float = 0.05
    lambda_v: float = 5.0
    lambda_j: float = 5.0
    lambda_3d: float = 0.01
    val_interval: int = 1
    masked_loss_scope: str = "all"  # reconstruct all masked targets | "query"
    # model
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: int = 4
    feat_dim: int = 192
    text_dim: int = 256
    # retrieval / evaluation
    retrieval_strategy: str = "visual"
    prompt_style: str = "description"
    dataset_mode: str = "mano_supervised"
    f_thresholds: tuple = (5.0, 15.0)
    vlm_client: str = "mock"
    vlm_model: str = "qwen2.5-vl-72b-instruct"
    mock_flip_rate: float = 0.0

    def __post_init__(self) -> None:
        self.f_thresholds = tuple(float(t) for t in self.f_thresholds)
        self.validate()

    def validate(self) -> None:
        if self.train_size < 1 or self.val_size < 0 or self.test_size < 0:
            raise ConfigError("corpus sizes must be positive")
        if not (0.0 <= self.mask_ratio <= 1.0):
            raise ConfigError(f"mask_ratio must be in [0, 1], got {self.mask_ratio}")
        props = (self.prop_left, self.prop_right, self.prop_both, self.prop_none)
        if any(p < 0 for p in props) or sum(props) <= 0:
            raise ConfigError("category proportions must be nonnegative and not all zero")
        if self.retrieval_strategy not in ("visual", "textual", "combined"):
            raise ConfigError(f"unknown retrieval_strategy {self.retrieval_strategy!r}")
        if self.prompt_style not in ("description", "reasoning"):
            raise ConfigError(f"unknown prompt_style {self.prompt_style!r}")
        if self.dataset_mode not in ("mano_supervised", "joints_only"):
            raise ConfigError(f"unknown dataset_mode {self.dataset_mode!r}")
        if self.masked_loss_scope not in ("all", "query"):
            raise ConfigError(f"unknown masked_loss_scope {self.masked_loss_scope!r}")
        if self.vlm_client not in ("mock", "http"):
            raise ConfigError(f"unknown vlm_client {self.vlm_client!r}")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not (0.0 <= self.p_swap <= 1.0 and 0.0 <= self.p_miss <= 1.0):
            raise ConfigError("p_swap and p_miss must be probabilities")

    @property
    def proportions(self) -> tuple[float, float, float, float]:
        props = (self.prop_left, self.prop_right, self.prop_both, self.prop_none)
        total = sum(props)
        return tuple(p / total for p in props)

    @property
    def lambdas(self) -> dict[str, float]:
        return {
            "mano": self.lambda_mano,
            "v": self.lambda_v,
            "j": self.lambda_j,
            "3d": self.lambda_3d,
        }

    def as_dict(self) -> dict:
        out = asdict(self)
        out["f_thresholds"] = list(self.f_thresholds)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**raw)


def desk_config(**overrides) -> RunConfig:
    """CI profile: desk corpus with a 30-epoch schedule."""
    base = {"epochs": 30}
    base.update(overrides)
    return RunConfig(**base)


def _parse_value(name: str, text: str):
    kind = RunConfig.__dataclass_fields__[name].type
    text = text.strip()
    if name == "f_thresholds":
        return tuple(float(x) for x in text.split(",") if x.strip())
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def load_config(path) -> RunConfig:
    """Parse a flat key=value file; '#' starts a comment."""
    values: dict = {}
    known = set(RunConfig.__dataclass_fields__)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return RunConfig(**values)


def save_config(cfg: RunConfig, path) -> None:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "f_thresholds":
            value = ",".join(f"{t:g}" for t in value)
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
