"""Configuration management for experiments."""

import dataclasses
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""
    pass


FEATURE_OPERATORS = ("time_mask", "feature_mask")
TOKEN_OPERATORS = ("token_delete", "token_insert", "token_substitute")
OPERATORS = ("none",) + FEATURE_OPERATORS + TOKEN_OPERATORS
POSITIONS = ("conditioning_feature", "encoder_feature")
BLOCK_KINDS = ("mlp", "mlp_attention")
ACTIVATIONS = ("tanh", "relu")
DELETION_ORIENTATIONS = ("corrupt", "keep")


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def _check_probability(name: str, value: float) -> None:
    _require(0.0 <= value <= 1.0, f"{name} must be in [0, 1] (got {value})")


@dataclass
class EncoderConfig:
    """Shape of the self-conditioned encoder stack."""

    num_layers: int = 6
    model_dim: int = 32
    input_dim: int = 16  # raw feature width, projected to model_dim
    vocab_size_ext: int = 9  # |V| + 1, blank at index 0

    # Layers (1-based) carrying an intermediate head; never the last layer
    intermediate_layers: Tuple[int, ...] = (2, 4)
    mix_weight: float = 0.5

    # Block
    block: str = "mlp"  # mlp or mlp_attention
    hidden_dim: int = 64
    activation: str = "tanh"

    # Conditioning
    self_condition: bool = True  # False = intermediate losses only
    detach_conditioning: bool = False

    def validate(self) -> None:
        _require(self.num_layers >= 1, f"encoder.num_layers must be >= 1 (got {self.num_layers})")
        _require(self.model_dim >= 1, f"encoder.model_dim must be >= 1 (got {self.model_dim})")
        _require(self.input_dim >= 1, f"encoder.input_dim must be >= 1 (got {self.input_dim})")
        _require(self.hidden_dim >= 1, f"encoder.hidden_dim must be >= 1 (got {self.hidden_dim})")
        _require(
            self.vocab_size_ext >= 2,
            f"encoder.vocab_size_ext must be >= 2 (got {self.vocab_size_ext})",
        )
        layers = list(self.intermediate_layers)
        _require(
            all(1 <= n <= self.num_layers - 1 for n in layers),
            f"encoder.intermediate_layers must lie in [1, {self.num_layers - 1}] (got {layers})",
        )
        _require(
            all(a < b for a, b in zip(layers, layers[1:])),
            f"encoder.intermediate_layers must be strictly increasing (got {layers})",
        )
        _require(
            0.0 <= self.mix_weight < 1.0,
            f"encoder.mix_weight must be in [0, 1) (got {self.mix_weight})",
        )
        _require(
            self.mix_weight == 0.0 or layers,
            "encoder.mix_weight > 0 needs at least one intermediate layer",
        )
        _require(self.block in BLOCK_KINDS, f"encoder.block must be one of {BLOCK_KINDS} (got {self.block!r})")
        _require(
            self.activation in ACTIVATIONS,
            f"encoder.activation must be one of {ACTIVATIONS} (got {self.activation!r})",
        )


@dataclass
class AugmentationSpec:
    """Which corruption(s) apply to intermediate predictions, and how hard."""

    # One operator, or several joined by commas (token operator first)
    operator: str = "none"

    # Feature space
    p_time: float = 1.0
    p_feat: float = 1.0
    w_time: int = 0  # max time-mask width in frames (used when w_time_ratio == 0)
    w_time_ratio: float = 0.1  # max time-mask width as a fraction of T
    w_feat: int = 8
    num_masks: int = 1

    # Token space
    p_del: float = 0.1
    p_ins: float = 0.1
    deletion_orientation: str = "corrupt"  # corrupt: p_del flips to blank; keep: p_del keeps

    position: str = "conditioning_feature"  # or encoder_feature (feature ops only)
    share_draws_across_layers: bool = False

    @property
    def operators(self) -> Tuple[str, ...]:
        return tuple(op.strip() for op in self.operator.split(",") if op.strip())

    @property
    def token_operator(self) -> Optional[str]:
        ops = [op for op in self.operators if op in TOKEN_OPERATORS]
        return ops[0] if ops else None

    @property
    def feature_operators(self) -> Tuple[str, ...]:
        return tuple(op for op in self.operators if op in FEATURE_OPERATORS)

    @property
    def is_identity(self) -> bool:
        return self.operators == ("none",)

    def resolve_time_width(self, frames: int) -> int:
        """Max time-mask width for an utterance of ``frames`` frames."""
        if self.w_time_ratio > 0:
            width = int(self.w_time_ratio * frames)
        else:
            width = self.w_time
        _require(width <= frames, f"augmentation.w_time ({width}) exceeds T ({frames})")
        return width

    def validate(self) -> None:
        ops = self.operators
        _require(bool(ops), "augmentation.operator must not be empty")
        for op in ops:
            _require(op in OPERATORS, f"augmentation.operator: unknown operator {op!r}")
        _require(
            "none" not in ops or len(ops) == 1,
            "augmentation.operator: 'none' cannot be combined with other operators",
        )
        token_ops = [op for op in ops if op in TOKEN_OPERATORS]
        _require(len(token_ops) <= 1, f"augmentation.operator: at most one token operator (got {token_ops})")
        _require(
            not token_ops or ops[0] == token_ops[0],
            "augmentation.operator: the token operator must come first",
        )
        for name in ("p_time", "p_feat", "p_del", "p_ins", "w_time_ratio"):
            _check_probability(f"augmentation.{name}", getattr(self, name))
        _require(self.w_time >= 0, f"augmentation.w_time must be >= 0 (got {self.w_time})")
        _require(self.w_feat >= 0, f"augmentation.w_feat must be >= 0 (got {self.w_feat})")
        _require(self.num_masks >= 1, f"augmentation.num_masks must be >= 1 (got {self.num_masks})")
        _require(
            self.position in POSITIONS,
            f"augmentation.position must be one of {POSITIONS} (got {self.position!r})",
        )
        _require(
            self.position == "conditioning_feature" or not token_ops,
            "augmentation.position = encoder_feature is only valid for feature-space operators",
        )
        _require(
            self.deletion_orientation in DELETION_ORIENTATIONS,
            f"augmentation.deletion_orientation must be one of {DELETION_ORIENTATIONS}",
        )


@dataclass
class SynthSpec:
    """Synthetic corpus generator settings."""

    vocab_size: int = 8
    feature_dim: int = 16
    frames_per_token_min: int = 2
    frames_per_token_max: int = 4
    noise_sigma: float = 0.8
    class_separation: float = 2.0  # norm of each class mean

    # Distortion profile
    frame_drop_rate: float = 0.1  # deletion-type difficulty
    spurious_frame_rate: float = 0.05  # insertion-type difficulty
    confusion_rate: float = 0.1  # substitution-type difficulty

    label_len_min: int = 3
    label_len_max: int = 12
    num_utterances: int = 2000
    split: str = "train"
    seed: int = 0

    def validate(self) -> None:
        _require(self.vocab_size >= 1, f"data.vocab_size must be >= 1 (got {self.vocab_size})")
        _require(self.feature_dim >= 1, f"data.feature_dim must be >= 1 (got {self.feature_dim})")
        _require(
            1 <= self.frames_per_token_min <= self.frames_per_token_max,
            "data.frames_per_token_min must be >= 1 and <= frames_per_token_max "
            f"(got {self.frames_per_token_min}, {self.frames_per_token_max})",
        )
        _require(self.noise_sigma >= 0, f"data.noise_sigma must be >= 0 (got {self.noise_sigma})")
        _require(
            self.class_separation > 0,
            f"data.class_separation must be > 0 (got {self.class_separation})",
        )
        for name in ("frame_drop_rate", "spurious_frame_rate", "confusion_rate"):
            _check_probability(f"data.{name}", getattr(self, name))
        _require(
            1 <= self.label_len_min <= self.label_len_max,
            "data.label_len_min must be >= 1 and <= label_len_max "
            f"(got {self.label_len_min}, {self.label_len_max})",
        )
        _require(self.num_utterances >= 0, f"data.num_utterances must be >= 0 (got {self.num_utterances})")


@dataclass
class DataConfig(SynthSpec):
    """Corpus settings: generator fields plus split sizes and paths."""

    train_size: int = 2000
    dev_size: int = 200
    test_size: int = 200

    # Empty = <run dir>/<split>.corpus
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""

    def synth_spec(self, split: str) -> SynthSpec:
        """Generator settings for one split."""
        base = {f.name: getattr(self, f.name) for f in dataclasses.fields(SynthSpec)}
        base.update(split=split, num_utterances=getattr(self, f"{split}_size"))
        return SynthSpec(**base)

    def corpus_path(self, split: str, run_dir: Path) -> Path:
        explicit = getattr(self, f"{split}_path")
        return Path(explicit) if explicit else run_dir / f"{split}.corpus"

    def validate(self) -> None:
        super().validate()
        for split in SPLITS:
            size = getattr(self, f"{split}_size")
            _require(size >= 0, f"data.{split}_size must be >= 0 (got {size})")


SPLITS = ("train", "dev", "test")


@dataclass
class TrainConfig:
    """Experiment configuration: optimizer, schedule, and the three sections it binds."""

    epochs: int = 20
    batch_size: int = 16

    # Adam
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    # Noam schedule
    warmup_steps: int = 400
    lr_factor: float = 1.0

    checkpoint_avg_k: int = 3
    grad_clip: float = 5.0  # global norm; 0 disables
    seed: int = 0

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        _require(self.epochs >= 1, f"training.epochs must be >= 1 (got {self.epochs})")
        _require(self.batch_size >= 1, f"training.batch_size must be >= 1 (got {self.batch_size})")
        _require(0.0 < self.beta1 < 1.0, f"training.beta1 must be in (0, 1) (got {self.beta1})")
        _require(0.0 < self.beta2 < 1.0, f"training.beta2 must be in (0, 1) (got {self.beta2})")
        _require(self.eps > 0, f"training.eps must be > 0 (got {self.eps})")
        _require(self.warmup_steps >= 1, f"training.warmup_steps must be >= 1 (got {self.warmup_steps})")
        _require(self.lr_factor > 0, f"training.lr_factor must be > 0 (got {self.lr_factor})")
        _require(
            self.checkpoint_avg_k >= 1,
            f"training.checkpoint_avg_k must be >= 1 (got {self.checkpoint_avg_k})",
        )
        _require(self.grad_clip >= 0, f"training.grad_clip must be >= 0 (got {self.grad_clip})")

        self.encoder.validate()
        self.augmentation.validate()
        self.data.validate()

        _require(
            self.encoder.vocab_size_ext == self.data.vocab_size + 1,
            f"encoder.vocab_size_ext ({self.encoder.vocab_size_ext}) must equal "
            f"data.vocab_size + 1 ({self.data.vocab_size + 1})",
        )
        _require(
            self.encoder.input_dim == self.data.feature_dim,
            f"encoder.input_dim ({self.encoder.input_dim}) must equal data.feature_dim ({self.data.feature_dim})",
        )
        _require(
            self.augmentation.w_feat <= self.encoder.model_dim,
            f"augmentation.w_feat ({self.augmentation.w_feat}) exceeds encoder.model_dim ({self.encoder.model_dim})",
        )


# Section name -> attribute of TrainConfig ("" = TrainConfig itself)
SECTIONS = {"encoder": "encoder", "augmentation": "augmentation", "training": "", "data": "data"}

# DataConfig fields that are per-split and never written to a file
_DATA_INTERNAL = ("num_utterances", "split")


def get_root_dir() -> Path:
    """Get the root directory of the repository."""
    # Assumes this file is in lib/
    return Path(__file__).parent.parent


def get_runs_dir() -> Path:
    """Get the directory holding experiment runs."""
    return get_root_dir() / "runs"


def get_run_dir(name: str) -> Path:
    """Get directory for a specific run."""
    return get_runs_dir() / name


def list_runs() -> List[str]:
    """List run names that have a saved config."""
    runs_dir = get_runs_dir()
    if not runs_dir.exists():
        return []
    return sorted(item.name for item in runs_dir.iterdir() if (item / "config.toml").exists())


def _section_object(cfg: TrainConfig, section: str) -> Any:
    attr = SECTIONS[section]
    return getattr(cfg, attr) if attr else cfg


def _section_fields(obj: Any) -> List[str]:
    names = [f.name for f in dataclasses.fields(obj) if f.name not in SECTIONS.values()]
    if isinstance(obj, DataConfig):
        names = [n for n in names if n not in _DATA_INTERNAL]
    return names


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, tuple):
        return "[" + ", ".join(str(v) for v in value) + "]"
    return repr(value)


def _coerce(name: str, current: Any, value: Any) -> Any:
    """Convert ``value`` to the type of the field's current value."""
    try:
        if isinstance(current, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("true", "yes", "1", "on"):
                return True
            if text in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            if isinstance(value, (list, tuple)):
                return tuple(int(v) for v in value)
            text = str(value).strip().strip("[]")
            return tuple(int(v) for v in text.split(",") if v.strip())
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {type(current).__name__}")


def config_to_dict(cfg: TrainConfig) -> Dict[str, Dict[str, Any]]:
    """Nested plain-data view of a config, in file order."""
    result = {}
    for section in SECTIONS:
        obj = _section_object(cfg, section)
        result[section] = {name: getattr(obj, name) for name in _section_fields(obj)}
    return result


def config_from_dict(data: Dict[str, Dict[str, Any]], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Build a config from nested plain data; unknown keys are errors."""
    base = base or TrainConfig()
    cfg = dataclasses.replace(
        base,
        encoder=dataclasses.replace(base.encoder),
        augmentation=dataclasses.replace(base.augmentation),
        data=dataclasses.replace(base.data),
    )
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        obj = _section_object(cfg, section)
        allowed = _section_fields(obj)
        for key, value in values.items():
            if key not in allowed:
                raise ConfigError(f"unknown config key {section}.{key}")
            setattr(obj, key, _coerce(f"{section}.{key}", getattr(obj, key), value))
    return cfg


def write_config(cfg: TrainConfig, path: Path) -> None:
    """Write an experiment config file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    lines = ["# Generated by ctcaug", ""]
    for section, values in config_to_dict(cfg).items():
        lines.append(f"[{section}]")
        width = max(len(k) for k in values)
        for key, value in values.items():
            lines.append(f"{key.ljust(width)} = {_format_value(value)}")
        lines.append("")

    with open(path, "w") as f:
        f.write("\n".join(lines))


def read_config(path: Path) -> TrainConfig:
    """Read an experiment config file; missing keys keep their defaults."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed config {path}: {e}")
    return config_from_dict(data)


def apply_overrides(cfg: TrainConfig, overrides: Sequence[str]) -> TrainConfig:
    """Apply ``section.key=value`` overrides, returning a new config."""
    data: Dict[str, Dict[str, Any]] = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        data.setdefault(section, {})[name] = value.strip()
    return config_from_dict(data, base=cfg)


def load_config(path: Optional[Path], overrides: Sequence[str] = ()) -> TrainConfig:
    """Read (or default), override, and validate a config."""
    cfg = read_config(path) if path else TrainConfig()
    cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg
