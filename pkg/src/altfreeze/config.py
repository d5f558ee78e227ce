"""Plain-text ``key=value`` configuration.

Lines hold one ``key=value`` pair; ``#`` starts a comment and blank lines
are ignored.  Unknown keys are errors (no silent typo tolerance), missing
keys take the documented defaults, and the full effective configuration is
echoed into the metric-log header so every run records what it ran with.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import DatasetSpec
from .model import ModelSpec, reference_model_spec
from .trainer import TrainConfig

__all__ = ["ConfigError", "AppConfig", "parse_config", "parse_config_text", "DEFAULTS"]


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"expected on/off, got {raw!r}")


def _parse_ratio(raw: str) -> tuple[int, int]:
    parts = raw.split(":")
    if len(parts) != 2:
        raise ConfigError(f"expected a ratio like 20:1, got {raw!r}")
    try:
        i_s, i_t = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"expected integer ratio components, got {raw!r}") from exc
    if i_s < 1 or i_t < 1:
        raise ConfigError(f"ratio components must be >= 1, got {raw!r}")
    return i_s, i_t


def _parse_mix(raw: str) -> tuple[float, float, float]:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ConfigError(f"expected three weights like 1:1:1, got {raw!r}")
    try:
        mix = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"expected numeric weights, got {raw!r}") from exc
    if min(mix) < 0 or sum(mix) <= 0:
        raise ConfigError(f"mix weights must be non-negative and not all zero: {raw!r}")
    return mix  # type: ignore[return-value]


# key -> (parser, default). Defaults are the documented desk-scale settings.
DEFAULTS: dict[str, tuple] = {
    # clip geometry (shared by the model and the dataset generator)
    "channels": (int, 3),
    "frames": (int, 8),
    "height": (int, 32),
    "width": (int, 32),
    # training
    "batch_size": (int, 8),
    "epochs": (int, 40),
    "lr": (float, 0.05),
    "momentum": (float, 0.9),
    "freeze_ratio": (_parse_ratio, (20, 1)),
    "freezing": (_parse_bool, True),
    "seed": (int, 0),
    "flip": (_parse_bool, True),
    "cutout": (_parse_bool, True),
    "noise": (_parse_bool, True),
    "fake_clip_augs": (_parse_bool, True),
    "fake_aug_prob": (float, 0.5),
    "loss_reduction": (str, "mean"),
    "eval_every": (int, 0),
    # dataset
    "data_seed": (int, 0),
    "train_real": (int, 64),
    "train_fake": (int, 64),
    "val_real": (int, 0),
    "val_fake": (int, 0),
    "probe_real": (int, 24),
    "probe_fake": (int, 24),
    "train_mix": (_parse_mix, (1.0, 1.0, 1.0)),
    "blend_same_scene_prob": (float, 0.5),
}


@dataclass(frozen=True)
class AppConfig:
    train: TrainConfig
    data: DatasetSpec
    model: ModelSpec
    echo: dict[str, str]  # full effective configuration, for log headers


def _format_value(key: str, value) -> str:
    if key == "freeze_ratio":
        return f"{value[0]}:{value[1]}"
    if key == "train_mix":
        return ":".join(str(v) for v in value)
    if isinstance(value, bool):
        return "on" if value else "off"
    return str(value)


def parse_config_text(text: str) -> AppConfig:
    values = {key: default for key, (_, default) in DEFAULTS.items()}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw_line.strip()!r}")
        key, raw_value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = DEFAULTS[key][0]
        try:
            values[key] = parser(raw_value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: cannot parse {raw_value!r}") from exc

    if values["height"] % 4 != 0 or values["width"] % 4 != 0:
        raise ConfigError("height and width must be divisible by 4 (two spatial stride-2 stages)")

    clip_shape = (values["channels"], values["frames"], values["height"], values["width"])
    i_s, i_t = values["freeze_ratio"]
    try:
        train = TrainConfig(
            batch_size=values["batch_size"],
            clip_len=values["frames"],
            epochs=values["epochs"],
            lr=values["lr"],
            momentum=values["momentum"],
            freeze_spatial_iters=i_s,
            freeze_temporal_iters=i_t,
            seed=values["seed"],
            freezing=values["freezing"],
            flip=values["flip"],
            cutout=values["cutout"],
            noise=values["noise"],
            fake_clip_augs=values["fake_clip_augs"],
            fake_aug_prob=values["fake_aug_prob"],
            loss_reduction=values["loss_reduction"],
            eval_every=values["eval_every"],
        )
        data = DatasetSpec(
            clip_shape=clip_shape,
            seed=values["data_seed"],
            train_real=values["train_real"],
            train_fake=values["train_fake"],
            val_real=values["val_real"],
            val_fake=values["val_fake"],
            probe_real=values["probe_real"],
            probe_fake=values["probe_fake"],
            train_mix=values["train_mix"],
            blend_same_scene_prob=values["blend_same_scene_prob"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model = reference_model_spec(clip_shape)
    echo = {key: _format_value(key, values[key]) for key in DEFAULTS}
    return AppConfig(train=train, data=data, model=model, echo=echo)


def parse_config(path=None) -> AppConfig:
    """Parse a config file; ``None`` yields all defaults."""
    if path is None:
        return parse_config_text("")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())
