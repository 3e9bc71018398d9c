"""Flat key-value run configuration with typed sections.

Example::

    format_version = 1

    [model]
    n_blocks = 4
    block_hidden_dims = 32

    [train]
    lr = 5e-4
    epochs = 20

Lists are comma separated, booleans are ``true``/``false``, ``none`` clears an
optional value. Keys not given take the library defaults; ``format_version``,
``model.n_blocks``, ``train.epochs`` and ``train.lr`` are required.
"""

from __future__ import annotations

from dataclasses import replace
from importlib import resources
from pathlib import Path

from .synth import FactorSpec
from .train import DataConfig, RunConfig, TrainConfig

CONFIG_FORMAT_VERSION = 1


class ConfigFileError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _optional(parse):
    def inner(text: str):
        return None if text.lower() == "none" else parse(text)
    return inner


SCHEMA = {
    "": {"format_version": int},
    "model": {
        "n_blocks": int, "block_hidden_dims": _ints, "local_dim": int, "fusion_hidden_dims": _ints,
        "global_dim": int, "n_classes": int, "mask_mode": str, "detach_full_target": _bool,
    },
    "train": {
        "lr": float, "epochs": int, "batch_size": int, "scheduler": str, "beta1": float,
        "beta2": float, "eps": float, "seed": int, "oversample": _bool,
    },
    "loss": {
        "weight_mode": str, "alpha": float, "beta": float, "enable_lil": _bool, "enable_gil": _bool,
        "kappa": float, "joint_ce": _bool, "routing": str,
    },
    "data": {
        "k_factors": int, "dims_per_factor": int, "label_rule": str, "label_noise": float,
        "nuisance_dims": int, "class_imbalance": _optional(float), "amplitude": _floats,
        "noise_std": float, "nuisance_std": float, "mixing": float, "crosstalk": float,
        "product_factors": _ints, "structure_seed": int, "n_train": int, "n_val": int, "n_test": int, "seed": _optional(int),
        "shift_noise_scale": float, "shift_mixing": float, "shift_crosstalk": float,
        "shift_amplitude_scale": _floats,
    },
    "sweep": {"kind": str, "n_values": _ints, "seeds": _ints},
}
REQUIRED = [("", "format_version"), ("model", "n_blocks"), ("train", "epochs"), ("train", "lr")]


def parse_config_text(text: str, *, source: str = "<config>") -> dict[str, dict]:
    """Parse into ``{section: {key: typed value}}``; errors carry the line number."""
    out: dict[str, dict] = {name: {} for name in SCHEMA}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigFileError(f"{where}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA or not section:
                raise ConfigFileError(f"{where}: unknown section [{section}]")
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigFileError(f"{where}: expected 'key = value', got {line!r}")
        if key not in SCHEMA[section]:
            label = f"[{section}] " if section else ""
            raise ConfigFileError(f"{where}: unknown key {label}{key!r}")
        if key in out[section]:
            raise ConfigFileError(f"{where}: duplicate key {key!r}")
        try:
            out[section][key] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigFileError(f"{where}: bad value for {key!r}: {exc}") from None
    for section, key in REQUIRED:
        if key not in out[section]:
            name = f"{section}.{key}" if section else key
            raise ConfigFileError(f"{source}: missing required key {name!r}")
    if out[""]["format_version"] != CONFIG_FORMAT_VERSION:
        raise ConfigFileError(
            f"{source}: format_version {out['']['format_version']} is not supported (expected {CONFIG_FORMAT_VERSION})"
        )
    return out


def run_config_from_sections(sections: dict[str, dict]) -> RunConfig:
    data = dict(sections["data"])
    shift_kwargs = {}
    for key in ("noise_scale", "mixing", "crosstalk", "amplitude_scale"):
        if f"shift_{key}" in data:
            shift_kwargs[key] = data.pop(f"shift_{key}")
    sizes = {k: data.pop(k) for k in ("n_train", "n_val", "n_test", "seed") if k in data}
    defaults = DataConfig()
    base = defaults.spec
    if data.get("k_factors", base.k_factors) != base.k_factors:
        # per-factor defaults only make sense for the default factor count
        base = replace(base, k_factors=data["k_factors"], amplitude=1.0, product_factors=(), vote_weights=None)
    spec = FactorSpec.from_dict({**base.to_dict(), **data})
    shift = replace(defaults.shift, **shift_kwargs) if shift_kwargs else defaults.shift
    if "amplitude_scale" not in shift_kwargs and spec.k_factors != defaults.spec.k_factors:
        shift = replace(shift, amplitude_scale=1.0)
    train = TrainConfig(**sections["train"], **sections["loss"])
    return RunConfig(train=train, data=DataConfig(spec, shift, **sizes), model=dict(sections["model"]))


def load_run_config(path) -> tuple[RunConfig, dict]:
    """Returns the run config and the raw ``[sweep]`` section."""
    path = Path(path)
    sections = parse_config_text(path.read_text(), source=str(path))
    try:
        run = run_config_from_sections(sections)
        run.model_config()
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"{path}: {exc}") from None
    return run, sections["sweep"]


def default_config_text() -> str:
    return resources.files("ibdetect").joinpath("configs/default.cfg").read_text()


def default_config_path() -> Path:
    return Path(str(resources.files("ibdetect").joinpath("configs/default.cfg")))
