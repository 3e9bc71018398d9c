"""Ablation sweeps: loss toggles and local-block counts.

Every setting in a sweep sees the same seeds and, for a given seed, the same
generated data. A failing run becomes a row with ``status="failed"`` and the
error text; it never stops the sweep.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace

import numpy as np

from .train import RunConfig, build_data, run_experiment

log = logging.getLogger(__name__)

SWEEP_KINDS = ("toggles", "n_blocks")
TOGGLE_GRID = ((False, False), (True, False), (False, True), (True, True))
DEFAULT_N_VALUES = (3, 4, 5, 6, 7)
ABLATION_COLUMNS = [
    "setting", "seed", "n_blocks", "enable_lil", "enable_gil", "status", "error",
    "val_acc", "val_auc", "val_logloss", "shifted_acc", "shifted_auc", "shifted_logloss",
    "mean_off_diagonal_mi", "mean_label_mi",
]


@dataclass(frozen=True)
class Setting:
    name: str
    run: RunConfig


def toggle_settings(base: RunConfig) -> list[Setting]:
    out = []
    for lil, gil in TOGGLE_GRID:
        name = f"{'+' if lil else '-'}LIL{'+' if gil else '-'}GIL"
        out.append(Setting(name, replace(base, train=replace(base.train, enable_lil=lil, enable_gil=gil))))
    return out


def block_settings(base: RunConfig, n_values=DEFAULT_N_VALUES) -> list[Setting]:
    return [Setting(f"n={n}", replace(base, model={**base.model, "n_blocks": int(n)})) for n in n_values]


def settings_for(base: RunConfig, kind: str, n_values=None) -> list[Setting]:
    if kind == "toggles":
        return toggle_settings(base)
    if kind == "n_blocks":
        return block_settings(base, n_values or DEFAULT_N_VALUES)
    raise ValueError(f"sweep kind must be one of {SWEEP_KINDS}, got {kind!r}")


def _row(setting: Setting, seed: int) -> dict:
    cfg = setting.run
    return {
        "setting": setting.name, "seed": seed, "n_blocks": cfg.model.get("n_blocks", 4),
        "enable_lil": cfg.train.enable_lil, "enable_gil": cfg.train.enable_gil,
        "status": "ok", "error": "",
    }


def ablation_sweep(base: RunConfig, kind: str, seeds, *, n_values=None, progress=None) -> list[dict]:
    """One train + eval per (setting, seed); rows follow ``ABLATION_COLUMNS``."""
    settings = settings_for(base, kind, n_values)
    rows = []
    for seed in seeds:
        seed = int(seed)
        try:
            data = build_data(base.with_seed(seed))
        except Exception as exc:  # every setting of this seed fails the same way
            data, data_error = None, f"{type(exc).__name__}: {exc}"
        for setting in settings:
            row = _row(setting, seed)
            try:
                if data is None:
                    raise RuntimeError(data_error)
                outcome = run_experiment(setting.run.with_seed(seed), data=data)
            except Exception as exc:
                log.warning("%s seed %d failed: %s", setting.name, seed, exc)
                row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            else:
                val, shifted = outcome.val, outcome.test
                row.update(
                    val_acc=val.accuracy, val_auc=val.auc, val_logloss=val.logloss,
                    shifted_acc=shifted.accuracy, shifted_auc=shifted.auc, shifted_logloss=shifted.logloss,
                    mean_off_diagonal_mi=val.mean_off_diagonal_mi,
                    mean_label_mi=float(np.mean(val.label_mi)),
                )
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in ABLATION_COLUMNS])
    return buf.getvalue()
