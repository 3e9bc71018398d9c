"""Synthetic binary tasks with known, disjoint ground-truth factors.

Each sample draws ``k`` independent latent signs ``s_j in {-1, +1}``. Factor
``j`` is rendered into its own input segment as ``amplitude_j * s_j * u_j`` plus
Gaussian noise, where ``u_j`` is a fixed unit direction. Factors listed in
``product_factors`` are instead carried by the sign of a product of two
projections, so no linear read-out sees them. The label is a rule
over the latent signs, flipped with probability ``label_noise``. Trailing
nuisance dimensions are pure noise.

The rendering geometry (directions) comes from ``structure_seed`` so that
datasets drawn with different sample seeds share label semantics.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

LABEL_RULES = ("noisy_majority", "parity", "weighted_vote")
DATASET_FORMAT_VERSION = 1


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class FactorSpec:
    k_factors: int = 4
    dims_per_factor: int = 8
    label_rule: str = "noisy_majority"
    label_noise: float = 0.05
    nuisance_dims: int = 16
    class_imbalance: float | None = 0.5
    amplitude: tuple[float, ...] | float = 1.0
    noise_std: float = 1.0
    nuisance_std: float = 1.0
    mixing: float = 0.0
    crosstalk: float = 0.0
    vote_weights: tuple[float, ...] | None = None
    product_factors: tuple[int, ...] = ()
    structure_seed: int = 0

    def __post_init__(self):
        if self.k_factors < 2:
            raise SpecError(f"k_factors must be at least 2, got {self.k_factors}")
        if self.dims_per_factor < 1 or self.nuisance_dims < 0:
            raise SpecError("dims_per_factor must be >= 1 and nuisance_dims >= 0")
        if self.label_rule not in LABEL_RULES:
            raise SpecError(f"label_rule must be one of {LABEL_RULES}, got {self.label_rule!r}")
        if not 0.0 <= self.label_noise < 0.5:
            raise SpecError(f"label_noise must be in [0, 0.5), got {self.label_noise}")
        if self.class_imbalance is not None and not 0.0 < self.class_imbalance < 1.0:
            raise SpecError(f"class_imbalance must be in (0, 1), got {self.class_imbalance}")
        amp = self.amplitude
        amp = (float(amp),) * self.k_factors if np.isscalar(amp) else tuple(float(a) for a in amp)
        if len(amp) != self.k_factors:
            raise SpecError(f"need {self.k_factors} amplitudes, got {len(amp)}")
        object.__setattr__(self, "amplitude", amp)
        if any(not math.isfinite(a) or a <= 0 for a in amp):
            raise SpecError(f"every factor needs a positive finite amplitude, got {amp}")
        for name in ("noise_std", "nuisance_std"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise SpecError(f"{name} must be positive and finite, got {v}")
        if not 0.0 <= self.mixing <= 1.0:
            raise SpecError(f"mixing must be in [0, 1], got {self.mixing}")
        if not math.isfinite(self.crosstalk) or self.crosstalk < 0:
            raise SpecError(f"crosstalk must be non-negative, got {self.crosstalk}")
        prod = tuple(int(j) for j in self.product_factors)
        if any(not 0 <= j < self.k_factors for j in prod) or len(set(prod)) != len(prod):
            raise SpecError(f"product_factors must be distinct indices below {self.k_factors}, got {prod}")
        if prod and self.dims_per_factor < 2:
            raise SpecError("product rendering needs dims_per_factor >= 2")
        object.__setattr__(self, "product_factors", prod)
        if self.vote_weights is not None:
            w = tuple(float(x) for x in self.vote_weights)
            if len(w) != self.k_factors or any(x <= 0 for x in w):
                raise SpecError(f"vote_weights must be {self.k_factors} positive numbers")
            object.__setattr__(self, "vote_weights", w)

    @property
    def input_dim(self) -> int:
        return self.k_factors * self.dims_per_factor + self.nuisance_dims

    def segment(self, j: int) -> slice:
        return slice(j * self.dims_per_factor, (j + 1) * self.dims_per_factor)

    @property
    def nuisance(self) -> slice:
        return slice(self.k_factors * self.dims_per_factor, self.input_dim)

    def weights(self) -> np.ndarray:
        if self.vote_weights is not None:
            return np.array(self.vote_weights)
        return 1.0 / np.sqrt(np.arange(1, self.k_factors + 1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["amplitude"] = list(self.amplitude)
        d["product_factors"] = list(self.product_factors)
        if self.vote_weights is not None:
            d["vote_weights"] = list(self.vote_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        d = dict(d)
        if isinstance(d.get("amplitude"), list):
            d["amplitude"] = tuple(d["amplitude"])
        if isinstance(d.get("product_factors"), list):
            d["product_factors"] = tuple(d["product_factors"])
        if isinstance(d.get("vote_weights"), list):
            d["vote_weights"] = tuple(d["vote_weights"])
        return cls(**d)


@dataclass(frozen=True)
class Shift:
    """Perturbation of rendering noise and factor mixing. The default is no shift."""

    noise_scale: float = 1.0
    mixing: float = 0.0
    crosstalk: float = 0.0
    amplitude_scale: tuple[float, ...] | float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        if not np.isscalar(self.amplitude_scale):
            d["amplitude_scale"] = list(self.amplitude_scale)
        return d


# Benchmark task: factor 0 is a strong linear cue, factors 1..3 are weaker and
# only visible through products of two coordinates. The shifted set weakens
# factor 0 and rotates every factor's directions.
DEFAULT_SPEC = FactorSpec(amplitude=(1.5, 1.0, 1.0, 1.0), product_factors=(1, 2, 3))
DEFAULT_SHIFT = Shift(mixing=0.2, amplitude_scale=(0.3, 1.0, 1.0, 1.0))


def label_from_factors(spec: FactorSpec, factors: np.ndarray) -> np.ndarray:
    """Noise-free labels from latent signs (rows of +-1).

    ``noisy_majority`` breaks ties (possible for even k) with the first factor.
    """
    s = np.asarray(factors, dtype=np.int64)
    if spec.label_rule == "noisy_majority":
        total = s.sum(axis=1)
        return np.where(total != 0, total > 0, s[:, 0] > 0).astype(np.int64)
    if spec.label_rule == "parity":
        return ((s > 0).sum(axis=1) % 2).astype(np.int64)
    return (s @ spec.weights() > 0).astype(np.int64)


@dataclass
class SynthDataset:
    inputs: np.ndarray
    labels: np.ndarray
    factor_values: np.ndarray
    noise_mask: np.ndarray
    split: np.ndarray
    group_ids: np.ndarray
    spec: FactorSpec
    seed: int | list
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, rows) -> "SynthDataset":
        rows = np.asarray(rows)
        return SynthDataset(
            self.inputs[rows], self.labels[rows], self.factor_values[rows], self.noise_mask[rows],
            self.split[rows], self.group_ids[rows], self.spec, self.seed, dict(self.meta),
        )

    def subset(self, split: str) -> "SynthDataset":
        return self.take(np.flatnonzero(self.split == split))

    def split_sizes(self) -> dict[str, int]:
        names, counts = np.unique(self.split, return_counts=True)
        return {str(n): int(c) for n, c in zip(names, counts)}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.inputs.astype("<f4"), self.labels.astype("<i8"), self.split.astype("U8")):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _geometry(spec: FactorSpec):
    rng = np.random.default_rng([spec.structure_seed, 7919])
    d = spec.dims_per_factor
    base = []
    for _ in range(spec.k_factors):
        q, _ = np.linalg.qr(rng.standard_normal((d, min(d, 3))))
        base.append(q.T)  # rows: primary, rotation target, crosstalk direction
    return base


def _directions(spec: FactorSpec):
    """Per-factor (render direction, crosstalk direction), unit length."""
    out = []
    theta = spec.mixing * math.pi / 2
    for q in _geometry(spec):
        primary = q[0]
        alt = q[1] if q.shape[0] > 1 else q[0]
        leak = q[2] if q.shape[0] > 2 else alt
        out.append((math.cos(theta) * primary + math.sin(theta) * alt, leak))
    return out


def _product_render(spec: FactorSpec, j: int, signs: np.ndarray, rng) -> np.ndarray:
    """Encode a sign as sign(a * b) of two latent magnitudes on two directions.

    No linear function of the segment correlates with the sign.
    """
    q = _geometry(spec)[j]
    first = q[0]
    second = q[1] if q.shape[0] > 1 else q[0]
    theta = spec.mixing * math.pi / 2
    first = math.cos(theta) * first + math.sin(theta) * second
    a = np.abs(rng.standard_normal(signs.shape[0])) + 0.5
    b = np.abs(rng.standard_normal(signs.shape[0])) + 0.5
    sa = rng.choice(np.array([-1.0, 1.0]), size=signs.shape[0])
    a = a * sa
    b = b * sa * signs
    amp = spec.amplitude[j]
    return amp * (a[:, None] * first + b[:, None] * second)


def generate_dataset(
    spec: FactorSpec,
    n: int,
    seed: int,
    *,
    val_fraction: float = 0.0,
    group_size: int = 1,
    split_name: str = "train",
) -> SynthDataset:
    """Draw ``n`` rows. ``val_fraction`` of them (whole groups) are tagged ``val``.

    With ``group_size > 1`` consecutive rows form a group sharing latents and
    label (frames of one video); rendering noise is drawn per row.
    """
    if n < 1:
        raise SpecError(f"n must be at least 1, got {n}")
    if group_size < 1:
        raise SpecError(f"group_size must be at least 1, got {group_size}")
    if not 0.0 <= val_fraction < 1.0:
        raise SpecError(f"val_fraction must be in [0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    n_groups = -(-n // group_size)
    k = spec.k_factors

    # latents for a pool of groups; class quotas are filled in pool order
    if spec.class_imbalance is None:
        pool = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_groups, k))
        flips = rng.random(n_groups) < spec.label_noise
        labels = label_from_factors(spec, pool) ^ flips
    else:
        want1 = int(round(n_groups * spec.class_imbalance))
        want = {0: n_groups - want1, 1: want1}
        chosen_f, chosen_flip, chosen_y = [], [], []
        while want[0] or want[1]:
            pool = rng.choice(np.array([-1, 1], dtype=np.int8), size=(4 * n_groups + 64, k))
            flips = rng.random(pool.shape[0]) < spec.label_noise
            ys = label_from_factors(spec, pool) ^ flips
            for f, fl, y in zip(pool, flips, ys):
                if want[int(y)]:
                    want[int(y)] -= 1
                    chosen_f.append(f)
                    chosen_flip.append(fl)
                    chosen_y.append(y)
        pool = np.array(chosen_f, dtype=np.int8)
        flips = np.array(chosen_flip, dtype=bool)
        labels = np.array(chosen_y, dtype=np.int64)

    group_ids = np.repeat(np.arange(n_groups), group_size)[:n]
    factors = pool[group_ids]
    x = np.empty((n, spec.input_dim))
    for j, (direction, leak) in enumerate(_directions(spec)):
        if j in spec.product_factors:
            seg = _product_render(spec, j, factors[:, j], rng)
        else:
            seg = spec.amplitude[j] * factors[:, j:j + 1] * direction
        if spec.crosstalk:
            neighbour = factors[:, (j + 1) % k:(j + 1) % k + 1]
            seg = seg + spec.crosstalk * spec.amplitude[(j + 1) % k] * neighbour * leak
        x[:, spec.segment(j)] = seg + spec.noise_std * rng.standard_normal((n, spec.dims_per_factor))
    x[:, spec.nuisance] = spec.nuisance_std * rng.standard_normal((n, spec.nuisance_dims))
    x = x.astype(np.float32).astype(np.float64)

    split = np.full(n, split_name, dtype="<U8")
    if val_fraction > 0:
        n_val_groups = int(round(n_groups * val_fraction))
        val_groups = rng.permutation(n_groups)[:n_val_groups]
        split[np.isin(group_ids, val_groups)] = "val"
    return SynthDataset(
        inputs=x,
        labels=labels[group_ids].astype(np.int64),
        factor_values=factors,
        noise_mask=flips[group_ids].astype(bool),
        split=split,
        group_ids=group_ids.astype(np.int64),
        spec=spec,
        seed=seed if isinstance(seed, (int, np.integer)) else [int(v) for v in seed],
        meta={"group_size": group_size, "val_fraction": val_fraction},
    )


def oversample_balance(dataset: SynthDataset, seed: int) -> SynthDataset:
    """Duplicate minority-class training rows (with replacement) until classes match."""
    train = np.flatnonzero(dataset.split == "train")
    counts = np.bincount(dataset.labels[train], minlength=2)
    if counts.min() == 0:
        raise SpecError(f"training split has a single class (counts {counts.tolist()})")
    minority = int(np.argmin(counts))
    deficit = int(counts.max() - counts.min())
    if deficit == 0:
        return dataset
    rng = np.random.default_rng([seed, 104729])
    source = train[dataset.labels[train] == minority]
    extra = rng.choice(source, size=deficit, replace=True)
    out = dataset.take(np.concatenate([np.arange(len(dataset)), extra]))
    out.meta["oversampled"] = deficit
    return out


def distribution_shift_variant(spec: FactorSpec, shift: Shift) -> FactorSpec:
    """Same label rule, different input distribution."""
    scale = shift.amplitude_scale
    scale = (float(scale),) * spec.k_factors if np.isscalar(scale) else tuple(float(s) for s in scale)
    if len(scale) != spec.k_factors:
        raise SpecError(f"need {spec.k_factors} amplitude scales, got {len(scale)}")
    if any(not math.isfinite(s) or s <= 0 for s in scale):
        raise SpecError(f"amplitude scales must be positive; {scale} would remove label dependence")
    if not math.isfinite(shift.noise_scale) or shift.noise_scale <= 0:
        raise SpecError(f"noise_scale must be positive and finite, got {shift.noise_scale}")
    if shift == Shift():
        return spec
    return replace(
        spec,
        amplitude=tuple(a * s for a, s in zip(spec.amplitude, scale)),
        noise_std=spec.noise_std * shift.noise_scale,
        mixing=min(1.0, spec.mixing + shift.mixing),
        crosstalk=spec.crosstalk + shift.crosstalk,
    )


def make_benchmark(spec: FactorSpec, shift: Shift, n_train: int, n_val: int, n_test: int, seed: int):
    """(train+val dataset, shifted test dataset), from seeds derived from ``seed``."""
    data = generate_dataset(spec, n_train + n_val, seed=[seed, 1], val_fraction=n_val / (n_train + n_val))
    test = generate_dataset(distribution_shift_variant(spec, shift), n_test, seed=[seed, 2], split_name="test")
    data.seed = test.seed = int(seed)
    return data, test


# persistence ---------------------------------------------------------------

def save_dataset(dataset: SynthDataset, stem) -> None:
    """Write ``stem.json`` (sidecar), ``stem.bin`` (float32 LE matrix) and ``stem.csv``."""
    stem = Path(stem)
    sidecar = {
        "format_version": DATASET_FORMAT_VERSION,
        "spec": dataset.spec.to_dict(),
        "seed": dataset.seed,
        "n": len(dataset),
        "input_dim": int(dataset.inputs.shape[1]),
        "split_sizes": dataset.split_sizes(),
        "meta": dataset.meta,
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    stem.with_suffix(".bin").write_bytes(np.ascontiguousarray(dataset.inputs, dtype="<f4").tobytes())
    with stem.with_suffix(".csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        k = dataset.factor_values.shape[1]
        w.writerow(["label", "noise", "split", "group"] + [f"f{j}" for j in range(k)])
        for i in range(len(dataset)):
            w.writerow(
                [int(dataset.labels[i]), int(dataset.noise_mask[i]), dataset.split[i], int(dataset.group_ids[i])]
                + [int(v) for v in dataset.factor_values[i]]
            )


def load_dataset(stem) -> SynthDataset:
    stem = Path(stem)
    sidecar = json.loads(stem.with_suffix(".json").read_text())
    if sidecar.get("format_version") != DATASET_FORMAT_VERSION:
        raise SpecError(f"unsupported dataset format_version {sidecar.get('format_version')!r}")
    n, d = sidecar["n"], sidecar["input_dim"]
    blob = stem.with_suffix(".bin").read_bytes()
    if len(blob) != 4 * n * d:
        raise SpecError(f"dataset blob has {len(blob)} bytes, expected {4 * n * d}")
    inputs = np.frombuffer(blob, dtype="<f4").reshape(n, d).astype(np.float64)
    with stem.with_suffix(".csv").open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return SynthDataset(
        inputs=inputs,
        labels=np.array([int(r[0]) for r in rows], dtype=np.int64),
        factor_values=np.array([[int(v) for v in r[4:]] for r in rows], dtype=np.int8),
        noise_mask=np.array([r[1] == "1" for r in rows]),
        split=np.array([r[2] for r in rows], dtype="<U8"),
        group_ids=np.array([int(r[3]) for r in rows], dtype=np.int64),
        spec=FactorSpec.from_dict(sidecar["spec"]),
        seed=sidecar["seed"],
        meta=sidecar.get("meta", {}),
    )
