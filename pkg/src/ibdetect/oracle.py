"""Exact information measures on small dense discrete joint distributions.

Everything here is brute force over a dense probability table. The module is
the ground truth the learned losses are checked against, so it favours
transparency over speed: marginals are explicit sums, conditionals are explicit
divisions, and every quantity is reported in nats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CELL_CAP = 10**7
KL_EPS = 1e-12
NATS_TO_BITS = 1.0 / math.log(2.0)


class JointError(ValueError):
    """Raised for malformed joints or invalid variable selections."""


def to_bits(nats: float) -> float:
    return nats * NATS_TO_BITS


def _plogp_sum(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


class DiscreteJoint:
    """Dense joint probability table over named finite variables.

    ``table`` has one axis per variable, in the order of ``variables``.
    """

    def __init__(self, variables: Sequence[tuple[str, int]], table, *, cap: int = DEFAULT_CELL_CAP):
        variables = [(str(name), int(card)) for name, card in variables]
        names = [name for name, _ in variables]
        if not variables:
            raise JointError("a joint needs at least one variable")
        if len(set(names)) != len(names):
            raise JointError(f"duplicate variable names in {names}")
        cards = tuple(card for _, card in variables)
        if any(card < 1 for card in cards):
            raise JointError(f"cardinalities must be >= 1, got {cards}")
        size = math.prod(cards)
        if size > cap:
            raise JointError(f"joint has {size} cells, above the cap of {cap}")
        table = np.asarray(table, dtype=np.float64)
        if table.size != size:
            raise JointError(f"table has {table.size} cells, expected {size} for cardinalities {cards}")
        table = table.reshape(cards)
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise JointError("probabilities must be finite and non-negative")
        total = float(table.sum())
        if abs(total - 1.0) > 1e-12:
            raise JointError(f"probabilities sum to {total!r}, not 1")
        self.variables = variables
        self.table = table
        self.table.setflags(write=False)
        self._axis = {name: i for i, name in enumerate(names)}

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.variables]

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(card for _, card in self.variables)

    def axes(self, names: Iterable[str]) -> list[int]:
        out = []
        for name in names:
            if name not in self._axis:
                raise JointError(f"unknown variable {name!r}; joint has {self.names}")
            out.append(self._axis[name])
        return out

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        """Marginal table over ``names``, axes in the order given."""
        axes = self.axes(names)
        if len(set(axes)) != len(axes):
            raise JointError(f"repeated variables in {list(names)}")
        drop = tuple(i for i in range(self.table.ndim) if i not in axes)
        m = self.table.sum(axis=drop)
        kept = sorted(axes)
        return np.transpose(m, [kept.index(a) for a in axes])

    def to_text(self) -> str:
        header = "vars: " + ",".join(f"{n}:{c}" for n, c in self.variables)
        return "\n".join([header] + [repr(float(v)) for v in self.table.ravel()]) + "\n"

    @classmethod
    def from_text(cls, text: str, *, cap: int = DEFAULT_CELL_CAP) -> "DiscreteJoint":
        variables = None
        values = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if variables is None:
                if not line.startswith("vars:"):
                    raise JointError(f"line {lineno}: expected 'vars: name:card,...' header")
                variables = []
                for item in line[len("vars:"):].split(","):
                    name, _, card = item.strip().partition(":")
                    if not name or not card.isdigit():
                        raise JointError(f"line {lineno}: bad variable spec {item.strip()!r}")
                    variables.append((name, int(card)))
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise JointError(f"line {lineno}: not a probability: {line!r}") from None
        if variables is None:
            raise JointError("missing 'vars:' header")
        return cls(variables, np.array(values), cap=cap)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path, *, cap: int = DEFAULT_CELL_CAP) -> "DiscreteJoint":
        return cls.from_text(Path(path).read_text(), cap=cap)

    def __repr__(self) -> str:
        return f"DiscreteJoint({self.variables})"


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise JointError("a categorical needs a 1-d probability vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise JointError(f"not a probability vector: {p}")
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class BoundReport:
    lhs_nats: float
    rhs_nats: float

    @property
    def residual(self) -> float:
        return self.lhs_nats - self.rhs_nats

    @property
    def holds(self) -> bool:
        return self.residual >= -1e-9

    def to_dict(self) -> dict:
        return {"lhs": self.lhs_nats, "rhs": self.rhs_nats, "residual": self.residual, "holds": self.holds}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _as_names(vars_) -> list[str]:
    if isinstance(vars_, str):
        return [vars_]
    return list(vars_)


def _check_disjoint(*groups: list[str]) -> None:
    seen: set[str] = set()
    for group in groups:
        if len(set(group)) != len(group):
            raise JointError(f"repeated variables in {group}")
        overlap = seen.intersection(group)
        if overlap:
            raise JointError(f"variable sets overlap on {sorted(overlap)}")
        seen.update(group)


def entropy(joint: DiscreteJoint, vars_) -> float:
    names = _as_names(vars_)
    if not names:
        raise JointError("entropy needs a non-empty variable subset")
    return _plogp_sum(joint.marginal(names))


def _entropy_or_zero(joint: DiscreteJoint, names: list[str]) -> float:
    return entropy(joint, names) if names else 0.0


def conditional_entropy(joint: DiscreteJoint, target, given) -> float:
    t, g = _as_names(target), _as_names(given)
    if not t:
        raise JointError("conditional entropy needs a non-empty target")
    _check_disjoint(t, g)
    return max(entropy(joint, t + g) - _entropy_or_zero(joint, g), 0.0)


def mutual_information(joint: DiscreteJoint, a, b) -> float:
    a, b = _as_names(a), _as_names(b)
    if not a or not b:
        raise JointError("mutual information needs two non-empty variable sets")
    _check_disjoint(a, b)
    # sort so that I(A;B) and I(B;A) run the identical float computation
    first, second = sorted([a, b])
    value = entropy(joint, first) + entropy(joint, second) - entropy(joint, first + second)
    return max(value, 0.0)


def conditional_mutual_information(joint: DiscreteJoint, a, b, c) -> float:
    """I(A;B|C) = sum p(a,b,c) ln[p(c) p(a,b,c) / (p(a,c) p(b,c))].

    An empty ``c`` reduces to plain mutual information.
    """
    a, b, c = _as_names(a), _as_names(b), _as_names(c)
    if not a or not b:
        raise JointError("conditional mutual information needs non-empty A and B")
    _check_disjoint(a, b, c)
    # flatten each group to a single axis: shape (|A|, |B|, |C|)
    m = joint.marginal(a + b + c)
    na = math.prod(m.shape[: len(a)])
    nb = math.prod(m.shape[len(a): len(a) + len(b)])
    p_abc = m.reshape(na, nb, -1)
    p_ac = p_abc.sum(axis=1, keepdims=True)
    p_bc = p_abc.sum(axis=0, keepdims=True)
    p_c = p_abc.sum(axis=(0, 1), keepdims=True)
    mask = p_abc > 0
    num = (p_c * p_abc)[mask]
    den = np.broadcast_to(p_ac * p_bc, p_abc.shape)[mask]
    value = float((p_abc[mask] * np.log(num / den)).sum())
    return max(value, 0.0)


def interaction_information(joint: DiscreteJoint, a, b, c) -> float:
    """McGill co-information, signed; equals I(A;B) - I(A;B|C).

    Evaluated by inclusion-exclusion over the seven marginal entropies, so the
    two-term form above is an independent check rather than a definition.
    """
    a, b, c = _as_names(a), _as_names(b), _as_names(c)
    if not a or not b or not c:
        raise JointError("interaction information needs three non-empty variable sets")
    _check_disjoint(a, b, c)
    h = lambda *groups: entropy(joint, [v for g in groups for v in g])  # noqa: E731
    return h(a) + h(b) + h(c) - h(a, b) - h(a, c) - h(b, c) + h(a, b, c)


def kl_divergence(p: Categorical, q: Categorical, eps: float = KL_EPS) -> float:
    if p.size != q.size:
        raise JointError(f"support sizes differ: {p.size} vs {q.size}")
    mask = p.probs > 0
    qv = np.maximum(q.probs[mask], eps)
    return max(float((p.probs[mask] * np.log(p.probs[mask] / qv)).sum()), 0.0)


def _split_locals(joint: DiscreteJoint, target: str, locals_) -> list[str]:
    joint.axes([target])
    if locals_ is None:
        locals_ = [n for n in joint.names if n != target]
    locals_ = _as_names(locals_)
    if len(locals_) < 2:
        raise JointError(f"need at least two local variables besides {target!r}, got {locals_}")
    _check_disjoint([target], locals_)
    joint.axes(locals_)
    return locals_


def local_objective_lhs(joint: DiscreteJoint, target: str = "y", locals_=None) -> float:
    """Sum over i of I(z_i; y | all other z)."""
    zs = _split_locals(joint, target, locals_)
    return sum(
        conditional_mutual_information(joint, [z], [target], [w for w in zs if w != z]) for z in zs
    )


def local_objective_rhs(joint: DiscreteJoint, target: str = "y", locals_=None, eps: float = KL_EPS) -> float:
    """Sum over i of E_{p(Z)} KL[p(y|Z) || p(y|Z without z_i)], from exact conditionals."""
    zs = _split_locals(joint, target, locals_)
    p_zy = joint.marginal(zs + [target])  # axes: z_1..z_n, y
    p_z = p_zy.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        full = np.where(p_z > 0, p_zy / p_z, 0.0)
    total = 0.0
    for i in range(len(zs)):
        p_rest_y = p_zy.sum(axis=i, keepdims=True)
        p_rest = p_rest_y.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            masked = np.where(p_rest > 0, p_rest_y / p_rest, 0.0)
        masked = np.broadcast_to(masked, full.shape)
        cell = full > 0
        terms = np.zeros(full.shape)
        terms[cell] = full[cell] * np.log(full[cell] / np.maximum(masked[cell], eps))
        kl_per_z = terms.sum(axis=-1, keepdims=True)
        total += float((p_z * kl_per_z).sum())
    return total


def verify_theorem(joint: DiscreteJoint, target: str = "y", locals_=None) -> BoundReport:
    return BoundReport(
        lhs_nats=local_objective_lhs(joint, target, locals_),
        rhs_nats=local_objective_rhs(joint, target, locals_),
    )


def chain_rule_residual(joint: DiscreteJoint, target: str = "y", locals_=None) -> float:
    """|I(y; Z) - sum_i I(z_i; y | z_1..z_{i-1})|."""
    zs = _split_locals(joint, target, locals_)
    whole = mutual_information(joint, [target], zs)
    parts = sum(
        conditional_mutual_information(joint, [z], [target], zs[:i]) for i, z in enumerate(zs)
    )
    return abs(whole - parts)


def random_joint(
    seed,
    cardinalities: Sequence[int],
    concentration: float = 1.0,
    names: Sequence[str] | None = None,
    *,
    cap: int = DEFAULT_CELL_CAP,
) -> DiscreteJoint:
    """Dirichlet(concentration) table, reproducible from ``seed``."""
    if concentration <= 0:
        raise JointError(f"concentration must be positive, got {concentration}")
    cards = [int(c) for c in cardinalities]
    size = math.prod(cards)
    if size > cap:
        raise JointError(f"joint has {size} cells, above the cap of {cap}")
    if names is None:
        names = [f"v{i}" for i in range(len(cards))]
    rng = np.random.default_rng(seed)
    table = rng.dirichlet(np.full(size, float(concentration)))
    # dirichlet output sums to 1 up to rounding; renormalise once more
    table = table / table.sum()
    return DiscreteJoint(list(zip(names, cards)), table, cap=cap)


def random_local_joint(seed, z_cards: Sequence[int], y_card: int = 2, concentration: float = 1.0) -> DiscreteJoint:
    """Random joint over ``z1..zn`` and a label ``y`` (last axis)."""
    names = [f"z{i + 1}" for i in range(len(z_cards))] + ["y"]
    return random_joint(seed, list(z_cards) + [y_card], concentration, names)


def empirical_joint(columns: dict[str, np.ndarray], cards: dict[str, int] | None = None) -> DiscreteJoint:
    """Plug-in joint from integer-coded samples, one column per variable."""
    names = list(columns)
    data = [np.asarray(columns[n], dtype=np.int64) for n in names]
    if not data or len({d.size for d in data}) != 1 or data[0].size == 0:
        raise JointError("columns must be non-empty and of equal length")
    cards = dict(cards or {})
    shape = []
    for name, d in zip(names, data):
        if d.min() < 0:
            raise JointError(f"column {name!r} has negative codes")
        shape.append(max(int(cards.get(name, 0)), int(d.max()) + 1))
    flat = np.ravel_multi_index(data, shape)
    counts = np.bincount(flat, minlength=math.prod(shape)).astype(np.float64)
    return DiscreteJoint(list(zip(names, shape)), counts / counts.sum())
