"""Training objectives: cross entropy, local and global information losses.

The local information loss is ``exp(-min(kappa, sum_i KL[P_Z || P_{Z minus z_i}]))``
and lies in (0, 1]. The global information loss is ``KL[P_Z || P_G]``. Both KLs
are batch means over rows of categorical predictions given as logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_KAPPA = 20.0
BALANCE_FLOOR = 1e-4


def kl_sum(joint_logits: Tensor, masked_logits: Sequence[Tensor]) -> Tensor:
    if len(masked_logits) < 2:
        raise ValueError(f"need at least two masked predictions, got {len(masked_logits)}")
    total = ad.kl_from_logits(joint_logits, masked_logits[0])
    for m in masked_logits[1:]:
        total = ad.add(total, ad.kl_from_logits(joint_logits, m))
    return total


def lil_from_kl_sum(total_kl: Tensor, kappa: float = DEFAULT_KAPPA) -> Tensor:
    return ad.exp(ad.neg(ad.clamp_max(total_kl, kappa)))


def local_information_loss(joint_logits: Tensor, masked_logits: Sequence[Tensor], kappa: float = DEFAULT_KAPPA) -> Tensor:
    return lil_from_kl_sum(kl_sum(joint_logits, masked_logits), kappa)


def global_information_loss(joint_logits: Tensor, global_logits: Tensor) -> Tensor:
    return ad.kl_from_logits(joint_logits, global_logits)


@dataclass
class LossWeights:
    """Fixed ``alpha``/``beta`` or learnable balance scales ``c = softplus(raw) + 1e-4``.

    In auto mode each information loss ``L`` contributes
    ``L / (2 c^2) + ln(1 + c^2)``.
    """

    mode: str = "auto"
    alpha: float = 1.0
    beta: float = 1.0
    raw: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("fixed", "auto"):
            raise ValueError(f"weight mode must be 'fixed' or 'auto', got {self.mode!r}")
        if self.mode == "fixed" and (self.alpha < 0 or self.beta < 0):
            raise ValueError(f"fixed weights must be non-negative, got alpha={self.alpha}, beta={self.beta}")
        if self.mode == "auto":
            # raw = softplus^{-1}(1 - floor) so that c starts at 1
            start = math.log(math.expm1(1.0 - BALANCE_FLOOR))
            for key in ("lil", "gil"):
                if key not in self.raw:
                    self.raw[key] = Tensor(np.array([start]), requires_grad=True, name=f"balance.{key}")

    def scale(self, key: str) -> Tensor:
        return ad.add(ad.softplus(self.raw[key]), BALANCE_FLOOR)

    def scale_value(self, key: str) -> float:
        return float(np.logaddexp(0.0, self.raw[key].values[0]) + BALANCE_FLOOR)

    def effective(self, key: str) -> float:
        """Multiplier currently applied to the ``key`` loss."""
        if self.mode == "fixed":
            return self.alpha if key == "lil" else self.beta
        return 1.0 / (2.0 * self.scale_value(key) ** 2)

    def parameters(self) -> list[Tensor]:
        return list(self.raw.values()) if self.mode == "auto" else []

    def weighted(self, key: str, loss: Tensor) -> Tensor:
        if self.mode == "fixed":
            return ad.mul(loss, self.alpha if key == "lil" else self.beta)
        c2 = ad.square(self.scale(key))
        term = ad.add(ad.div(loss, ad.mul(c2, 2.0)), ad.log(ad.add(c2, 1.0)))
        return ad.sum(term)


@dataclass
class LossBreakdown:
    ce: float
    lil: float | None
    gil: float | None
    total: float
    kl_sum_lil: float | None = None
    effective_alpha: float | None = None
    effective_beta: float | None = None


def total_loss(
    ce: Tensor,
    lil: Tensor | None,
    gil: Tensor | None,
    weights: LossWeights,
    kl_sum_lil: Tensor | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Combine the component losses; ``None`` disables a term."""
    total = ce
    if lil is not None:
        total = ad.add(total, weights.weighted("lil", lil))
    if gil is not None:
        total = ad.add(total, weights.weighted("gil", gil))
    total = ad.sum(total)
    breakdown = LossBreakdown(
        ce=ce.item(),
        lil=None if lil is None else lil.item(),
        gil=None if gil is None else gil.item(),
        total=total.item(),
        kl_sum_lil=None if kl_sum_lil is None else kl_sum_lil.item(),
        effective_alpha=weights.effective("lil") if lil is not None else None,
        effective_beta=weights.effective("gil") if gil is not None else None,
    )
    return total, breakdown
