"""Local information blocks, joint representation, fusion layer and heads.

Layout of one forward pass::

    x --f_1--> z_1 \\
    x --f_2--> z_2  >-- concat --> Z --joint_head--> joint logits
      ...          /               |  \\-- Z without z_i --mask head--> masked logits[i]
    x --f_n--> z_n                 \\--f_g--> G --global_head--> global logits

The mask head is either one head per block reading the remaining blocks
(``per_mask_heads``) or the joint head applied to Z with block i zeroed
(``shared_head_zero_mask``).

Deployment scores always come from the global head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_MODES = ("shared_head_zero_mask", "per_mask_heads")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    n_blocks: int = 4
    block_hidden_dims: tuple[int, ...] = (32,)
    local_dim: int = 8
    fusion_hidden_dims: tuple[int, ...] = (32,)
    global_dim: int = 16
    n_classes: int = 2
    mask_mode: str = "per_mask_heads"
    detach_full_target: bool = False

    def __post_init__(self):
        object.__setattr__(self, "block_hidden_dims", tuple(int(d) for d in self.block_hidden_dims))
        object.__setattr__(self, "fusion_hidden_dims", tuple(int(d) for d in self.fusion_hidden_dims))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be positive, got {self.input_dim}")
        if self.n_blocks < 2:
            raise ConfigError(f"n_blocks must be at least 2, got {self.n_blocks}")
        if self.local_dim < 1:
            raise ConfigError(f"local_dim must be positive, got {self.local_dim}")
        if not 1 <= self.global_dim <= self.n_blocks * self.local_dim:
            raise ConfigError(
                f"global_dim must be in [1, n_blocks*local_dim={self.n_blocks * self.local_dim}], got {self.global_dim}"
            )
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")
        if any(d < 1 for d in self.block_hidden_dims + self.fusion_hidden_dims):
            raise ConfigError("hidden widths must be positive")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")

    @property
    def joint_dim(self) -> int:
        return self.n_blocks * self.local_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_hidden_dims"] = list(self.block_hidden_dims)
        d["fusion_hidden_dims"] = list(self.fusion_hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.tensors if n.startswith(prefix)]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {n: Tensor(t.values.copy(), requires_grad=t.requires_grad, name=n) for n, t in self.tensors.items()},
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            {n: Tensor(t.values.astype(dtype), requires_grad=t.requires_grad, name=n) for n, t in self.tensors.items()},
        )


@dataclass
class ForwardOutputs:
    locals: list[Tensor]
    joint: Tensor
    joint_logits: Tensor
    masked_logits: list[Tensor]
    global_: Tensor
    global_logits: Tensor
    joint_target: Tensor  # joint_logits, detached when the config asks for it


def _mlp_shapes(prefix: str, dims: Sequence[int]) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for k in range(len(dims) - 1):
        out.append((f"{prefix}.w{k}", (dims[k], dims[k + 1])))
        out.append((f"{prefix}.b{k}", (dims[k + 1],)))
    return out


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes, in initialisation order."""
    shapes = []
    for i in range(config.n_blocks):
        shapes += _mlp_shapes(f"block{i}", [config.input_dim, *config.block_hidden_dims, config.local_dim])
    shapes += _mlp_shapes("fusion", [config.joint_dim, *config.fusion_hidden_dims, config.global_dim])
    shapes += _mlp_shapes("joint_head", [config.joint_dim, config.n_classes])
    shapes += _mlp_shapes("global_head", [config.global_dim, config.n_classes])
    if config.mask_mode == "per_mask_heads":
        for i in range(config.n_blocks):
            shapes += _mlp_shapes(f"mask_head{i}", [config.joint_dim - config.local_dim, config.n_classes])
    return shapes


def init_model(config: ModelConfig, seed: int, dtype=np.float64) -> ModelParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config):
        if len(shape) == 2:
            bound = np.sqrt(6.0 / shape[0])
            values = rng.uniform(-bound, bound, size=shape)
        else:
            values = np.zeros(shape)
        tensors[name] = Tensor(values.astype(dtype), requires_grad=True, name=name)
    return ModelParams(config, tensors)


def _mlp(params: ModelParams, prefix: str, h: Tensor, final_relu: bool) -> Tensor:
    k = 0
    while f"{prefix}.w{k}" in params.tensors:
        h = ad.add(ad.matmul(h, params[f"{prefix}.w{k}"]), params[f"{prefix}.b{k}"])
        if f"{prefix}.w{k + 1}" in params.tensors or final_relu:
            h = ad.relu(h)
        k += 1
    return h


def _as_input(params: ModelParams, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=params["joint_head.w0"].dtype))
    if x.values.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ad.ShapeError(f"input must have shape (batch, {params.config.input_dim}), got {x.shape}")
    return x


def forward_local(params: ModelParams, x) -> list[Tensor]:
    x = _as_input(params, x)
    return [_mlp(params, f"block{i}", x, final_relu=True) for i in range(params.config.n_blocks)]


def masked_logits(params: ModelParams, joint: Tensor) -> list[Tensor]:
    """Predictions from Z with block i removed, one per block."""
    cfg = params.config
    masked = []
    for i in range(cfg.n_blocks):
        lo, hi = i * cfg.local_dim, (i + 1) * cfg.local_dim
        if cfg.mask_mode == "shared_head_zero_mask":
            masked.append(_mlp(params, "joint_head", ad.zero_mask_slice(joint, lo, hi), final_relu=False))
        else:
            masked.append(_mlp(params, f"mask_head{i}", ad.drop_slice(joint, lo, hi), final_relu=False))
    return masked


def heads_from_locals(params: ModelParams, locals_: Sequence[Tensor]) -> ForwardOutputs:
    cfg = params.config
    joint = ad.concat_last_dim(locals_)
    joint_logits = _mlp(params, "joint_head", joint, final_relu=False)
    masked = masked_logits(params, joint)
    global_, global_logits = fuse(params, joint)
    target = joint_logits.detach() if cfg.detach_full_target else joint_logits
    return ForwardOutputs(list(locals_), joint, joint_logits, masked, global_, global_logits, target)


def full_forward(params: ModelParams, x) -> ForwardOutputs:
    return heads_from_locals(params, forward_local(params, x))


def with_frozen(params: ModelParams, prefixes: tuple[str, ...]) -> ModelParams:
    """View of ``params`` in which tensors under ``prefixes`` carry no gradient."""
    return ModelParams(
        params.config,
        {n: (t.detach() if n.startswith(prefixes) else t) for n, t in params.tensors.items()},
    )


def fuse(params: ModelParams, joint: Tensor) -> tuple[Tensor, Tensor]:
    """(G, global logits) from a joint representation."""
    g = _mlp(params, "fusion", joint, final_relu=True)
    return g, _mlp(params, "global_head", g, final_relu=False)


def global_logits(params: ModelParams, x) -> np.ndarray:
    """Deployment path only (blocks, fusion, global head), no tape."""
    with ad.no_grad():
        return fuse(params, ad.concat_last_dim(forward_local(params, x)))[1].values


def predict_proba(params: ModelParams, x) -> np.ndarray:
    """Probability of class 1 for each row."""
    return ad.softmax_values(global_logits(params, x))[:, 1]


def local_features(params: ModelParams, x) -> list[np.ndarray]:
    with ad.no_grad():
        return [z.values for z in forward_local(params, x)]
