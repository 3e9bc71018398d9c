"""Random small computation graphs over every differentiable op, for gradient checks."""

import numpy as np

from ibdetect import autodiff as ad
from ibdetect.losses import LossWeights, global_information_loss, local_information_loss, total_loss
from ibdetect.model import ModelConfig, full_forward, init_model

B, D = 3, 4


def _transforms(x, w, v, rng):
    limit = float(rng.uniform(-0.5, 0.5))
    return {
        "add": lambda t: ad.add(t, v),
        "sub": lambda t: ad.sub(t, x),
        "mul": lambda t: ad.mul(t, x),
        "div": lambda t: ad.div(t, ad.add(ad.square(x), 1.0)),
        "neg": ad.neg,
        "exp": lambda t: ad.exp(ad.mul(t, 0.2)),
        "log": lambda t: ad.log(ad.add(ad.softplus(t), 0.5)),
        "square": lambda t: ad.mul(ad.square(t), 0.25),
        "relu": ad.relu,
        "softplus": ad.softplus,
        "clamp_max": lambda t: ad.clamp_max(t, limit),
        "matmul": lambda t: ad.mul(ad.matmul(t, w), 0.5),
        "concat/zero_mask/drop": lambda t: ad.drop_slice(
            ad.concat_last_dim([ad.zero_mask_slice(t, 1, 2), ad.mul(t, x)]), 0, D
        ),
        "mean_axis": lambda t: ad.sub(t, ad.mean(t, axis=0)),
        "sum_axis": lambda t: ad.mul(t, ad.mul(ad.sum(x, axis=0), 0.3)),
        "log_softmax": ad.log_softmax,
    }


def _reductions(x, v, labels):
    return {
        "sum": ad.sum,
        "mean": ad.mean,
        "cross_entropy": lambda t: ad.cross_entropy_from_logits(t, labels),
        "kl": lambda t: ad.kl_from_logits(t, x),
        "take_last": lambda t: ad.mean(ad.take_last(t, labels)),
        "lil": lambda t: local_information_loss(t, [ad.mul(t, x), ad.add(t, v)]),
        "gil": lambda t: global_information_loss(x, t),
    }


def random_op_graph(seed):
    """Returns ``(build, leaves, ops)``; ``build()`` recomputes the scalar from the leaves."""
    rng = np.random.default_rng(seed)
    x = ad.Tensor(rng.uniform(-2, 2, (B, D)), requires_grad=True, name="x")
    w = ad.Tensor(rng.uniform(-2, 2, (D, D)) * 0.5, requires_grad=True, name="w")
    v = ad.Tensor(rng.uniform(-2, 2, (D,)), requires_grad=True, name="v")
    labels = rng.integers(0, D, size=B)
    transforms = _transforms(x, w, v, rng)
    reductions = _reductions(x, v, labels)
    names = list(rng.choice(list(transforms), size=int(rng.integers(2, 6)), replace=False))
    red = str(rng.choice(list(reductions)))

    def build():
        t = x
        for name in names:
            t = transforms[name](t)
        return reductions[red](t)

    return build, [x, w, v], names + [red]


def random_model_graph(seed):
    """Cross entropy + local + global information losses with auto weighting on a tiny model."""
    rng = np.random.default_rng(seed)
    mode = ("shared_head_zero_mask", "per_mask_heads")[seed % 2]
    cfg = ModelConfig(
        input_dim=5, n_blocks=int(rng.integers(2, 4)), block_hidden_dims=(4,), local_dim=3,
        fusion_hidden_dims=(4,), global_dim=3, mask_mode=mode,
    )
    params = init_model(cfg, seed)
    # zero biases put dead rows exactly on the relu kink; move them off it
    for name, t in params.tensors.items():
        if ".b" in name:
            t.values[:] = rng.uniform(-0.5, 0.5, t.shape)
    weights = LossWeights("auto")
    weights.raw["lil"].values[:] = rng.normal()
    weights.raw["gil"].values[:] = rng.normal()
    xb = rng.uniform(-2, 2, (4, 5))
    yb = rng.integers(0, 2, size=4)

    def build():
        out = full_forward(params, xb)
        ce = ad.add(
            ad.cross_entropy_from_logits(out.global_logits, yb),
            ad.cross_entropy_from_logits(out.joint_logits, yb),
        )
        lil = local_information_loss(out.joint_logits, out.masked_logits)
        gil = global_information_loss(out.joint_logits, out.global_logits)
        return total_loss(ce, lil, gil, weights)[0]

    return build, params.parameters() + weights.parameters(), [f"model[{mode}]"]


def graph_suite(n=100, model_every=5):
    """``n`` graphs; every ``model_every``-th one is a full model objective."""
    for seed in range(n):
        if seed % model_every == model_every - 1:
            yield random_model_graph(seed)
        else:
            yield random_op_graph(seed)


ALL_OPS = set(_transforms(*(ad.Tensor(np.ones((B, D))),) * 3, np.random.default_rng(0))) | set(
    _reductions(ad.Tensor(np.ones((B, D))), ad.Tensor(np.ones(D)), np.zeros(B, dtype=int))
)
