import itertools
import sys
import math

import numpy as np
import pytest

from ibdetect.oracle import DiscreteJoint


def brute_marginal(joint: DiscreteJoint, names):
    """Dict-based marginal by looping over every cell; shares no code with the library."""
    idx = [joint.names.index(n) for n in names]
    out = {}
    for cell in itertools.product(*[range(c) for c in joint.cardinalities]):
        key = tuple(cell[i] for i in idx)
        out[key] = out.get(key, 0.0) + float(joint.table[cell])
    return out


def brute_entropy(joint, names):
    return -sum(p * math.log(p) for p in brute_marginal(joint, names).values() if p > 0)


def brute_cmi(joint, a, b, c):
    """Sum p(a,b,c) ln[p(c) p(a,b,c) / (p(a,c) p(b,c))] by explicit loops."""
    p_abc = brute_marginal(joint, a + b + c)
    p_ac = brute_marginal(joint, a + c)
    p_bc = brute_marginal(joint, b + c)
    p_c = brute_marginal(joint, c) if c else {(): 1.0}
    na, nb = len(a), len(b)
    total = 0.0
    for key, p in p_abc.items():
        if p <= 0:
            continue
        ka, kb, kc = key[:na], key[na:na + nb], key[na + nb:]
        total += p * math.log(p_c[kc] * p / (p_ac[ka + kc] * p_bc[kb + kc]))
    return total


def xor_joint() -> DiscreteJoint:
    t = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            t[a, b, a ^ b] = 0.25
    return DiscreteJoint([("z1", 2), ("z2", 2), ("y", 2)], t)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pairwise_auc(scores, labels):
    """Concordance over every (positive, negative) pair, ties worth one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def small_run(seed=0, epochs=2, **train):
    """A run that trains in about a second."""
    from dataclasses import replace

    from ibdetect.train import DataConfig, RunConfig, TrainConfig

    data = replace(DataConfig(), n_train=2000, n_val=400, n_test=400)
    model = {"n_blocks": 3, "block_hidden_dims": (8,), "local_dim": 2, "fusion_hidden_dims": (8,), "global_dim": 4}
    return RunConfig(TrainConfig(seed=seed, epochs=epochs, batch_size=64, lr=1e-2, **train), data, model)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[n])
