import numpy as np
import pytest
import torch

from tactbench.config import EnvConfig
from tactbench.datastore import collect_episode
from tactbench.simworld import PlugInsertionEnv, scripted_expert

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def env_cfg():
    return EnvConfig()


def make_expert_fn(cfg, seed):
    rng = np.random.default_rng([seed, 0xE4])
    return lambda t, state, obs: scripted_expert(state, cfg, rng)


@pytest.fixture(scope="session")
def expert_episode(env_cfg):
    env = PlugInsertionEnv(env_cfg, layout_seed=0)
    return collect_episode(env, 0, make_expert_fn(env_cfg, 0))


@pytest.fixture(scope="session")
def expert_episodes(env_cfg):
    env = PlugInsertionEnv(env_cfg, layout_seed=0)
    return [collect_episode(env, s, make_expert_fn(env_cfg, s)) for s in range(3)]


def finite_diff_check(loss_fn, params, n_probe=12, eps=1e-6, seed=0):
    """Compare analytic gradients of loss_fn() against central differences.

    ``params`` are double-precision tensors with requires_grad; a random
    subset of elements is probed. Returns the worst relative error.
    """
    rng = np.random.default_rng(seed)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.view(-1)
            gflat = g.view(-1)
            count = min(n_probe, flat.numel())
            idx = rng.choice(flat.numel(), size=count, replace=False)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                an = gflat[i].item()
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                worst = max(worst, rel)
    return worst
