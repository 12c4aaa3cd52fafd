import dataclasses

import numpy as np
import pytest

from mmlink.env import MmWaveEnv
from mmlink.nn import MlpParams
from mmlink.pomdp import decode_action, feasibility_mask
from mmlink.scenario import ScenarioConfig


def make_config(n_ue: int = 5, **overrides) -> ScenarioConfig:
    """Reference scenario trimmed to the first n_ue UEs."""
    base = ScenarioConfig()
    if n_ue != base.n_ue:
        overrides = {
            'n_ue': n_ue,
            'ue_distances': base.ue_distances[:n_ue],
            'ue_angles_deg': base.ue_angles_deg[:n_ue],
            'traffic_split': tuple([1 / n_ue] * n_ue),
            'blockage_p': base.blockage_p[:n_ue],
            'move_radius': base.move_radius[:n_ue],
            **overrides,
        }
    return dataclasses.replace(base, **overrides)


def random_feasible_action(env: MmWaveEnv, rng: np.random.Generator):
    mask = feasibility_mask(env.observe(), env.cfg.n_codebooks)
    index = int(rng.choice(np.flatnonzero(mask)))
    return decode_action(index, env.n_ue, env.cfg.n_codebooks)


def numeric_grad(params, loss, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of loss(params) over the flat parameter vector."""
    flat = params.flat()
    grad = np.zeros_like(flat)
    for i in range(len(flat)):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss(MlpParams.from_flat(params.arch, up)) - loss(MlpParams.from_flat(params.arch, down))) / (2 * h)
    return grad


@pytest.fixture
def cfg():
    return make_config()


@pytest.fixture
def env(cfg):
    return MmWaveEnv(cfg, np.random.default_rng(7))


@pytest.fixture
def write_scenario(tmp_path):
    def write(text: str, name: str = 'scenario.conf'):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write
