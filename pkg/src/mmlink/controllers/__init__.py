"""Controller modules."""
from .base import BaseController
from .mab import MabController
from .ppo import PpoController

CONTROLLERS = {
    'ppo': PpoController,
    'mab': MabController,
}

# Ablations of the MAB controller; 'mab-fixed-cb=<k>' is parsed separately
MAB_VARIANTS = {
    'mab': {},
    'mab-no-relay': {'use_relay': False},
    'mab-no-track': {'use_tracking': False},
}

FIXED_CB_PREFIX = 'mab-fixed-cb='


def is_controller_kind(kind: str) -> bool:
    if kind == 'ppo' or kind in MAB_VARIANTS:
        return True
    if kind.startswith(FIXED_CB_PREFIX):
        return kind[len(FIXED_CB_PREFIX):].isdigit()
    return False


def get_controller(kind: str, cfg, rng) -> BaseController:
    """Build a controller from its CLI name, e.g. 'ppo', 'mab-no-relay', 'mab-fixed-cb=3'."""
    if kind == 'ppo':
        return CONTROLLERS['ppo'](cfg, rng)
    if kind in MAB_VARIANTS:
        return CONTROLLERS['mab'](cfg, rng, **MAB_VARIANTS[kind])
    if kind.startswith(FIXED_CB_PREFIX):
        value = kind[len(FIXED_CB_PREFIX):]
        if value.isdigit():
            return CONTROLLERS['mab'](cfg, rng, fixed_codebook=int(value))
    raise ValueError(f"unknown controller '{kind}'")
