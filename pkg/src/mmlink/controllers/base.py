"""Base controller class."""
from abc import ABC, abstractmethod

import numpy as np

from ..env import SlotResult
from ..pomdp import Action, ObservableState
from ..scenario import ScenarioConfig


class BaseController(ABC):
    """Chooses one action per slot and learns from the slot outcome."""

    name = 'base'

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.n_ue = cfg.n_ue
        self.n_codebooks = cfg.n_codebooks
        self.frozen = False

    def freeze(self):
        """Stop learning; subsequent slots only exploit what was learned."""
        self.frozen = True

    @abstractmethod
    def act(self, obs: ObservableState) -> Action:
        """Pick the action for the current slot."""
        pass

    @abstractmethod
    def observe(self, result: SlotResult):
        """Consume the outcome of the slot executed with the last action."""
        pass

    @abstractmethod
    def save(self, path):
        pass

    @abstractmethod
    def load(self, path):
        pass
