"""Empirical MAB controller: maxweight scheduling with Thompson-sampled relays and codebooks."""
import numpy as np

from ..channel import McsTable
from ..checkpoint import load_checkpoint, save_checkpoint
from ..env import MmWaveEnv, SlotResult
from ..errors import CheckpointError
from ..pomdp import Action, ObservableState, action_templates, feasibility_mask
from ..scenario import ScenarioConfig
from .base import BaseController


class MabController(BaseController):
    """Decides scheduling, relay, codebook and tracking as four sequential sub-actions.

    Posteriors are Dirichlet counts over MCS levels: alpha_relay[m, relay, dest]
    and alpha_cb[m, codebook, rx]. The first slots explore every allowed action
    template `init_visits` times before the learned policy takes over.
    """

    name = 'mab'

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator,
                 use_relay: bool = True, fixed_codebook: int = None, use_tracking: bool = True):
        super().__init__(cfg, rng)
        if fixed_codebook is not None and not 1 <= fixed_codebook <= self.n_codebooks:
            raise ValueError(f"fixed codebook {fixed_codebook} outside [1, {self.n_codebooks}]")
        self.use_relay = use_relay
        self.fixed_codebook = fixed_codebook
        self.use_tracking = use_tracking

        self.rates = McsTable.from_mbps(cfg.mcs_rates_mbps, cfg.mcs_rss_dbm).rates
        n_levels = len(self.rates)
        self.alpha_relay = np.ones((n_levels, self.n_ue, self.n_ue))
        self.alpha_cb = np.ones((n_levels, self.n_codebooks, self.n_ue))
        self.d_hat = np.zeros(self.n_ue)
        self.n_rx = np.zeros(self.n_ue, dtype=np.int64)
        self.z_hat = np.zeros(self.n_ue)
        self.n_slots = 0

        dest, rx, cb, track = action_templates(self.n_ue, self.n_codebooks)
        self.allowed = np.ones(len(dest), dtype=bool)
        if not use_relay:
            self.allowed &= dest == rx
        if fixed_codebook is not None:
            self.allowed &= cb == fixed_codebook
        if not use_tracking:
            self.allowed &= track == 0
        self.init_visits = cfg.mab_init
        self.visits = np.zeros(len(dest), dtype=np.int64)

        self.last_action: Action = None
        self.prev_main = None     # (action, main LinkOutcome) of the previous slot

    # Exploration

    @property
    def exploring(self) -> bool:
        return (not self.frozen and self.init_visits > 0
                and self.visits[self.allowed].min() < self.init_visits)

    def _explore(self, obs: ObservableState) -> Action:
        mask = feasibility_mask(obs, self.n_codebooks) & self.allowed
        if not mask.any():
            raise RuntimeError("no allowed action to explore in this state")
        index = int(np.where(mask, self.visits, np.iinfo(np.int64).max).argmin())
        self.visits[index] += 1
        dest, rx, cb, track = (arr[index] for arr in action_templates(self.n_ue, self.n_codebooks))
        return Action(int(dest), int(rx), int(cb), int(track))

    # Sub-actions

    def schedule_dest(self, obs: ObservableState) -> int:
        """Empirical maxweight: argmax q_u * d_hat_u over UEs free of D2D duty."""
        tracked = obs.tracked_ue
        if tracked is not None:
            return tracked
        weights = np.where(obs.b_d2d, -np.inf, obs.q * self.d_hat)
        return int(np.argmax(weights)) + 1

    def _score(self, alpha: np.ndarray) -> float:
        """Expected rate under a posterior draw, or under the posterior mean when frozen."""
        if self.frozen:
            return float(self.rates @ (alpha / alpha.sum()))
        return float(self.rates @ self.rng.dirichlet(alpha))

    def select_relay(self, dest: int, obs: ObservableState) -> int:
        scores = np.full(self.n_ue, -np.inf)
        for u in np.flatnonzero(~np.asarray(obs.b_d2d, dtype=bool)):
            scores[u] = self._score(self.alpha_relay[:, u, dest - 1])
        return int(np.argmax(scores)) + 1

    def select_codebook(self, rx: int) -> int:
        scores = [self._score(self.alpha_cb[:, k, rx - 1]) for k in range(self.n_codebooks)]
        return int(np.argmax(scores)) + 1

    def predict_queues(self, obs: ObservableState, rx: int) -> np.ndarray:
        served = np.zeros(self.n_ue)
        served[rx - 1] = self.d_hat[rx - 1]
        return np.maximum(obs.q - served, 0.0) + self.z_hat

    def decide_tracking(self, obs: ObservableState, dest: int, rx: int) -> int:
        if dest != rx:
            return 0
        q_next = self.predict_queues(obs, rx)
        return int(int(np.argmax(q_next * self.d_hat)) + 1 == rx)

    def act(self, obs: ObservableState) -> Action:
        if self.exploring:
            action = self._explore(obs)
        else:
            dest = self.schedule_dest(obs)
            forced = obs.tracked_ue is not None
            rx = dest if forced or not self.use_relay else self.select_relay(dest, obs)
            cb = self.fixed_codebook or self.select_codebook(rx)
            track = self.decide_tracking(obs, dest, rx) if self.use_tracking else 0
            action = Action(dest, rx, cb, track)
        self.last_action = action
        return action

    # Learning

    def update_service_estimate(self, u: int, departed: float, via_d2d: bool = False):
        """Running mean of service samples for 0-based UE u; D2D deliveries count half."""
        sample = 0.5 * departed if via_d2d else departed
        self.n_rx[u] += 1
        self.d_hat[u] += (sample - self.d_hat[u]) / self.n_rx[u]

    def _randomized_mcs(self, mcs: int, coeff: float) -> int:
        return mcs * int(self.rng.random() < coeff)

    def observe(self, result: SlotResult):
        a, main = result.action, result.main
        if self.frozen:
            self.prev_main = (a, main)
            return

        self.n_slots += 1
        self.z_hat += (result.arrivals - self.z_hat) / self.n_slots

        # a relay is the main rx too; its own queue departs nothing in that slot
        self.update_service_estimate(a.rx - 1, float(result.departures[a.rx - 1]))
        if not a.relayed:
            m = self._randomized_mcs(main.mcs, main.eff_coeff)
            self.alpha_relay[m, a.rx - 1, a.dest - 1] += 1

        if result.d2d is not None:
            tx, rx = result.d2d_pair
            if self.prev_main is None or (self.prev_main[0].rx, self.prev_main[0].dest) != (tx, rx):
                raise RuntimeError(f"D2D completion {tx}->{rx} without a matching relay slot")
            prev = self.prev_main[1]
            self.update_service_estimate(rx - 1, float(result.departures[rx - 1]), via_d2d=True)
            d2d = result.d2d
            if d2d.rate < prev.rate:
                m = self._randomized_mcs(prev.mcs, 0.5 * prev.eff_coeff)
            else:
                m = self._randomized_mcs(d2d.mcs, 0.5 * d2d.eff_coeff)
            self.alpha_relay[m, tx - 1, rx - 1] += 1

        m = self._randomized_mcs(main.mcs, main.eff_coeff)
        self.alpha_cb[m, a.cb - 1, a.rx - 1] += 1
        self.prev_main = (a, main)

    # Persistence

    def _state_vector(self) -> np.ndarray:
        return np.concatenate([
            self.alpha_relay.ravel(), self.alpha_cb.ravel(), self.d_hat,
            self.n_rx.astype(float), self.z_hat, [float(self.n_slots)], self.visits.astype(float),
        ])

    def save(self, path):
        values = self._state_vector()
        meta = {'n_ue': self.n_ue, 'n_codebooks': self.n_codebooks,
                'n_levels': len(self.rates), 'size': len(values)}
        save_checkpoint(path, 'mab', meta, values)

    def load(self, path):
        meta, values = load_checkpoint(path, 'mab')
        shape = (meta.get('n_ue'), meta.get('n_codebooks'), meta.get('n_levels'))
        if shape != (self.n_ue, self.n_codebooks, len(self.rates)) or len(values) != len(self._state_vector()):
            raise CheckpointError(f"{path}: MAB checkpoint for U, K, levels = {shape} does not match scenario")
        offset = 0

        def take(n):
            nonlocal offset
            chunk = values[offset:offset + n]
            offset += n
            return chunk

        self.alpha_relay = take(self.alpha_relay.size).reshape(self.alpha_relay.shape).copy()
        self.alpha_cb = take(self.alpha_cb.size).reshape(self.alpha_cb.shape).copy()
        self.d_hat = take(self.n_ue).copy()
        self.n_rx = take(self.n_ue).astype(np.int64)
        self.z_hat = take(self.n_ue).copy()
        self.n_slots = int(take(1)[0])
        self.visits = take(len(self.visits)).astype(np.int64)


def init_explore(env: MmWaveEnv, controller: MabController, progress_callback=None) -> int:
    """Run exploration slots until every allowed template was used init_visits times."""
    slots = 0
    obs = env.observe()
    while controller.exploring:
        result = env.execute_slot(controller.act(obs))
        controller.observe(result)
        obs = result.observation
        slots += 1
    if progress_callback:
        progress_callback(f"Initial exploration: {slots} slots")
    return slots
