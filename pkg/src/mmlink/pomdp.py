"""Controller-facing view of the simulator: observations, actions, masks, rewards."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InfeasibleActionError


@dataclass(frozen=True)
class Action:
    """Main-link destination, main-link receiver, codebook and tracking flag (1-based ids)."""
    dest: int
    rx: int
    cb: int
    track: int = 0

    def __post_init__(self):
        if self.track not in (0, 1):
            raise InfeasibleActionError(f"track must be 0 or 1, got {self.track}")
        if self.track and self.dest != self.rx:
            raise InfeasibleActionError("tracking requires main_dest == main_rx")

    @property
    def relayed(self) -> bool:
        return self.dest != self.rx


@dataclass
class ObservableState:
    q: np.ndarray
    b_d2d: np.ndarray
    b_track: np.ndarray
    l_block: np.ndarray

    @property
    def n_ue(self) -> int:
        return len(self.q)

    @property
    def tracked_ue(self):
        """1-based id of the UE that must be served next slot, or None."""
        hits = np.flatnonzero(self.b_track)
        return int(hits[0]) + 1 if len(hits) else None


@dataclass
class ScaledObservation:
    q_scaled: np.ndarray
    b_d2d: np.ndarray
    b_track: np.ndarray
    p_block: np.ndarray


def action_space_size(n_ue: int, n_codebooks: int) -> int:
    return n_ue * n_ue * n_codebooks + n_ue * n_codebooks


def encode_action(a: Action, n_ue: int, n_codebooks: int) -> int:
    if not (1 <= a.dest <= n_ue and 1 <= a.rx <= n_ue and 1 <= a.cb <= n_codebooks):
        raise InfeasibleActionError(f"action {a} out of range for U={n_ue}, K={n_codebooks}")
    if a.track:
        return n_ue * n_ue * n_codebooks + (a.dest - 1) * n_codebooks + (a.cb - 1)
    return ((a.dest - 1) * n_ue + (a.rx - 1)) * n_codebooks + (a.cb - 1)


def decode_action(index: int, n_ue: int, n_codebooks: int) -> Action:
    size = action_space_size(n_ue, n_codebooks)
    if not 0 <= index < size:
        raise InfeasibleActionError(f"action index {index} outside [0, {size})")
    untracked = n_ue * n_ue * n_codebooks
    if index >= untracked:
        dest, cb = divmod(index - untracked, n_codebooks)
        return Action(dest + 1, dest + 1, cb + 1, 1)
    pair, cb = divmod(index, n_codebooks)
    dest, rx = divmod(pair, n_ue)
    return Action(dest + 1, rx + 1, cb + 1, 0)


@lru_cache(maxsize=None)
def action_templates(n_ue: int, n_codebooks: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(dest, rx, cb, track) arrays for every action index."""
    rows = [decode_action(i, n_ue, n_codebooks) for i in range(action_space_size(n_ue, n_codebooks))]
    arrays = tuple(np.array([getattr(a, name) for a in rows]) for name in ('dest', 'rx', 'cb', 'track'))
    for arr in arrays:
        arr.flags.writeable = False
    return arrays


def feasibility_mask(s: ObservableState, n_codebooks: int) -> np.ndarray:
    """Boolean vector over action indices; False marks infeasible actions."""
    dest, rx, _, _ = action_templates(s.n_ue, n_codebooks)
    busy = np.asarray(s.b_d2d, dtype=bool)
    mask = ~busy[dest - 1] & ~busy[rx - 1]
    tracked = s.tracked_ue
    if tracked is not None:
        mask &= (dest == tracked) & (rx == tracked)
    if not mask.any():
        raise RuntimeError(f"no feasible action for state {s}")
    return mask


def check_feasible(a: Action, s: ObservableState):
    """Raise InfeasibleActionError when `a` violates the half-duplex or tracking constraints."""
    for name in ('dest', 'rx'):
        if not 1 <= getattr(a, name) <= s.n_ue:
            raise InfeasibleActionError(f"{a}: {name} outside 1..{s.n_ue}")
    if s.b_d2d[a.dest - 1] or s.b_d2d[a.rx - 1]:
        raise InfeasibleActionError(f"{a} schedules a UE busy on a D2D link")
    tracked = s.tracked_ue
    if tracked is not None and not (a.dest == tracked and a.rx == tracked):
        raise InfeasibleActionError(f"{a} ignores the tracking commitment to UE {tracked}")


def scale_observation(s: ObservableState, n_block_tilde: int) -> ScaledObservation:
    q = np.asarray(s.q, dtype=float)
    top = q.max() if len(q) else 0.0
    q_scaled = q / top if top > 0 else np.zeros_like(q)
    l_block = np.asarray(s.l_block, dtype=float)
    p_block = np.maximum((n_block_tilde - l_block) / (n_block_tilde + 1), 0.0)
    return ScaledObservation(q_scaled, np.asarray(s.b_d2d, dtype=bool),
                             np.asarray(s.b_track, dtype=bool), p_block)


def observation_vector(scaled: ScaledObservation) -> np.ndarray:
    """Flat network input of length 4U."""
    return np.concatenate([
        scaled.q_scaled,
        scaled.b_d2d.astype(float),
        scaled.b_track.astype(float),
        scaled.p_block,
    ])


@dataclass(frozen=True)
class RewardScaler:
    """Normalizes a per-slot packet count by the packets x Gbps could carry."""
    x_gbps: float = 2.0
    t_slot: float = 10e-3
    packet_bits: int = 18496

    def __post_init__(self):
        if self.n_packets <= 0:
            raise ValueError("reward scale must be positive")

    @property
    def n_packets(self) -> float:
        return self.x_gbps * 1e9 * self.t_slot / self.packet_bits


def reward(departures, scaler: RewardScaler) -> float:
    return float(np.sum(departures)) / scaler.n_packets
