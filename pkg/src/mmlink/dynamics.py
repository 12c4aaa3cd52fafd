"""Device mobility inside circular regions and Markov blockage chains."""
import math
from dataclasses import dataclass, field

import numpy as np

# l_block value for a chain that has never been blocked
NEVER_BLOCKED = 10**6

MAX_BOUNDARY_RESAMPLES = 100


@dataclass
class MobilityState:
    """Random walk of one device inside its movement region."""
    position: np.ndarray
    region_center: np.ndarray
    region_radius: float
    speed_range: tuple = (0.0, 10.0)          # m/s
    rotation_range: tuple = (0.0, 0.0)        # rad/s, magnitude
    period: int = 20                          # slots between parameter refreshes
    heading: float = 0.0
    speed: float = 0.0
    rotation_rate: float = 0.0
    orientation: float = 0.0
    slots_since_refresh: int = 0

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    def refresh(self, rng: np.random.Generator):
        """Draw new speed, heading and signed rotation rate."""
        self.speed = rng.uniform(*self.speed_range)
        self.heading = rng.uniform(0.0, 2 * math.pi)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        self.rotation_rate = sign * rng.uniform(*self.rotation_range)
        self.slots_since_refresh = 0

    def _proposed(self, dt: float) -> np.ndarray:
        return self.position + self.velocity * dt

    def contains(self, point: np.ndarray) -> bool:
        return float(np.linalg.norm(point - self.region_center)) <= self.region_radius + 1e-12

    def step(self, dt: float, rng: np.random.Generator) -> 'MobilityState':
        if self.slots_since_refresh >= self.period:
            self.refresh(rng)

        target = self._proposed(dt)
        if not self.contains(target):
            # only the heading is re-drawn at the boundary
            for _ in range(MAX_BOUNDARY_RESAMPLES):
                self.heading = rng.uniform(0.0, 2 * math.pi)
                target = self._proposed(dt)
                if self.contains(target):
                    break
            else:
                # Head back to the centre without overshooting it
                to_center = self.region_center - self.position
                dist = float(np.linalg.norm(to_center))
                self.heading = math.atan2(to_center[1], to_center[0]) if dist > 0 else self.heading
                self.speed = min(self.speed, dist / dt)
                target = self._proposed(dt)

        self.position = target
        self.orientation = (self.orientation + self.rotation_rate * dt) % (2 * math.pi)
        self.slots_since_refresh += 1
        return self


def make_mobility(center, radius: float, speed_range, rotation_range_deg, period: int,
                  rng: np.random.Generator) -> MobilityState:
    """Device starting at its region centre with random orientation and motion."""
    center = np.asarray(center, dtype=float)
    m = MobilityState(
        position=center.copy(),
        region_center=center.copy(),
        region_radius=float(radius),
        speed_range=tuple(speed_range),
        rotation_range=tuple(math.radians(r) for r in rotation_range_deg),
        period=period,
    )
    m.refresh(rng)
    m.orientation = rng.uniform(0.0, 2 * math.pi)
    return m


def step_mobility(m: MobilityState, dt: float, rng: np.random.Generator) -> MobilityState:
    return m.step(dt, rng)


@dataclass
class BlockageChain:
    """Blockage state of one link: H slots of blockage left, l_block since onset."""
    probs: np.ndarray
    loss_range: tuple = (10.0, 30.0)
    H: int = 0
    l_block: int = NEVER_BLOCKED
    loss_db: float = 0.0
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.set_probs(self.probs)

    def set_probs(self, probs):
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"invalid blockage transition probabilities: {probs}")
        self.probs = probs
        self._cdf = np.cumsum(probs)

    @property
    def n_block(self) -> int:
        return len(self.probs) - 1

    @property
    def blocked(self) -> bool:
        return self.H > 0

    @property
    def current_loss(self) -> float:
        return self.loss_db if self.H > 0 else 0.0

    def step(self, rng: np.random.Generator) -> 'BlockageChain':
        if self.H >= 2:
            self.H -= 1
            self.l_block += 1
            return self
        # Leaving the last blocked slot or staying in LOS: draw the next blockage length
        n = min(int(np.searchsorted(self._cdf, rng.random(), side='right')), self.n_block)
        if n > 0:
            self.H = n
            self.l_block = 0
            self.loss_db = rng.uniform(*self.loss_range)
        else:
            self.H = 0
            self.l_block += 1
        return self


def step_blockage(c: BlockageChain, rng: np.random.Generator) -> BlockageChain:
    return c.step(rng)


def stationary_blocked_fraction(probs) -> float:
    """Long-run fraction of slots spent blocked for a chain with transition vector p."""
    probs = np.asarray(probs, dtype=float)
    mean_length = float(np.arange(len(probs)) @ probs)
    if mean_length == 0:
        return 0.0
    return mean_length / (probs[0] + mean_length)
