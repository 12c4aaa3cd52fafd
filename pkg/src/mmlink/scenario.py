"""Scenario configuration: reference defaults, key/value loading, change schedules."""
import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError

# Reference topology: distance (m) and angle (deg) of each UE from the AP
DEFAULT_UE_DISTANCES = (10.0, 10.0, 15.0, 25.0, 30.0)
DEFAULT_UE_ANGLES_DEG = (5.0, 85.0, 45.0, 10.0, 80.0)
DEFAULT_TRAFFIC_SPLIT = (1 / 7, 3 / 7, 1 / 7, 1 / 7, 1 / 7)
DEFAULT_BLOCKAGE_P = (0.0026, 0.0026, 0.1, 0.0026, 0.0026)

# Single-carrier PHY rates (Mbps) and the RSS (dBm) needed to sustain each level
DEFAULT_MCS_RATES_MBPS = (385.0, 770.0, 962.5, 1155.0, 1251.25, 1540.0,
                          1925.0, 2310.0, 2502.5, 3080.0, 3850.0, 4620.0)
DEFAULT_MCS_RSS_DBM = (-64.0, -62.5, -61.0, -59.5, -58.0, -56.5,
                       -55.0, -53.5, -52.0, -50.5, -49.0, -47.5)

DEFAULT_CODEBOOK_BEAMS = (24, 32, 64, 128, 256, 512)

CHANGE_PREFIX = 'change@'

# Fields a scenario change may touch; everything else fixes shapes or the run itself
CHANGEABLE_FIELDS = (
    'ue_distances', 'ue_angles_deg', 'move_radius', 'ap_move_radius',
    'traffic_gbps', 'traffic_split', 'blockage_p', 'd2d_blockage_p',
    'speed_range', 'rotation_range_deg', 'mobility_period',
    'block_loss_db', 'shadowing_db', 'margin_db', 'p_ap_dbm', 'p_ue_dbm',
)

PER_UE_FIELDS = ('ue_distances', 'ue_angles_deg', 'traffic_split', 'blockage_p', 'move_radius')


@dataclass(frozen=True)
class ScenarioConfig:
    """Every simulation, controller and harness parameter of a run."""
    # System
    n_ue: int = 5
    slot_duration: float = 10e-3
    meas_duration: float = 10e-6
    track_region_rad: float = math.pi / 6
    packet_bits: int = 2312 * 8
    traffic_gbps: float = 1.0
    traffic_split: tuple = DEFAULT_TRAFFIC_SPLIT
    carrier_ghz: float = 60.0
    bandwidth_hz: float = 2.16e9
    shadowing_db: float = 2.0
    margin_db: float = 10.0
    # Hardware
    n_arrays_ap: int = 4
    n_arrays_ue: int = 4
    codebook_beams: tuple = DEFAULT_CODEBOOK_BEAMS
    elevation_deg: float = 75.0
    p_ap_dbm: float = 15.0
    p_ue_dbm: float = 10.0
    mcs_rates_mbps: tuple = DEFAULT_MCS_RATES_MBPS
    mcs_rss_dbm: tuple = DEFAULT_MCS_RSS_DBM
    # Blockage and mobility
    block_loss_db: tuple = (10.0, 30.0)
    min_block_slots: int = 2
    max_block_slots: int = 6
    blockage_p: tuple = DEFAULT_BLOCKAGE_P
    d2d_blockage_p: float = 0.0026
    speed_range: tuple = (0.0, 10.0)
    rotation_range_deg: tuple = (0.0, 10.0)
    mobility_period: int = 20
    move_radius: tuple = (5.0, 5.0, 5.0, 5.0, 5.0)
    ap_move_radius: float = 5.0
    ue_distances: tuple = DEFAULT_UE_DISTANCES
    ue_angles_deg: tuple = DEFAULT_UE_ANGLES_DEG
    # PPO controller
    ppo_gamma: float = 0.999
    ppo_clip: float = 0.2
    ppo_entropy: float = 0.05
    ppo_batch: int = 5
    ppo_lr: float = 1e-3
    ppo_lr_decay: float = 0.9
    ppo_lr_decay_every: int = 20
    ppo_hidden: tuple = (128, 128, 128)
    ppo_activation: str = 'tanh'
    ppo_shared_trunk: bool = True
    ppo_critic_bootstrap: str = 'last'
    reward_scale_gbps: float = 2.0
    n_block_tilde: int = 10
    # Empirical MAB controller
    mab_init: int = 5
    # Harness
    seed: int = 0
    iterations: int = 240
    slots_per_iteration: int = 1500
    realizations: int = 200
    curve_realizations: int = 20
    changes: dict = field(default_factory=dict, compare=False)

    @property
    def n_codebooks(self) -> int:
        return len(self.codebook_beams)

    @property
    def n_actions(self) -> int:
        return self.n_ue ** 2 * self.n_codebooks + self.n_ue * self.n_codebooks

    @property
    def noise_dbm(self) -> float:
        return -174.0 + 10.0 * math.log10(self.bandwidth_hz) + 10.0

    @property
    def arrival_rates(self) -> np.ndarray:
        """Mean packet arrivals per slot for each UE."""
        total = self.traffic_gbps * 1e9 * self.slot_duration / self.packet_bits
        return total * np.asarray(self.traffic_split, dtype=float)

    def blockage_probs(self, p_rule: float) -> np.ndarray:
        """Transition vector p_0..p_N for a chain whose per-length probability is p_rule."""
        p = np.zeros(self.max_block_slots + 1)
        p[self.min_block_slots:] = p_rule
        p[0] = 1.0 - p[1:].sum()
        return p

    def ue_positions(self) -> np.ndarray:
        """Initial UE positions (m), AP at the origin."""
        d = np.asarray(self.ue_distances, dtype=float)
        ang = np.radians(np.asarray(self.ue_angles_deg, dtype=float))
        return np.stack([d * np.cos(ang), d * np.sin(ang)], axis=1)

    def at_iteration(self, iteration: int) -> 'ScenarioConfig':
        """Scenario in force during a (1-based) iteration after applying the schedule."""
        cfg = self
        for at in sorted(self.changes):
            if at <= iteration:
                cfg = dataclasses.replace(cfg, **self.changes[at])
        return cfg


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig) if f.name != 'changes'}


def _default_of(name: str):
    f = _FIELDS[name]
    return f.default


def _parse_float(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        return float(Fraction(text))


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(name: str, text: str):
    """Convert a raw config string to the type of the field's default."""
    default = _default_of(name)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text.strip())
    if isinstance(default, float):
        return _parse_float(text)
    if isinstance(default, str):
        return text.strip()
    if isinstance(default, tuple):
        items = [item for item in text.split(',') if item.strip()]
        if isinstance(default[0], int) and not isinstance(default[0], bool):
            return tuple(int(item.strip()) for item in items)
        return tuple(_parse_float(item) for item in items)
    raise ValueError(f"unsupported field type for {name}")


def read_key_values(path: str) -> list[tuple[int, str, str]]:
    """Read `key = value` lines, skipping blanks and # comments."""
    entries = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"expected 'key = value', got {line!r}", path, lineno)
            key, value = line.split('=', 1)
            entries.append((lineno, key.strip(), value.strip()))
    return entries


def validate(cfg: ScenarioConfig, path: str = None, lines: dict = None):
    """Check scenario invariants; raise ConfigError pointing at the offending line."""
    lines = lines or {}

    def fail(key: str, message: str):
        raise ConfigError(f"{key}: {message}", path, lines.get(key))

    if cfg.n_ue < 3:
        fail('n_ue', "at least 3 UEs are required so a relay slot leaves a UE to schedule")
    for key in PER_UE_FIELDS:
        if len(getattr(cfg, key)) != cfg.n_ue:
            if key not in lines:
                fail(key, f"missing required field for n_ue={cfg.n_ue}")
            fail(key, f"expected {cfg.n_ue} values, got {len(getattr(cfg, key))}")
    if abs(sum(cfg.traffic_split) - 1.0) > 1e-9:
        fail('traffic_split', f"fractions must sum to 1, got {sum(cfg.traffic_split):.6g}")
    if any(x < 0 for x in cfg.traffic_split) or cfg.traffic_gbps < 0:
        fail('traffic_split', "traffic must be non-negative")
    if not 0 < cfg.meas_duration < cfg.slot_duration:
        fail('meas_duration', "need 0 < meas_duration < slot_duration")
    if not 0 < cfg.track_region_rad <= 2 * math.pi:
        fail('track_region_rad', "need 0 < track_region_rad <= 2*pi")
    if not cfg.codebook_beams or any(n < 1 for n in cfg.codebook_beams):
        fail('codebook_beams', "every codebook needs at least one beam")
    if len(cfg.mcs_rates_mbps) != len(cfg.mcs_rss_dbm) or not cfg.mcs_rates_mbps:
        fail('mcs_rss_dbm', "one threshold per MCS rate is required")
    if np.any(np.diff(cfg.mcs_rates_mbps) <= 0) or cfg.mcs_rates_mbps[0] <= 0:
        fail('mcs_rates_mbps', "rates must be positive and strictly increasing")
    if np.any(np.diff(cfg.mcs_rss_dbm) <= 0):
        fail('mcs_rss_dbm', "thresholds must be strictly increasing")
    if not 1 <= cfg.min_block_slots <= cfg.max_block_slots:
        fail('min_block_slots', "need 1 <= min_block_slots <= max_block_slots")
    for key, rules in (('blockage_p', cfg.blockage_p), ('d2d_blockage_p', (cfg.d2d_blockage_p,))):
        for rule in rules:
            p = cfg.blockage_probs(rule)
            if rule < 0 or p[0] < 0:
                fail(key, f"invalid blockage probability {rule}")
    if len(cfg.block_loss_db) != 2 or cfg.block_loss_db[0] > cfg.block_loss_db[1]:
        fail('block_loss_db', "expected 'low, high' with low <= high")
    if len(cfg.speed_range) != 2 or not 0 <= cfg.speed_range[0] <= cfg.speed_range[1]:
        fail('speed_range', "expected 'min, max' with 0 <= min <= max")
    if len(cfg.rotation_range_deg) != 2 or not 0 <= cfg.rotation_range_deg[0] <= cfg.rotation_range_deg[1]:
        fail('rotation_range_deg', "expected 'min, max' with 0 <= min <= max")
    if cfg.mobility_period < 1:
        fail('mobility_period', "must be >= 1")
    if any(d <= 0 for d in cfg.ue_distances):
        fail('ue_distances', "UEs must not start at the AP position")
    if not 0 <= cfg.ppo_gamma <= 1:
        fail('ppo_gamma', "must be in [0, 1]")
    if cfg.ppo_clip <= 0:
        fail('ppo_clip', "must be > 0")
    if cfg.ppo_batch < 1:
        fail('ppo_batch', "must be >= 1")
    if cfg.ppo_critic_bootstrap not in ('last', 'next'):
        fail('ppo_critic_bootstrap', "must be 'last' or 'next'")
    if cfg.n_block_tilde <= cfg.max_block_slots:
        fail('n_block_tilde', "must exceed max_block_slots")
    if cfg.reward_scale_gbps <= 0:
        fail('reward_scale_gbps', "must be > 0")
    if cfg.slots_per_iteration < 1:
        fail('slots_per_iteration', "must be >= 1")
    if cfg.iterations < 0 or cfg.realizations < 1 or cfg.curve_realizations < 1:
        fail('iterations', "iterations must be >= 0 and realizations >= 1")
    if cfg.mab_init < 0:
        fail('mab_init', "must be >= 0")


def load_scenario(path: str) -> ScenarioConfig:
    """Load and validate a scenario file; missing keys keep their reference defaults."""
    path = str(path)
    if not Path(path).exists():
        raise ConfigError("scenario file not found", path)

    values, lines = {}, {}
    changes, change_lines = {}, {}
    for lineno, key, raw in read_key_values(path):
        target, name = values, key
        if key.startswith(CHANGE_PREFIX):
            head, _, name = key[len(CHANGE_PREFIX):].partition('.')
            try:
                at = int(head)
            except ValueError:
                raise ConfigError(f"bad change iteration in {key!r}", path, lineno)
            if at < 1:
                raise ConfigError("change iteration must be >= 1", path, lineno)
            if name in _FIELDS and name not in CHANGEABLE_FIELDS:
                raise ConfigError(f"{name} cannot change during a run", path, lineno)
            target = changes.setdefault(at, {})
            change_lines[(at, name)] = lineno
        if name not in _FIELDS:
            raise ConfigError(f"unknown key {name!r}", path, lineno)
        try:
            target[name] = parse_value(name, raw)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"invalid value for {name}: {e}", path, lineno)
        if target is values:
            lines[name] = lineno

    try:
        cfg = ScenarioConfig(**values, changes=changes)
    except TypeError as e:
        raise ConfigError(str(e), path)
    validate(cfg, path, lines)
    for at, delta in changes.items():
        changed = dataclasses.replace(cfg, **delta)
        validate(changed, path, {name: change_lines[(at, name)] for name in delta})
    return cfg
