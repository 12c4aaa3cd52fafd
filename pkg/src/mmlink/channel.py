"""Link budget, codebooks, MCS selection and effective data-phase coefficients."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Residual alignment error after BA, as a fraction of the beamwidth
RESIDUAL_ERROR_FRACTION = 0.25


@dataclass(frozen=True)
class SlotTiming:
    t_slot: float = 10e-3
    t_meas: float = 10e-6

    def __post_init__(self):
        if not 0 <= self.t_meas < self.t_slot:
            raise ConfigError(f"need 0 <= t_meas < t_slot, got {self.t_meas} and {self.t_slot}")


@dataclass(frozen=True)
class Codebook:
    """Equal-width azimuth sectors jointly covering the full circle."""
    k: int
    n_beams: int
    elevation_beamwidth: float

    @property
    def azimuth_beamwidth(self) -> float:
        return 2 * math.pi / self.n_beams

    @property
    def gain_db(self) -> float:
        return antenna_gain_db(self.azimuth_beamwidth, self.elevation_beamwidth)

    def beam_index(self, angle: float) -> int:
        """Index of the sector containing an azimuth angle (rad)."""
        return int(np.floor((angle % (2 * math.pi)) / self.azimuth_beamwidth)) % self.n_beams

    def tracking_size(self, phi_track: float) -> int:
        return tracking_subset_size(self.n_beams, phi_track)

    def in_tracking_sector(self, previous_beam: int, angle: float, phi_track: float) -> bool:
        """Whether the beam covering `angle` is among the sweep centred on `previous_beam`."""
        size = self.tracking_size(phi_track)
        if size >= self.n_beams:
            return True
        offset = (self.beam_index(angle) - previous_beam) % self.n_beams
        if offset > self.n_beams // 2:
            offset -= self.n_beams
        # Sweep is split evenly around the current beam, the extra beam on the positive side
        return -((size - 1) // 2) <= offset <= size // 2


def make_codebooks(beams, elevation_deg: float) -> list[Codebook]:
    el = math.radians(elevation_deg)
    return [Codebook(k, int(n), el) for k, n in enumerate(beams, start=1)]


def antenna_gain_db(azimuth_bw: float, elevation_bw: float) -> float:
    """Flat-top sector gain 16*pi / (6.67 * b_azi * b_ele) in dBi (beamwidths in rad)."""
    return 10 * math.log10(16 * math.pi / (6.67 * azimuth_bw * elevation_bw))


def path_loss_db(distance: float, carrier_ghz: float, shadowing: float = 0.0) -> float:
    """LOS path loss with distance in meters and carrier in GHz."""
    if distance <= 0:
        raise ConfigError(f"devices coincide (distance {distance} m)")
    return 28.0 + 22 * math.log10(distance) + 20 * math.log10(carrier_ghz) + shadowing


def noise_power_dbm(bandwidth_hz: float) -> float:
    return -174.0 + 10 * math.log10(bandwidth_hz) + 10.0


@dataclass(frozen=True)
class ChannelModel:
    carrier_ghz: float = 60.0
    bandwidth_hz: float = 2.16e9
    shadowing_db: float = 2.0
    margin_db: float = 10.0
    p_tx_ap: float = 15.0
    p_tx_ue: float = 10.0

    @property
    def noise_dbm(self) -> float:
        return noise_power_dbm(self.bandwidth_hz)

    def rss(self, distance: float, p_tx: float, gain_tx: float, gain_rx: float,
            block_loss: float = 0.0, rng: np.random.Generator = None) -> float:
        """RSS = P_T + G_T + G_R - PL - W; shadowing drawn from rng when given."""
        shadowing = rng.normal(0.0, self.shadowing_db) if rng is not None and self.shadowing_db > 0 else 0.0
        pl = path_loss_db(distance, self.carrier_ghz, shadowing) + block_loss
        return p_tx + gain_tx + gain_rx - pl - self.margin_db


class McsTable:
    """RSS thresholds to PHY rates; row 0 is the failed link."""

    def __init__(self, rates_bps, min_rss_dbm):
        rates = np.asarray(rates_bps, dtype=float)
        thresholds = np.asarray(min_rss_dbm, dtype=float)
        if rates.shape != thresholds.shape:
            raise ConfigError("MCS table needs one RSS threshold per rate")
        if np.any(np.diff(rates) <= 0) or np.any(np.diff(thresholds) <= 0):
            raise ConfigError("MCS rates and thresholds must be strictly increasing")
        self.rates = np.concatenate([[0.0], rates])
        self.min_rss = np.concatenate([[-np.inf], thresholds])

    @classmethod
    def from_mbps(cls, rates_mbps, min_rss_dbm):
        return cls(np.asarray(rates_mbps, dtype=float) * 1e6, min_rss_dbm)

    @property
    def n_levels(self) -> int:
        """Number of rows including level 0."""
        return len(self.rates)

    def select(self, rss: float) -> int:
        return int(np.searchsorted(self.min_rss[1:], rss, side='right'))

    def rate(self, m: int) -> float:
        return float(self.rates[m])


@dataclass(frozen=True)
class LinkOutcome:
    """Result of beam alignment and data transmission on one link."""
    rss: float
    mcs: int
    rate: float
    eff_coeff: float
    packets: int
    blocked: bool = False
    tracked: bool = False


def packets_per_slot(rate_bps: float, eff_coeff: float, timing: SlotTiming, packet_bits: int) -> int:
    # Guard against 940.9999 style float error before flooring
    return int(math.floor(rate_bps * eff_coeff * timing.t_slot / packet_bits + 1e-9))


def tracking_subset_size(n_beams: int, phi_track: float) -> int:
    if not 0 < phi_track <= 2 * math.pi:
        raise ConfigError(f"tracking region must be in (0, 2*pi], got {phi_track}")
    return min(n_beams, math.ceil(phi_track / (2 * math.pi) * n_beams - 1e-12))


def _coefficient(tests: int, timing: SlotTiming) -> float:
    c = 1.0 - tests * timing.t_meas / timing.t_slot
    if c <= 0:
        raise ConfigError(f"beam training of {tests} pairs does not fit in one slot")
    return c


def effective_coefficient_normal(codebook: Codebook, ue_codebook: Codebook,
                                 arrays: tuple[int, int], timing: SlotTiming) -> float:
    """Data-phase fraction after a full sweep, arrays scanning in parallel."""
    n_ap, n_ue = arrays
    tests = math.ceil(codebook.n_beams / n_ap) * math.ceil(ue_codebook.n_beams / n_ue)
    return _coefficient(tests, timing)


def effective_coefficient_track(codebook: Codebook, ue_codebook: Codebook,
                                phi_track: float, timing: SlotTiming) -> float:
    tests = codebook.tracking_size(phi_track) * ue_codebook.tracking_size(phi_track)
    return _coefficient(tests, timing)


def angular_rate(rel_position: np.ndarray, rel_velocity: np.ndarray, rotation_rate: float) -> float:
    """Rate (rad/s) at which the peer's bearing drifts relative to the device's boresight."""
    r2 = float(rel_position @ rel_position)
    bearing_rate = (rel_position[0] * rel_velocity[1] - rel_position[1] * rel_velocity[0]) / r2
    return bearing_rate - rotation_rate


def outage_coefficient(rates, beamwidths, data_time: float, rng: np.random.Generator) -> float:
    """Fraction of the data phase during which either endpoint is out of its beam.

    Each endpoint starts from a residual error uniform in +-1/4 beamwidth and
    drifts linearly at its angular rate; the link is lost once the error
    exceeds half the beamwidth.
    """
    if data_time <= 0:
        return 0.0
    exit_time = math.inf
    for omega, bw in zip(rates, beamwidths):
        e0 = rng.uniform(-RESIDUAL_ERROR_FRACTION, RESIDUAL_ERROR_FRACTION) * bw
        if omega == 0:
            continue
        tau = (bw / 2 - math.copysign(1.0, omega) * e0) / abs(omega)
        exit_time = min(exit_time, tau)
    return float(min(1.0, max(0.0, 1.0 - exit_time / data_time)))
