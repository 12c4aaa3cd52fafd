"""Ground-truth slot simulation of the multi-user mmWave downlink."""
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .channel import (
    ChannelModel, LinkOutcome, McsTable, SlotTiming, angular_rate,
    effective_coefficient_normal, effective_coefficient_track, make_codebooks,
    outage_coefficient, packets_per_slot,
)
from .dynamics import BlockageChain, MobilityState, make_mobility
from .errors import ConfigError
from .pomdp import Action, ObservableState, check_feasible
from .scenario import CHANGEABLE_FIELDS, ScenarioConfig

AP = 0


class PacketQueue:
    """FIFO of packets stored as runs of [arrival_slot, count]."""

    def __init__(self):
        self._runs = deque()
        self._length = 0

    def __len__(self) -> int:
        return self._length

    def push(self, slot: int, count: int):
        if count <= 0:
            return
        if self._runs and self._runs[-1][0] == slot:
            self._runs[-1][1] += count
        else:
            self._runs.append([slot, count])
        self._length += count

    def pop(self, n: int, now: int) -> list[tuple[int, int]]:
        """Remove up to n packets from the head; return (delay_slots, count) runs."""
        served = []
        n = min(n, self._length)
        while n > 0:
            run = self._runs[0]
            take = min(n, run[1])
            served.append((now - run[0] + 1, take))
            run[1] -= take
            if run[1] == 0:
                self._runs.popleft()
            n -= take
            self._length -= take
        return served

    def arrival_slots(self) -> list[int]:
        return [slot for slot, count in self._runs for _ in range(count)]


@dataclass
class RelayLeg:
    """Packets parked at a relay UE awaiting the D2D slot."""
    tx: int              # relay UE id
    rx: int              # destination UE id
    packets: int         # d_main of the relay slot, capped by the destination backlog


@dataclass
class SlotResult:
    slot: int
    action: Action
    departures: np.ndarray        # per-UE service capacity d[t]
    delivered: np.ndarray         # packets that reached their destination
    arrivals: np.ndarray
    main: LinkOutcome
    d2d: LinkOutcome = None
    d2d_pair: tuple = None        # (tx, rx) UE ids of the D2D leg
    main_blocked: bool = False
    delays: list = field(default_factory=list)   # (ue_index, delay_slots, count)
    observation: ObservableState = None


class MmWaveEnv:
    """One AP serving U UEs with codebook BA, relays and beam tracking."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.n_ue = cfg.n_ue
        self.timing = SlotTiming(cfg.slot_duration, cfg.meas_duration)
        self.channel = ChannelModel(cfg.carrier_ghz, cfg.bandwidth_hz, cfg.shadowing_db,
                                    cfg.margin_db, cfg.p_ap_dbm, cfg.p_ue_dbm)
        self.mcs = McsTable.from_mbps(cfg.mcs_rates_mbps, cfg.mcs_rss_dbm)
        self.codebooks = make_codebooks(cfg.codebook_beams, cfg.elevation_deg)
        self.ue_codebook = self.codebooks[0]
        arrays = (cfg.n_arrays_ap, cfg.n_arrays_ue)
        self.coeff_normal = np.array([
            effective_coefficient_normal(cb, self.ue_codebook, arrays, self.timing) for cb in self.codebooks])
        self.coeff_track = np.array([
            effective_coefficient_track(cb, self.ue_codebook, cfg.track_region_rad, self.timing)
            for cb in self.codebooks])
        self.coeff_d2d = effective_coefficient_normal(
            self.ue_codebook, self.ue_codebook, (cfg.n_arrays_ue, cfg.n_arrays_ue), self.timing)

        self.t = 0
        self.queues = [PacketQueue() for _ in range(self.n_ue)]
        self.arrival_rates = cfg.arrival_rates
        self.mobility = self._make_devices(cfg)
        self.blockage_main = [
            BlockageChain(cfg.blockage_probs(p), tuple(cfg.block_loss_db)) for p in cfg.blockage_p]
        self.blockage_d2d = {
            pair: BlockageChain(cfg.blockage_probs(cfg.d2d_blockage_p), tuple(cfg.block_loss_db))
            for pair in combinations(range(1, self.n_ue + 1), 2)
        }
        self.b_d2d = np.zeros(self.n_ue, dtype=bool)
        self.b_track = np.zeros(self.n_ue, dtype=bool)
        self.pending_relay: RelayLeg = None
        self.last_action: Action = None
        # Local AP-side and UE-side angles of the last main link to each UE
        self.last_angles: dict[int, tuple[float, float]] = {}
        self.total_arrivals = np.zeros(self.n_ue, dtype=np.int64)
        self.total_delivered = np.zeros(self.n_ue, dtype=np.int64)

    def _make_devices(self, cfg: ScenarioConfig) -> list[MobilityState]:
        devices = [make_mobility((0.0, 0.0), cfg.ap_move_radius, cfg.speed_range,
                                 cfg.rotation_range_deg, cfg.mobility_period, self.rng)]
        for center, radius in zip(cfg.ue_positions(), cfg.move_radius):
            devices.append(make_mobility(center, radius, cfg.speed_range,
                                         cfg.rotation_range_deg, cfg.mobility_period, self.rng))
        return devices

    # Observation

    def queue_lengths(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues], dtype=np.int64)

    def observe(self) -> ObservableState:
        return ObservableState(
            q=self.queue_lengths(),
            b_d2d=self.b_d2d.copy(),
            b_track=self.b_track.copy(),
            l_block=np.array([c.l_block for c in self.blockage_main], dtype=np.int64),
        )

    def pair_chain(self, a: int, b: int) -> BlockageChain:
        return self.blockage_d2d[(min(a, b), max(a, b))]

    # Link evaluation

    def _geometry(self, tx: int, rx: int):
        m_tx, m_rx = self.mobility[tx], self.mobility[rx]
        rel = m_rx.position - m_tx.position
        distance = float(np.linalg.norm(rel))
        if distance == 0:
            raise ConfigError(f"devices {tx} and {rx} coincide")
        rel_v = m_rx.velocity - m_tx.velocity
        bearing = math.atan2(rel[1], rel[0])
        tx_angle = (bearing - m_tx.orientation) % (2 * math.pi)
        rx_angle = (bearing + math.pi - m_rx.orientation) % (2 * math.pi)
        rates = (angular_rate(rel, rel_v, m_tx.rotation_rate),
                 angular_rate(-rel, -rel_v, m_rx.rotation_rate))
        return distance, tx_angle, rx_angle, rates

    def _link(self, tx: int, rx: int, tx_cb, rx_cb, p_tx: float, chain: BlockageChain,
              base_coeff: float, tracked: bool = False, track_ok: bool = True) -> LinkOutcome:
        distance, _, _, rates = self._geometry(tx, rx)
        rss = self.channel.rss(distance, p_tx, tx_cb.gain_db, rx_cb.gain_db, chain.current_loss, self.rng)
        mcs = self.mcs.select(rss) if track_ok else 0
        outage = outage_coefficient(rates, (tx_cb.azimuth_beamwidth, rx_cb.azimuth_beamwidth),
                                    base_coeff * self.timing.t_slot, self.rng)
        eff = (1.0 - outage) * base_coeff
        rate = self.mcs.rate(mcs)
        packets = packets_per_slot(rate, eff, self.timing, self.cfg.packet_bits)
        return LinkOutcome(rss, mcs, rate, eff, packets, blocked=chain.blocked, tracked=tracked)

    def _main_link(self, a: Action) -> tuple[LinkOutcome, tuple[float, float]]:
        cb = self.codebooks[a.cb - 1]
        _, ap_angle, ue_angle, _ = self._geometry(AP, a.rx)
        tracked = bool(self.b_track[a.rx - 1])
        track_ok = True
        if tracked:
            base = self.coeff_track[a.cb - 1]
            prev_ap, prev_ue = self.last_angles.get(a.rx, (ap_angle, ue_angle))
            phi = self.cfg.track_region_rad
            track_ok = (cb.in_tracking_sector(cb.beam_index(prev_ap), ap_angle, phi)
                        and self.ue_codebook.in_tracking_sector(
                            self.ue_codebook.beam_index(prev_ue), ue_angle, phi))
        else:
            base = self.coeff_normal[a.cb - 1]
        outcome = self._link(AP, a.rx, cb, self.ue_codebook, self.cfg.p_ap_dbm,
                             self.blockage_main[a.rx - 1], base, tracked, track_ok)
        return outcome, (ap_angle, ue_angle)

    def _d2d_link(self, leg: RelayLeg) -> LinkOutcome:
        return self._link(leg.tx, leg.rx, self.ue_codebook, self.ue_codebook, self.cfg.p_ue_dbm,
                          self.pair_chain(leg.tx, leg.rx), self.coeff_d2d)

    # Slot dynamics

    def step_arrivals(self) -> np.ndarray:
        z = self.rng.poisson(self.arrival_rates).astype(np.int64)
        for u, count in enumerate(z):
            self.queues[u].push(self.t, int(count))
        self.total_arrivals += z
        return z

    def execute_slot(self, a: Action) -> SlotResult:
        check_feasible(a, self.observe())
        t = self.t
        q = self.queue_lengths()

        main, angles = self._main_link(a)
        main_blocked = self.blockage_main[a.rx - 1].blocked

        departures = np.zeros(self.n_ue, dtype=np.int64)
        if not a.relayed:
            departures[a.dest - 1] = main.packets

        d2d, d2d_pair = None, None
        leg = self.pending_relay
        if leg is not None:
            d2d = self._d2d_link(leg)
            d2d_pair = (leg.tx, leg.rx)
            departures[leg.rx - 1] = min(leg.packets, d2d.packets)

        delivered = np.minimum(departures, q)
        delays = []
        for u in np.flatnonzero(delivered):
            for delay, count in self.queues[u].pop(int(delivered[u]), t):
                delays.append((int(u), delay, count))
        self.total_delivered += delivered

        self.b_d2d[:] = False
        self.b_track[:] = False
        if a.relayed:
            self.b_d2d[a.rx - 1] = self.b_d2d[a.dest - 1] = True
            self.pending_relay = RelayLeg(a.rx, a.dest, int(min(main.packets, q[a.dest - 1])))
        else:
            self.pending_relay = None
        if a.track:
            self.b_track[a.rx - 1] = True
        self.last_angles[a.rx] = angles
        self.last_action = a

        arrivals = self.step_arrivals()
        for m in self.mobility:
            m.step(self.timing.t_slot, self.rng)
        for chain in self.blockage_main:
            chain.step(self.rng)
        for chain in self.blockage_d2d.values():
            chain.step(self.rng)
        self.t += 1

        return SlotResult(
            slot=t, action=a, departures=departures, delivered=delivered, arrivals=arrivals,
            main=main, d2d=d2d, d2d_pair=d2d_pair, main_blocked=main_blocked,
            delays=delays, observation=self.observe(),
        )

    def reconfigure(self, cfg: ScenarioConfig) -> list[str]:
        """Apply a mid-run scenario change; queues, clock and D2D/tracking state persist.

        Returns the names of the fields whose value changed.
        """
        old = self.cfg
        changed = [name for name in CHANGEABLE_FIELDS if getattr(old, name) != getattr(cfg, name)]
        self.cfg = cfg
        self.channel = ChannelModel(cfg.carrier_ghz, cfg.bandwidth_hz, cfg.shadowing_db,
                                    cfg.margin_db, cfg.p_ap_dbm, cfg.p_ue_dbm)
        self.arrival_rates = cfg.arrival_rates

        centers = cfg.ue_positions()
        old_centers = old.ue_positions()
        for u in range(1, self.n_ue + 1):
            m = self.mobility[u]
            if not np.allclose(centers[u - 1], old_centers[u - 1]):
                m.region_center = centers[u - 1].copy()
                m.position = centers[u - 1].copy()
            m.region_radius = float(cfg.move_radius[u - 1])
        self.mobility[AP].region_radius = float(cfg.ap_move_radius)
        for m in self.mobility:
            m.speed_range = tuple(cfg.speed_range)
            m.rotation_range = tuple(math.radians(r) for r in cfg.rotation_range_deg)
            m.period = cfg.mobility_period
            if not m.contains(m.position):
                m.position = m.region_center.copy()

        for chain, p in zip(self.blockage_main, cfg.blockage_p):
            chain.set_probs(cfg.blockage_probs(p))
            chain.loss_range = tuple(cfg.block_loss_db)
        for chain in self.blockage_d2d.values():
            chain.set_probs(cfg.blockage_probs(cfg.d2d_blockage_p))
            chain.loss_range = tuple(cfg.block_loss_db)
        return changed


def execute_slot(env: MmWaveEnv, a: Action) -> SlotResult:
    return env.execute_slot(a)


def reconfigure(env: MmWaveEnv, cfg: ScenarioConfig) -> list[str]:
    return env.reconfigure(cfg)
