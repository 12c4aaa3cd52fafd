"""Training/testing orchestration, per-iteration metrics and result files."""
import re
from dataclasses import dataclass, fields, replace
from functools import partial
from multiprocessing import Pool, cpu_count
from pathlib import Path

import numpy as np

from .controllers import BaseController, get_controller
from .env import MmWaveEnv, SlotResult
from .scenario import ScenarioConfig

METRICS_FILE = 'metrics.tsv'
DELAY_CDF_FILE = 'delay_cdf.tsv'
CHECKPOINT_PATTERN = re.compile(r'checkpoint_(\d+)\.bin$')


def checkpoint_name(iteration: int) -> str:
    return f'checkpoint_{iteration}.bin'


def make_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for the environment and the controller."""
    env_seq, ctrl_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(env_seq), np.random.default_rng(ctrl_seq)


class DelayHistogram:
    """Per-UE counts of delivered packets indexed by delay in slots."""

    def __init__(self, n_ue: int):
        self.counts = [np.zeros(1, dtype=np.int64) for _ in range(n_ue)]

    def add(self, u: int, delay_slots: int, count: int):
        hist = self.counts[u]
        if delay_slots >= len(hist):
            grown = np.zeros(max(delay_slots + 1, 2 * len(hist)), dtype=np.int64)
            grown[:len(hist)] = hist
            self.counts[u] = hist = grown
        hist[delay_slots] += count

    def add_slot(self, result: SlotResult):
        for u, delay, count in result.delays:
            self.add(u, delay, count)

    def merge(self, other: 'DelayHistogram'):
        for u, hist in enumerate(other.counts):
            for delay in np.flatnonzero(hist):
                self.add(u, int(delay), int(hist[delay]))

    def packets(self, u: int = None) -> int:
        hists = self.counts if u is None else [self.counts[u]]
        return int(sum(h.sum() for h in hists))

    def mean_slots(self, u: int = None) -> float:
        hists = self.counts if u is None else [self.counts[u]]
        total = sum(int(h.sum()) for h in hists)
        if total == 0:
            return 0.0
        return sum(float(np.arange(len(h)) @ h) for h in hists) / total

    def pooled(self) -> np.ndarray:
        size = max(len(h) for h in self.counts)
        out = np.zeros(size, dtype=np.int64)
        for h in self.counts:
            out[:len(h)] += h
        return out


@dataclass
class MetricsRow:
    iteration: int
    avg_delay_ms: float
    rate_gbps: float
    blockage_pct: float
    mean_queue_len: float
    delivered: float
    delay_ue: tuple = ()
    backlog_ue: tuple = ()

    def columns(self) -> list[str]:
        base = [f.name for f in fields(self) if f.name not in ('delay_ue', 'backlog_ue')]
        return (base + [f'delay_ue{u + 1}' for u in range(len(self.delay_ue))]
                + [f'backlog_ue{u + 1}' for u in range(len(self.backlog_ue))])

    def values(self) -> list:
        return [self.iteration, self.avg_delay_ms, self.rate_gbps, self.blockage_pct,
                self.mean_queue_len, self.delivered, *self.delay_ue, *self.backlog_ue]


@dataclass
class IterationStats:
    """Accumulators for one iteration of slots."""
    n_ue: int
    slots: int = 0
    delivered: int = 0
    blocked: int = 0
    queue_sum: float = 0.0
    delays: DelayHistogram = None
    backlog: np.ndarray = None

    def __post_init__(self):
        self.delays = DelayHistogram(self.n_ue)
        self.backlog = np.zeros(self.n_ue, dtype=np.int64)

    def add(self, result: SlotResult):
        self.slots += 1
        self.delivered += int(result.delivered.sum())
        self.blocked += int(result.main_blocked)
        self.queue_sum += float(result.observation.q.sum())
        self.backlog = result.observation.q
        self.delays.add_slot(result)

    def row(self, iteration: int, cfg: ScenarioConfig) -> MetricsRow:
        slot_ms = cfg.slot_duration * 1e3
        slots = max(self.slots, 1)
        return MetricsRow(
            iteration=iteration,
            avg_delay_ms=self.delays.mean_slots() * slot_ms,
            rate_gbps=self.delivered * cfg.packet_bits / (slots * cfg.slot_duration * 1e9),
            blockage_pct=100.0 * self.blocked / slots,
            mean_queue_len=self.queue_sum / slots,
            delivered=float(self.delivered),
            delay_ue=tuple(self.delays.mean_slots(u) * slot_ms for u in range(self.n_ue)),
            backlog_ue=tuple(float(b) for b in self.backlog),
        )


def format_row(row: MetricsRow, total: int) -> str:
    return (f"Iteration {row.iteration}/{total}: delay {row.avg_delay_ms:.1f} ms, "
            f"rate {row.rate_gbps:.2f} Gbps, blockage {row.blockage_pct:.1f}%")


def run_iteration(env: MmWaveEnv, controller: BaseController, slots: int) -> IterationStats:
    stats = IterationStats(env.n_ue)
    obs = env.observe()
    for _ in range(slots):
        result = env.execute_slot(controller.act(obs))
        controller.observe(result)
        stats.add(result)
        obs = result.observation
    return stats


def apply_schedule(env: MmWaveEnv, cfg: ScenarioConfig, iteration: int, progress_callback=None):
    """Switch the environment to the scenario in force at `iteration` if it changed."""
    target = cfg.at_iteration(iteration)
    if target == env.cfg:
        if iteration in cfg.changes and progress_callback:
            progress_callback(f"Warning: scenario change at iteration {iteration} changes nothing")
        return
    changed = env.reconfigure(target)
    if progress_callback:
        progress_callback(f"Scenario change at iteration {iteration}: {', '.join(changed)}")


def simulate(cfg: ScenarioConfig, controller: BaseController, env: MmWaveEnv, iterations: int,
             slots: int, checkpoint_dir=None, progress_callback=None) -> tuple[list[MetricsRow], DelayHistogram]:
    """Run iterations of `slots` slots, applying the change schedule at iteration boundaries."""
    rows = []
    delays = DelayHistogram(cfg.n_ue)
    for iteration in range(1, iterations + 1):
        apply_schedule(env, cfg, iteration, progress_callback)
        stats = run_iteration(env, controller, slots)
        row = stats.row(iteration, env.cfg)
        rows.append(row)
        delays.merge(stats.delays)
        if checkpoint_dir is not None:
            controller.save(Path(checkpoint_dir) / checkpoint_name(iteration))
        if progress_callback:
            progress_callback(format_row(row, iterations))
    return rows, delays


def run_train(cfg: ScenarioConfig, kind: str, out_dir, progress_callback=None) -> list[MetricsRow]:
    """Train a controller from scratch; writes metrics, delay CDF and a checkpoint per iteration."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env_rng, ctrl_rng = make_rngs(cfg.seed)
    env = MmWaveEnv(cfg, env_rng)
    controller = get_controller(kind, cfg, ctrl_rng)
    rows, delays = simulate(cfg, controller, env, cfg.iterations, cfg.slots_per_iteration,
                            checkpoint_dir=out_dir, progress_callback=progress_callback)
    emit_metrics(rows, out_dir / METRICS_FILE)
    emit_delay_cdf(delays, out_dir / DELAY_CDF_FILE, cfg.slot_duration)
    return rows


def run_realization(seed: int, cfg: ScenarioConfig, kind: str, checkpoint, iterations: int,
                    slots: int) -> tuple[list[MetricsRow], DelayHistogram]:
    """One frozen-controller realization; module level so worker processes can pickle it."""
    env_rng, ctrl_rng = make_rngs(seed)
    controller = get_controller(kind, cfg, ctrl_rng)
    controller.load(checkpoint)
    controller.freeze()
    env = MmWaveEnv(cfg, env_rng)
    return simulate(cfg, controller, env, iterations, slots)


def average_rows(runs: list[list[MetricsRow]]) -> list[MetricsRow]:
    """Element-wise mean across realizations, iteration by iteration."""
    averaged = []
    for rows in zip(*runs):
        values = np.array([r.values()[1:] for r in rows], dtype=float).mean(axis=0)
        n_ue = len(rows[0].delay_ue)
        head, per_ue = values[:5], values[5:]
        averaged.append(MetricsRow(
            rows[0].iteration, *(float(v) for v in head),
            delay_ue=tuple(float(v) for v in per_ue[:n_ue]),
            backlog_ue=tuple(float(v) for v in per_ue[n_ue:]),
        ))
    return averaged


def _map_realizations(fn, seeds: list[int], workers: int) -> list:
    workers = cpu_count() if workers == 0 else workers
    if workers <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with Pool(min(workers, len(seeds))) as pool:
        return pool.map(fn, seeds)


def evaluate(cfg: ScenarioConfig, kind: str, checkpoint, realizations: int, iterations: int,
             workers: int = 1, progress_callback=None) -> tuple[list[MetricsRow], DelayHistogram]:
    seeds = [cfg.seed + r for r in range(realizations)]
    fn = partial(run_realization, cfg=cfg, kind=kind, checkpoint=str(checkpoint),
                 iterations=iterations, slots=cfg.slots_per_iteration)
    results = _map_realizations(fn, seeds, workers)
    delays = DelayHistogram(cfg.n_ue)
    for _, hist in results:
        delays.merge(hist)
    rows = average_rows([rows for rows, _ in results])
    if progress_callback:
        for row in rows:
            progress_callback(format_row(row, iterations))
    return rows, delays


def list_checkpoints(directory) -> list[tuple[int, Path]]:
    found = []
    for path in Path(directory).iterdir():
        match = CHECKPOINT_PATTERN.search(path.name)
        if match:
            found.append((int(match.group(1)), path))
    return sorted(found)


def replay_checkpoints(cfg: ScenarioConfig, kind: str, directory, realizations: int,
                       workers: int = 1, progress_callback=None) -> tuple[list[MetricsRow], DelayHistogram]:
    """Test every saved checkpoint for one iteration; one averaged row per checkpoint."""
    checkpoints = list_checkpoints(directory)
    if not checkpoints:
        raise FileNotFoundError(f"no checkpoint_<iter>.bin files in {directory}")
    rows, delays = [], DelayHistogram(cfg.n_ue)
    for iteration, path in checkpoints:
        scenario = replace(cfg.at_iteration(iteration), changes={})
        (row,), hist = evaluate(scenario, kind, path, realizations, 1, workers)
        row.iteration = iteration
        rows.append(row)
        delays.merge(hist)
        if progress_callback:
            progress_callback(format_row(row, checkpoints[-1][0]))
    return rows, delays


def run_test(cfg: ScenarioConfig, kind: str, checkpoint, out_dir, realizations: int = None,
             workers: int = 1, progress_callback=None) -> list[MetricsRow]:
    """Evaluate a trained controller with learning frozen, averaged over realizations.

    A checkpoint directory is replayed checkpoint by checkpoint with the
    (smaller) curve realization count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if Path(checkpoint).is_dir():
        rows, delays = replay_checkpoints(cfg, kind, checkpoint, realizations or cfg.curve_realizations,
                                          workers, progress_callback)
    else:
        rows, delays = evaluate(cfg, kind, checkpoint, realizations or cfg.realizations,
                                cfg.iterations, workers, progress_callback)
    emit_metrics(rows, out_dir / METRICS_FILE)
    emit_delay_cdf(delays, out_dir / DELAY_CDF_FILE, cfg.slot_duration)
    return rows


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.6f}"


def emit_metrics(rows: list[MetricsRow], path):
    """Tab-separated metrics, header first, one row per iteration."""
    if not rows:
        raise ValueError("no metrics rows to write")
    lines = ['\t'.join(rows[0].columns())]
    lines += ['\t'.join(_fmt(v) for v in row.values()) for row in rows]
    Path(path).write_text('\n'.join(lines) + '\n')


def delay_cdf(delays: DelayHistogram, slot_duration: float) -> tuple[np.ndarray, np.ndarray]:
    pooled = delays.pooled()
    support = np.flatnonzero(pooled)
    if len(support) == 0:
        return np.zeros(0), np.zeros(0)
    cumulative = np.cumsum(pooled[support])
    return support * slot_duration * 1e3, cumulative / cumulative[-1]


def emit_delay_cdf(delays: DelayHistogram, path, slot_duration: float):
    """Sorted (delay_ms, cumulative_fraction) pairs over all delivered packets."""
    delay_ms, fraction = delay_cdf(delays, slot_duration)
    lines = ['delay_ms\tcumulative_fraction']
    lines += [f"{d:.3f}\t{f:.6f}" for d, f in zip(delay_ms, fraction)]
    Path(path).write_text('\n'.join(lines) + '\n')


def run(cfg: ScenarioConfig, kind: str, mode: str, out_dir, checkpoint=None, realizations: int = None,
        workers: int = 1, progress_callback=None) -> list[MetricsRow]:
    if mode == 'train':
        return run_train(cfg, kind, out_dir, progress_callback)
    if mode == 'test':
        if checkpoint is None:
            raise ValueError("test mode needs a checkpoint")
        return run_test(cfg, kind, checkpoint, out_dir, realizations, workers, progress_callback)
    raise ValueError(f"unknown mode '{mode}'")
