"""CLI entry point for mmlink."""
import dataclasses
import time
from pathlib import Path

import click

from .controllers import is_controller_kind
from .errors import MmlinkError
from .runner import DELAY_CDF_FILE, METRICS_FILE, run
from .scenario import load_scenario, validate


def check_controller(ctx, param, value):
    if not is_controller_kind(value):
        raise click.BadParameter("expected ppo, mab, mab-no-relay, mab-no-track or mab-fixed-cb=<k>")
    return value


@click.command()
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False), help='Scenario file (key = value lines)')
@click.option('--controller', default='mab', callback=check_controller, help='ppo | mab | mab-no-relay | mab-no-track | mab-fixed-cb=<k>')
@click.option('--mode', type=click.Choice(['train', 'test']), default='train', help='Train from scratch or test a checkpoint')
@click.option('--seed', type=int, help='Random seed (overrides the scenario)')
@click.option('--iterations', type=int, help='Number of iterations (overrides the scenario)')
@click.option('--slots', type=int, help='Slots per iteration (overrides the scenario)')
@click.option('--out', 'out_dir', default='results', type=click.Path(file_okay=False), help='Output directory')
@click.option('--checkpoint', type=click.Path(exists=True), help='Checkpoint file, or a training output directory to replay every checkpoint')
@click.option('--realizations', type=int, help='Test realizations (default: scenario value)')
@click.option('--workers', type=int, default=1, help='Parallel test realizations (0=auto, based on CPU cores)')
def main(config_path, controller, mode, seed, iterations, slots, out_dir, checkpoint, realizations, workers):
    """Simulate an mmWave downlink under a learned scheduling controller."""
    try:
        cfg = load_scenario(config_path)
        overrides = {'seed': seed, 'iterations': iterations, 'slots_per_iteration': slots}
        cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        validate(cfg)
        if realizations is not None and realizations < 1:
            raise click.BadParameter("must be >= 1", param_hint='--realizations')
        if mode == 'test' and checkpoint is None:
            raise click.UsageError("--mode test needs --checkpoint")
    except MmlinkError as e:
        click.echo(f"Error: {e}", err=True)
        raise SystemExit(1)

    click.echo(f"Config: {config_path}")
    click.echo(f"Controller: {controller}, Mode: {mode}, Seed: {cfg.seed}")
    click.echo(f"UEs: {cfg.n_ue}, Codebooks: {cfg.n_codebooks}, Actions: {cfg.n_actions}")
    if mode == 'train':
        click.echo(f"Iterations: {cfg.iterations} x {cfg.slots_per_iteration} slots")
    else:
        click.echo(f"Checkpoint: {checkpoint}")
    if cfg.changes:
        click.echo(f"Scenario changes at iterations: {', '.join(str(i) for i in sorted(cfg.changes))}")
    click.echo(f"Output: {out_dir}")

    def progress(msg):
        click.echo(msg)

    start_time = time.time()
    try:
        rows = run(cfg, controller, mode, out_dir, checkpoint=checkpoint, realizations=realizations,
                   workers=workers, progress_callback=progress)
    except (MmlinkError, OSError, ValueError) as e:
        click.echo(f"Error: {e}", err=True)
        raise SystemExit(1)
    elapsed = time.time() - start_time

    out = Path(out_dir)
    click.echo(f"Metrics saved to {out / METRICS_FILE}")
    click.echo(f"Delay CDF saved to {out / DELAY_CDF_FILE}")
    if rows:
        last = rows[-1]
        click.echo(f"Final: delay {last.avg_delay_ms:.1f} ms, rate {last.rate_gbps:.2f} Gbps, "
                   f"blockage {last.blockage_pct:.1f}%")
    click.echo(f"Time: {int(elapsed // 60)}m {elapsed % 60:.1f}s")


if __name__ == '__main__':
    main()
