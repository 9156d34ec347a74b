"""Command-line front end: single runs, sweeps, pre-registered studies,
signal dumps, and config validation."""

from __future__ import annotations

import csv
import os
import secrets
import sys

import click
import yaml

from . import __version__
from .config import (
    LinkConfig,
    SweepSpec,
    config_hash,
    link_config_from_dict,
    load_link_config,
    parse_override,
    save_config,
    to_dict,
)
from .errors import SvkkError
from .pipeline import SWEEP_COLUMNS, run_link, run_sweep
from .signals import write_signal
from .studies import STUDIES, run_study
from .txdsp import build_frame, get_format


def _default_jobs() -> int:
    env = os.environ.get("SVKK_JOBS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def _load(config_path, overrides, seed) -> LinkConfig:
    """Load config + overrides and apply the seed policy: explicit --seed
    wins, then a seed from the file; otherwise one is drawn and printed."""
    if config_path is None:
        raw = {}
        cfg = LinkConfig()
        base = to_dict(cfg)
        for text in overrides:
            key, value = parse_override(text)
            from .config import _set_dotted

            _set_dotted(base, key, value)
        cfg = link_config_from_dict(base)
    else:
        with open(config_path) as fh:
            raw = yaml.safe_load(fh) or {}
        cfg = load_link_config(config_path, overrides)
    explicit = any(o.split("=", 1)[0].strip() == "seed" for o in overrides)
    if seed is not None:
        cfg = cfg.replace(seed=int(seed))
    elif "seed" not in raw and not explicit:
        drawn = secrets.randbits(48)
        click.echo(f"seed not given; drew {drawn}")
        cfg = cfg.replace(seed=drawn)
    return cfg


def _echo_config(cfg: LinkConfig, out_dir: str, name: str = "effective-config.yaml") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    save_config(path, cfg)
    return path


@click.group()
@click.version_option(__version__)
def main():
    """Stokes-vector Kramers-Kronig link simulator."""


@main.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--set", "-s", "overrides", multiple=True, help="Override key=value (dotted paths).")
@click.option("--seed", type=int, default=None, help="Run seed; drawn and printed when absent.")
@click.option("--out", "-o", "out_dir", default="svkk-out", show_default=True)
@click.option("--dump", is_flag=True, help="Dump the transmit waveforms in the binary signal format.")
@click.option("--constellation", is_flag=True, help="Write payload constellation CSV.")
@click.option("--taps-csv", is_flag=True, help="Write converged equalizer taps CSV.")
@click.option("--derotation-csv", is_flag=True, help="Write the 16 de-rotation entries (row-major).")
@click.option("--verbose", "-v", is_flag=True)
def run_cmd(config, overrides, seed, out_dir, dump, constellation, taps_csv, derotation_csv, verbose):
    """Run one end-to-end link from CONFIG (defaults when omitted)."""
    cfg = _load(config, overrides, seed)
    echo = _echo_config(cfg, out_dir)
    if verbose:
        click.echo(f"effective config -> {echo}")
    out = run_link(cfg, keep_symbols=constellation or taps_csv)
    row = {
        "config_hash": config_hash(cfg),
        "point": 0,
        "trial": 0,
        "ber": repr(out.result.ber),
        "snr_db": repr(out.result.snr_db),
        "errors": out.result.errors_counted,
        "bits": out.result.bits_counted,
        "min_phase_violation_frac": repr(out.diagnostics.min_phase_violation_frac),
        "derot_cond": repr(out.diagnostics.derot_cond),
        "converged": str(out.diagnostics.converged).lower(),
    }
    with open(os.path.join(out_dir, "result.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(SWEEP_COLUMNS))
        writer.writeheader()
        writer.writerow(row)
    if dump:
        frame = build_frame(cfg)
        write_signal(os.path.join(out_dir, "tx_x.svkk"), frame.x)
        write_signal(os.path.join(out_dir, "tx_y.svkk"), frame.y)
    if constellation:
        from .metrics import dump_constellation

        dump_constellation(
            os.path.join(out_dir, "constellation.csv"),
            out.x_payload,
            out.y_payload,
            get_format(cfg.modulation),
        )
    if taps_csv and out.equalizer_report is not None:
        out.equalizer_report.taps_csv(os.path.join(out_dir, "taps.csv"))
    if derotation_csv:
        import numpy as np

        np.savetxt(
            os.path.join(out_dir, "derotation.csv"),
            out.derotation.to_row()[None, :],
            delimiter=",",
        )
    r = out.result
    click.echo(
        f"ber {r.ber:.3e} ({r.errors_counted}/{r.bits_counted} bits)  "
        f"snr {r.snr_db:.2f} dB (x {r.snr_x_db:.2f} / y {r.snr_y_db:.2f})  "
        f"min-phase violations {out.diagnostics.min_phase_violation_frac:.2%}  "
        f"derot cond {out.diagnostics.derot_cond:.2f}"
    )


def _parse_axis(text: str):
    if "=" not in text:
        raise click.BadParameter(f"axis {text!r} must be name=v1,v2,...")
    name, raw = text.split("=", 1)
    values = tuple(yaml.safe_load(v) for v in raw.split(","))
    return name.strip(), values


@main.command("sweep")
@click.argument("config", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--axis", "-a", "axes", multiple=True, required=True, help="Axis name=v1,v2,... (repeatable).")
@click.option("--trials", type=int, default=1, show_default=True)
@click.option("--set", "-s", "overrides", multiple=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", "out_dir", default="svkk-out", show_default=True)
@click.option("--jobs", "-j", type=int, default=None, help="Parallel workers [default: SVKK_JOBS or logical cores].")
@click.option("--plot", is_flag=True, help="Also render a simple line plot of the sweep.")
@click.option("--verbose", "-v", is_flag=True)
def sweep_cmd(config, axes, trials, overrides, seed, out_dir, jobs, plot, verbose):
    """Run a Cartesian parameter sweep and write one CSV row per run."""
    cfg = _load(config, overrides, seed)
    _echo_config(cfg, out_dir)
    spec = SweepSpec(
        base=cfg,
        axes=tuple(_parse_axis(a) for a in axes),
        trials=trials,
        output=os.path.join(out_dir, "sweep.csv"),
    )
    log = click.echo if verbose else None
    rows = run_sweep(spec, jobs=jobs or _default_jobs(), log=log)
    click.echo(f"{len(rows)} rows -> {spec.output}")
    if plot:
        _plot_sweep(rows, spec, os.path.join(out_dir, "sweep.png"))
        click.echo(f"plot -> {os.path.join(out_dir, 'sweep.png')}")


def _plot_sweep(rows, spec: SweepSpec, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    axis = spec.axes[0][0]
    xs = sorted({float(r[axis]) for r in rows})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, field_name in ((ax1, "ber"), (ax2, "snr_db")):
        ys = []
        for x in xs:
            vals = [float(r[field_name]) for r in rows if float(r[axis]) == x]
            ys.append(sum(vals) / len(vals))
        ax.plot(xs, ys, "o-")
        ax.set_xlabel(axis)
        ax.set_ylabel(field_name)
        ax.grid(True, alpha=0.4)
    ax1.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


@main.command("study")
@click.argument("name", type=click.Choice(sorted(STUDIES)))
@click.argument("config", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--set", "-s", "overrides", multiple=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", "out_dir", default="svkk-out", show_default=True)
@click.option("--jobs", "-j", type=int, default=None)
@click.option("--verbose", "-v", is_flag=True)
def study_cmd(name, config, overrides, seed, out_dir, jobs, verbose):
    """Run a named pre-registered study; exit code 0 iff its check passes."""
    cfg = _load(config, overrides, seed)
    log = click.echo if verbose else None
    result = run_study(name, cfg, out_dir, jobs=jobs or _default_jobs(), log=log)
    click.echo(result.summary)
    click.echo(f"{name}: {'PASS' if result.passed else 'FAIL'}")
    sys.exit(0 if result.passed else 1)


@main.command("dump-signal")
@click.argument("config", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--set", "-s", "overrides", multiple=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", "out_dir", default="svkk-out", show_default=True)
@click.option("--stage", type=click.Choice(["tx", "channel"]), default="tx", show_default=True)
def dump_signal_cmd(config, overrides, seed, out_dir, stage):
    """Build a frame and dump both polarizations in the binary format."""
    cfg = _load(config, overrides, seed)
    os.makedirs(out_dir, exist_ok=True)
    frame = build_frame(cfg)
    x, y = frame.x, frame.y
    if stage == "channel":
        from .channel import apply_cd, apply_rotation, load_ase
        from .pipeline import resolve_rotation
        import numpy as np

        if cfg.fiber.length_km > 0:
            x, y = apply_cd(x, cfg.fiber), apply_cd(y, cfg.fiber)
        x, y = apply_rotation(x, y, resolve_rotation(cfg.rotation))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(cfg.seed), 0xA5E)))
        x, y = load_ase(x, y, cfg.osnr_db, rng)
    for pol, sig in (("x", x), ("y", y)):
        path = os.path.join(out_dir, f"{stage}_{pol}.svkk")
        write_signal(path, sig)
        click.echo(f"{path}: {len(sig)} samples at {sig.sample_rate / 1e9:.3f} GS/s")


@main.command("validate-config")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "-s", "overrides", multiple=True)
def validate_cmd(config, overrides):
    """Validate CONFIG (with overrides) and print the effective settings."""
    cfg = load_link_config(config, overrides)
    click.echo(yaml.safe_dump(to_dict(cfg), sort_keys=True), nl=False)
    click.echo(f"# valid; hash {config_hash(cfg)}")


def cli_main():
    try:
        main(standalone_mode=True)
    except SvkkError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    cli_main()
