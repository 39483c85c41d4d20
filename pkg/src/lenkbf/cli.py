"""Command-line entry point: ``lenkbf {simulate,filter,experiment,verify}``.

Log verbosity comes from the ``ENKBF_LOG`` environment variable (a level
name such as ``DEBUG`` or ``WARNING``; default ``INFO``).  Every command exits
with status 0 on success and 1 on any failure.
"""

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from .config import parse_config, spec_with
from .dynamics import TRAJ_MAGIC, SimConfig, StreamWriter, read_stream, simulate
from .exceptions import LEnKBFError
from .experiments import default_burn_in, error_series, metrics, run_experiment
from .filtering import FilterConfig, init_ensemble, run_filter
from .locmat import build_localization
from .model import ObsNoiseSpec, lorenz96_model
from .persistence import save_sweep, write_csv, write_json, write_metrics_csv
from .verify import SUITES, run_suites

logger = logging.getLogger("lenkbf")

_SCENARIOS = {"eps": "eps-sweep", "dim": "dim-sweep", "time": "time-sweep", "single": "single"}


def _setup_logging():
    name = os.environ.get("ENKBF_LOG", "INFO").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _load_spec(args, **extra):
    spec = parse_config(args.config)
    changes = dict(extra)
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
    if args.stride is not None:
        changes["stride"] = args.stride
    return spec_with(spec, **changes) if changes else spec


def cmd_simulate(args):
    spec = _load_spec(args)
    cfg = SimConfig(n=spec.n0, dt=spec.dt, steps=spec.steps, seed=spec.base_seed,
                    spinup_time=spec.spinup_time, epsilon=spec.epsilon0,
                    forcing=spec.forcing, stride=spec.stride)
    os.makedirs(spec.output_dir, exist_ok=True)
    truth = os.path.join(spec.output_dir, "truth.bin")
    obs = os.path.join(spec.output_dir, "obs.bin")
    simulate(cfg, truth_path=truth, obs_path=obs)
    meta = {k: v for k, v in dataclasses.asdict(cfg).items() if k != "omega"}
    write_json(os.path.join(spec.output_dir, "simulate.meta.json"),
               {"config": meta, "truth": "truth.bin", "observations": "obs.bin"})
    print(f"wrote {truth} and {obs}")
    return 0


def cmd_filter(args):
    spec = _load_spec(args)
    header, records = read_stream(args.obs)
    n = header.n
    phi = build_localization(n, spec.l)
    cfg = FilterConfig(phi=phi, obs=ObsNoiseSpec.isotropic(n, header.epsilon), dt=header.dt,
                       drift=lorenz96_model(n, spec.forcing), inflation_on=spec.inflation)
    truth = None
    if args.truth is not None:
        th, truth = read_stream(args.truth, magic=TRAJ_MAGIC)
        center = np.array(truth[0])
    else:
        k = int(min(records.shape[0], max(1, round(0.1 / header.dt))))
        center = np.asarray(records[:k]).sum(axis=0) / (k * header.dt)
    ens = init_ensemble(center, spec.m, spec.base_seed, spread=spec.init_spread)
    res = run_filter(args.obs, cfg, ens, stride=spec.stride)

    os.makedirs(spec.output_dir, exist_ok=True)
    mean_path = os.path.join(spec.output_dir, "filter_mean.bin")
    with StreamWriter(mean_path, TRAJ_MAGIC, n, header.dt * spec.stride, header.epsilon) as w:
        w.write(res.mean_trajectory)
    cols = res.diagnostics.as_columns()
    rows = [{c: cols[c][k] for c in cols} for k in range(len(res.record_steps))]
    diag_path = os.path.join(spec.output_dir, "filter_diagnostics.csv")
    write_csv(diag_path, rows, columns=tuple(cols))
    print(f"wrote {mean_path} and {diag_path}")
    if truth is not None:
        if not np.isclose(th.dt, header.dt * spec.stride, rtol=1e-12):
            raise LEnKBFError(
                f"truth record spacing {th.dt:g} != obs dt * stride {header.dt * spec.stride:g}"
            )
        K = min(truth.shape[0], res.mean_trajectory.shape[0])
        errors = error_series(np.asarray(truth[:K]), res.mean_trajectory[:K])
        burn = spec.burn_in if spec.burn_in is not None else default_burn_in(
            header.epsilon, n, spec.l, spec.forcing)
        rec = metrics(errors, res.record_steps[:K] * header.dt, burn, run_id="filter",
                      diagnostics=dict(res.diagnostics.bound_violations))
        path = os.path.join(spec.output_dir, "filter_metrics.csv")
        write_metrics_csv(path, [rec])
        print(f"mse_time_avg_per_dim = {rec.mse_time_avg_per_dim:.6g}  ({path})")
    return 0


def cmd_experiment(args):
    spec = _load_spec(args, scenario=_SCENARIOS[args.scenario])
    result = run_experiment(spec)
    paths = save_sweep(result, spec.output_dir)
    for k, v in result.summary.items():
        print(f"{k}: {v}")
    print("wrote " + ", ".join(paths))
    failed = result.summary.get("failed_cells", 0)
    if failed:
        logger.error("%d cell(s) failed; see the error column", failed)
        return 1
    return 0


def cmd_verify(args):
    report = run_suites(args.suites or None, seed=args.seed or 0)
    print(report.format())
    return 0 if report.passed else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override base_seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--stride", type=int, default=None,
                        help="record every k-th step")

    p = argparse.ArgumentParser(prog="lenkbf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write truth and observation streams")
    s.add_argument("config")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("filter", parents=[common], help="run the filter on an observation stream")
    f.add_argument("config")
    f.add_argument("--obs", required=True, help="observation stream (ENKB)")
    f.add_argument("--truth", default=None,
                   help="truth trajectory (ENKT); initializes the ensemble and enables metrics")
    f.set_defaults(func=cmd_filter)

    e = sub.add_parser("experiment", parents=[common], help="run a scaling sweep")
    e.add_argument("scenario", choices=sorted(_SCENARIOS))
    e.add_argument("config")
    e.add_argument("--threads", type=int, default=None, help="worker processes")
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("suites", nargs="*", metavar="suite",
                   help=f"any of {', '.join(SUITES)}, locmat, theory, all")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LEnKBFError, OSError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
