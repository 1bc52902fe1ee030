"""Command-line interface.

Exit codes: 0 success, 2 config/validation error, 3 numerical/degeneracy
error, 4 I/O error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("tvlds")


def _cmd_simulate(args):
    from .bench import load_config
    from .simulate import simulate_trajectory, trajectory_to_csv

    cfg = load_config(args.config)
    traj = simulate_trajectory(cfg.params, args.T, args.seed, keep_states=args.keep_states)
    trajectory_to_csv(traj, args.out)
    log.info("wrote %d rows to %s (hash %s)", traj.T, args.out, traj.digest())


def _load_init(path):
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        unknown = set(raw) - {"a_init"}
        if unknown or "a_init" not in raw:
            raise ValidationError(f"--init: expected a matrix or {{'a_init': matrix}}, got keys {sorted(raw)}")
        raw = raw["a_init"]
    return np.atleast_2d(np.asarray(raw, dtype=float))


def _cmd_estimate(args):
    from .simulate import trajectory_from_csv

    traj = trajectory_from_csv(args.data)
    method = args.method
    if method == "cm":
        from .cm import estimate_cm

        if args.sigma_eps is None:
            raise ValidationError("--method cm needs --sigma-eps (use cm-intercept otherwise)")
        doc = estimate_cm(traj, sigma_eps_known=args.sigma_eps).to_dict()
    elif method == "cm-intercept":
        from .cm import estimate_cm

        doc = estimate_cm(traj, sigma_eps_known=None).to_dict()
    elif method == "full-state":
        from .baseline import ols_full_state

        if traj.betas is None:
            raise ValidationError("--method full-state needs beta_* columns in the data")
        a = ols_full_state(traj.betas)
        doc = {"sigma_hat": None, "m_hat": None, "a_hat": a.tolist(),
               "sigma_eps_sq_hat": None, "diagnostics": {}}
    else:
        from .bench import load_config
        from .em import em_fit

        if args.config is None:
            raise ValidationError("--method em needs --config for the known sigma_w and sigma_eps")
        params = load_config(args.config).params
        sigma_eps = params.sigma_eps if args.sigma_eps is None else args.sigma_eps
        a_init = _load_init(args.init) if args.init else None
        fit = em_fit(traj, params.sigma_w, sigma_eps, a_init=a_init,
                     max_iters=args.max_iters, tol=args.tol)
        doc = fit.to_dict()
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_bench(args):
    from .bench import load_config, run_experiment, write_outputs

    cfg = load_config(args.config)
    records, summaries = run_experiment(cfg, workers=args.workers)
    out = write_outputs(records, summaries, cfg, output_dir=args.output_dir)
    for s in summaries:
        print(f"{s.estimator}: slope {s.slope:+.4f}  ({sum(s.n_ok.values())} ok trials)")
    print(f"outputs in {out}")


def _cmd_bound(args):
    from .bench import load_config
    from .model import lyapunov_solve, theoretical_bound

    params = load_config(args.config).params
    stat = lyapunov_solve(params.A, params.sigma_w)
    tb = theoretical_bound(params, stat, args.T, args.delta, args.gamma, args.c)
    print(json.dumps(tb.to_dict(), indent=2))


def build_parser():
    p = argparse.ArgumentParser(prog="tvlds", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one trajectory to CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--keep-states", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    e = sub.add_parser("estimate", help="estimate A from a trajectory CSV")
    e.add_argument("--method", choices=["cm", "cm-intercept", "em", "full-state"], required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--sigma-eps", type=float)
    e.add_argument("--init", help="JSON matrix (or {'a_init': matrix}) to start EM from")
    e.add_argument("--config", help="experiment config supplying sigma_w/sigma_eps for em")
    e.add_argument("--max-iters", type=int, default=500)
    e.add_argument("--tol", type=float, default=1e-6)
    e.add_argument("--out")
    e.set_defaults(func=_cmd_estimate)

    b = sub.add_parser("bench", help="run a Monte Carlo experiment")
    b.add_argument("--config", required=True)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--output-dir", help="override the config's output_dir")
    b.set_defaults(func=_cmd_bench)

    t = sub.add_parser("bound", help="print the theoretical error bounds as JSON")
    t.add_argument("--config", required=True)
    t.add_argument("--T", type=int, required=True)
    t.add_argument("--delta", type=float, required=True)
    t.add_argument("--gamma", type=float, required=True)
    t.add_argument("--c", type=float, default=1.0)
    t.set_defaults(func=_cmd_bound)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
