"""``daeplan`` command line: train, gap, verify, replay-dump."""

import argparse
import csv
import datetime
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, config, mbrl, verify
from .buffer import ReplayBuffer
from .errors import ConfigError

log = logging.getLogger("daeplan")

WORKERS_ENV = "DAEPLAN_WORKERS"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

SCHEMAS = """\
output files:
  manifest.json        config echo, code version, seeds, output paths, start/finish times
  seed_<k>/run.json    config echo for one seed
  seed_<k>/metrics.jsonl
                       one JSON object per episode: episode, return, imagined_return,
                       gap, mean_dae_penalty, model_val_nll (null where undefined)
  seed_<k>/timing.jsonl
                       episode, wall_time_s (kept apart so metrics stay byte-reproducible)
  seed_<k>/buffer.jsonl
                       one episode per line: version, observations, actions, rewards,
                       truncated, diverged
  seed_<k>/dynamics.bin, seed_<k>/dae.bin
                       binary checkpoints (see daeplan.persist)
  learning_curve.csv   episode, return_mean, return_std (population std across seeds)
  gap_report.csv       cell, seed, imagined, realized, gap

environment:
  DAEPLAN_WORKERS      parallel worker processes for multi-seed runs (default 1)
  DAEPLAN_NUMBA        set to 0 to use the pure-numpy kernels

exit codes: 0 success, 1 runtime failure, 2 usage or config error
"""


class UsageError(Exception):
    pass


def parse_seeds(text):
    """``"3"``, ``"0..4"`` (inclusive) or ``"0,2,5"`` -> list of ints."""
    try:
        seeds = []
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                lo, hi = part.split("..", 1)
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use N, A..B or A,B,C") from None
    if len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError("duplicate seeds")
    return seeds


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _write_atomic(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_manifest(path, manifest):
    _write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1")
    return n


def _fan_out(fn, jobs):
    n = min(_workers(), len(jobs))
    if n <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(n) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def _load_config(path):
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    return config.load(path)


# ------------------------------------------------------------------- train


def _train_seed(cfg, seed, out_dir):
    return mbrl.run_training(cfg, seed, out_dir).returns


def learning_curve(curves):
    """Per-episode mean and population std across seeds."""
    n = min(len(c) for c in curves)
    R = np.array([c[:n] for c in curves], dtype=np.float64)
    return [(i, float(R[:, i].mean()), float(R[:, i].std())) for i in range(n)]


def write_learning_curve(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["episode", "return_mean", "return_std"])
        for ep, m, s in rows:
            w.writerow([ep, repr(m), repr(s)])


def cmd_train(args):
    cfg = _load_config(args.config)
    if args.episodes is not None:
        cfg = config.from_dict({**config.parse_text(config.dumps(cfg)), "run.episodes": str(args.episodes)})
    os.makedirs(args.out, exist_ok=True)
    seed_dirs = {s: os.path.join(args.out, f"seed_{s}") for s in args.seed}
    manifest_path = os.path.join(args.out, "manifest.json")
    manifest = {
        "command": "train",
        "config": config.dumps(cfg),
        "config_path": os.path.abspath(args.config),
        "code_version": __version__,
        "seeds": args.seed,
        "outputs": {
            "seed_dirs": {str(s): d for s, d in seed_dirs.items()},
            "learning_curve": os.path.join(args.out, "learning_curve.csv"),
        },
        "started": _now(),
        "finished": None,
        "status": "running",
    }
    write_manifest(manifest_path, manifest)
    try:
        curves = _fan_out(_train_seed, [(cfg, s, seed_dirs[s]) for s in args.seed])
    except Exception:
        manifest.update(finished=_now(), status="failed")
        write_manifest(manifest_path, manifest)
        raise
    write_learning_curve(manifest["outputs"]["learning_curve"], learning_curve(curves))
    manifest.update(finished=_now(), status="ok")
    write_manifest(manifest_path, manifest)
    for s, c in zip(args.seed, curves):
        print(f"seed {s}: final return {c[-1]:.3f}")
    return EXIT_OK


# --------------------------------------------------------------------- gap


def _gap_seed(cfg, n_episodes, seed, alphas, optimizers, oracle):
    return mbrl.gap_study(cfg, n_episodes, [seed], alphas, optimizers, oracle, cfg.gap.starts)


def cmd_gap(args):
    cfg = _load_config(args.config)
    n = args.episodes_of_data if args.episodes_of_data is not None else cfg.gap.episodes
    if n < 1:
        raise UsageError("--episodes-of-data must be >= 1")
    alphas = args.alpha if args.alpha is not None else list(cfg.gap.alphas)
    if any(a < 0 for a in alphas):
        raise UsageError("--alpha must be non-negative")
    optimizers = ("cem", "adam") if args.optimizer == "both" else (args.optimizer,)
    os.makedirs(args.out, exist_ok=True)
    report = os.path.join(args.out, "gap_report.csv")
    manifest_path = os.path.join(args.out, "manifest.json")
    manifest = {
        "command": "gap",
        "config": config.dumps(cfg),
        "config_path": os.path.abspath(args.config),
        "code_version": __version__,
        "seeds": args.seed,
        "episodes_of_data": n,
        "alphas": alphas,
        "optimizers": list(optimizers),
        "oracle": args.oracle,
        "outputs": {"gap_report": report},
        "started": _now(),
        "finished": None,
        "status": "running",
    }
    write_manifest(manifest_path, manifest)
    try:
        parts = _fan_out(_gap_seed, [(cfg, n, s, alphas, optimizers, args.oracle) for s in args.seed])
    except Exception:
        manifest.update(finished=_now(), status="failed")
        write_manifest(manifest_path, manifest)
        raise
    rows = [r for part in parts for r in part]
    with open(report, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=mbrl.GAP_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    manifest.update(finished=_now(), status="ok")
    write_manifest(manifest_path, manifest)
    cells = list(dict.fromkeys(r["cell"] for r in rows))
    for c in cells:
        gaps = [r["gap"] for r in rows if r["cell"] == c]
        print(f"{c:>20s}  median gap {np.median(gaps):+.4f}")
    return EXIT_OK


# ------------------------------------------------------------------ verify


def cmd_verify(args):
    results = verify.run(args.suite)
    ok = True
    print(f"{'suite':<12} {'check':<46} {'value':>12} {'limit':>10}  result")
    for suite, c, _ in results:
        ok &= bool(c.passed)
        print(f"{suite:<12} {c.name:<46} {c.value:>12.4g} {c.limit:>10.3g}  {'PASS' if c.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


# ------------------------------------------------------------- replay-dump


def cmd_replay_dump(args):
    if not os.path.exists(args.buffer):
        raise UsageError(f"buffer file not found: {args.buffer}")
    buf = ReplayBuffer.load_jsonl(args.buffer)
    od, ad_ = buf.obs_dim, buf.action_dim
    header = ["episode", "t"] + [f"s{i}" for i in range(od)] + [f"a{i}" for i in range(ad_)]
    header += ["reward"] + [f"next_s{i}" for i in range(od)]
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        for e, ep in enumerate(buf.episodes):
            for t in range(len(ep)):
                row = [e, t, *ep.observations[t], *ep.actions[t], ep.rewards[t], *ep.observations[t + 1]]
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# -------------------------------------------------------------------- main


def _alphas(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None
    return vals


def build_parser():
    p = argparse.ArgumentParser(
        prog="daeplan",
        description="Model-based RL with denoising-autoencoder trajectory regularization.",
        epilog=SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the learning loop for one or more seeds", epilog=SCHEMAS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("config")
    t.add_argument("--seed", type=parse_seeds, default=[0], help="N, A..B (inclusive) or A,B,C")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--episodes", type=int, default=None, help="override run.episodes")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gap", help="open-loop imagination-vs-reality study", epilog=SCHEMAS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    g.add_argument("config")
    g.add_argument("--episodes-of-data", type=int, default=None, help="random episodes to train on (default gap.episodes)")
    g.add_argument("--optimizer", choices=["cem", "adam", "both"], default="both")
    g.add_argument("--alpha", type=_alphas, default=None, help="alpha or comma list (default gap.alphas)")
    g.add_argument("--seed", type=parse_seeds, default=[0])
    g.add_argument("--oracle", action="store_true", help="plan with the true dynamics")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gap)

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("suite", choices=[*verify.SUITES, "all"])
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("replay-dump", help="write a buffer.jsonl as a transition CSV")
    r.add_argument("buffer")
    r.add_argument("--out", default="-", help="CSV path, - for stdout")
    r.set_defaults(func=cmd_replay_dump)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"daeplan: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"daeplan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except mbrl.RunError as exc:
        print(f"daeplan: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report, do not dump a traceback on users
        log.debug("unhandled error", exc_info=True)
        print(f"daeplan: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
