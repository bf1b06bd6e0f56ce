"""``amt`` command-line entry point.

Subcommands: ``track``, ``eval``, ``synth``, ``hopfield-demo`` and ``check``.
Exit codes: 0 ok, 2 validation error, 3 I/O or format error, 4 failed
verification.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import json
import logging
from pathlib import Path
import sys

import numpy as np

from . import check as checks
from .backbone import ModelWeights
from .config import TrackerConfig
from .exceptions import AMTError, ValidationError, VerificationError
from .hopfield import retrieve, retrieve_step
from .metrics import evaluate, load_results
from .sequence import Sequence, write_predictions
from .synth import SceneSpec, easy_scene, generate, morph_scene
from .tracker import track_sequence

log = logging.getLogger("amt")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4
PRESETS = {"easy": easy_scene, "morph": morph_scene}


def format_config(config):
    """``key=value`` lines, values JSON-encoded, keys sorted."""
    return "".join(f"{k}={json.dumps(v)}\n" for k, v in sorted(config.show().items()))


def sequence_dirs(root):
    """``root`` itself if it is a sequence directory, otherwise its sequence subdirectories."""
    root = Path(root)
    if (root / "groundtruth.txt").exists():
        return [root]
    if not root.is_dir():
        raise FileNotFoundError(f"no such sequence directory: {root}")
    seqs = sorted(p for p in root.iterdir() if (p / "groundtruth.txt").exists())
    if not seqs:
        raise FileNotFoundError(f"{root} holds no sequence directories")
    return seqs


def _track_one(job):
    seq_dir, out_file, trace_file, config = job
    seq = Sequence.open(seq_dir)
    boxes, scores, tracker = track_sequence(seq, config)
    write_predictions(out_file, boxes, scores)
    if trace_file is not None and hasattr(tracker, "memory_"):
        tracker.memory_.write_trace(trace_file)
    return seq.name, len(boxes)


def cmd_track(config, seq_root, out, jobs=1, trace=None):
    """Track every sequence under ``seq_root``; predictions go to ``out``.

    ``out`` is a file when a single sequence is given and ``out`` ends in
    ``.txt``, otherwise a directory receiving ``<name>.txt`` per sequence.
    """
    seqs = sequence_dirs(seq_root)
    out = Path(out)
    single = len(seqs) == 1 and out.suffix == ".txt"
    if not single:
        out.mkdir(parents=True, exist_ok=True)
    jobs_list = []
    for s in seqs:
        target = out if single else out / f"{s.name}.txt"
        trace_file = None
        if trace is not None:
            trace_path = Path(trace)
            if single and trace_path.suffix:
                trace_file = trace_path
            else:
                trace_path.mkdir(parents=True, exist_ok=True)
                trace_file = trace_path / f"{s.name}.jsonl"
        jobs_list.append((s, target, trace_file, config))
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_track_one, jobs_list))
    else:
        done = [_track_one(j) for j in jobs_list]
    for name, n in done:
        log.info("tracked %s: %d frames", name, n)
    return done


def cmd_eval(pred_dir, gt_dir, out_dir):
    report = evaluate(load_results(pred_dir, gt_dir))
    report.write(out_dir)
    return report


def _synth_one(job):
    spec, frames, out_dir = job
    return generate(spec, frames, out_dir)


def cmd_synth(specs, out_dir, frames=300, jobs=1):
    """Generate one sequence per ``(name, SceneSpec)`` into ``out_dir/<name>``.

    A single spec named ``None`` is written straight into ``out_dir``.
    """
    out_dir = Path(out_dir)
    work = [(spec, frames, out_dir if name is None else out_dir / name) for name, spec in specs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_synth_one, work))
    return [_synth_one(w) for w in work]


def _unit_rows(rng, n, d):
    Y = rng.standard_normal((n, d))
    return Y / np.linalg.norm(Y, axis=1, keepdims=True)


def hopfield_demo(N, d, betas, trials, seed=0, noise=0.1, max_iters=16):
    """Retrieval accuracy and convergence speed of random unit pattern banks.

    Each trial stores ``N`` random unit patterns, queries with one of them
    plus Gaussian noise of norm ``noise`` and counts a hit when the one-step
    retrieved state is closest (by cosine) to the queried pattern.

    Returns:
        list of dicts with keys beta, N, d, accuracy, mean_iters.
    """
    for name, v in (("N", N), ("d", d), ("trials", trials)):
        if int(v) < 1:
            raise ValidationError(f"{name} must be >= 1")
    rows = []
    for beta in betas:
        rng = np.random.default_rng(seed)
        hits, iters = 0, []
        for _ in range(trials):
            Y = _unit_rows(rng, N, d)
            k = int(rng.integers(N))
            r0 = Y[k] + noise * rng.standard_normal(d) / np.sqrt(d)
            r1 = retrieve_step(Y, r0, beta)
            hits += int(np.argmax(Y @ r1 / max(np.linalg.norm(r1), 1e-300)) == k)
            iters.append(retrieve(Y, r0, beta, max_iters=max_iters)[1])
        rows.append({"beta": float(beta), "N": int(N), "d": int(d),
                     "accuracy": hits / trials, "mean_iters": float(np.mean(iters))})
    return rows


def write_demo_csv(rows, path=None):
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=["beta", "N", "d", "accuracy", "mean_iters"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def cmd_check(config, seed=0, inject=None):
    """Run the verification suite; raises :class:`VerificationError` if anything fails."""
    if config.weights_path is not None:
        ModelWeights.load(config.weights_path, config)  # fails closed on a bad file
    vjp = checks.perturbed_vjp if inject == "vjp" else checks.hopfield_assoc_vjp
    results = checks.run_checks(seed, vjp=vjp)
    for r in results:
        print(r.line())
    sys.stdout.flush()
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationError(f"failed checks: {', '.join(failed)}")
    return results


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="tracker config JSON")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (JSON value); repeatable")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--show-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="amt", description="RGB-event tracking with associative memory")
    # top-level copies use their own dests: subparser defaults would otherwise overwrite them
    p.add_argument("--config", dest="top_config", help="tracker config JSON")
    p.add_argument("--set", dest="top_set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--show-config", dest="top_show", action="store_true", help="print the resolved config and exit")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("track", parents=[common], help="track sequences one pass")
    t.add_argument("--seq", required=True, help="sequence directory or a directory of sequences")
    t.add_argument("--out", required=True, help="prediction file or directory")
    t.add_argument("--trace", help="write template-memory traces (JSON lines) here")

    e = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    e.add_argument("--pred", required=True, help="directory of <name>.txt prediction files")
    e.add_argument("--seq", required=True, help="directory of ground-truth sequences")
    e.add_argument("--out", required=True, help="report directory")

    s = sub.add_parser("synth", parents=[common], help="render synthetic sequences")
    s.add_argument("spec", nargs="?", help="scene spec JSON")
    s.add_argument("--preset", choices=sorted(PRESETS), help="built-in scene instead of a spec file")
    s.add_argument("--count", type=int, default=1, help="sequences to render from a preset (seeds seed..)")
    s.add_argument("--frames", type=int, default=300)
    s.add_argument("--out", required=True)

    h = sub.add_parser("hopfield-demo", parents=[common], help="retrieval capacity sweep")
    h.add_argument("--N", type=int, default=32)
    h.add_argument("--d", type=int, default=64)
    h.add_argument("--beta", type=float, nargs="+", default=[1e-8, 0.1, 1.0, 4.0, 20.0])
    h.add_argument("--trials", type=int, default=100)
    h.add_argument("--noise", type=float, default=0.1)
    h.add_argument("--out", help="CSV path (default stdout)")

    c = sub.add_parser("check", parents=[common], help="run the verification suite")
    c.add_argument("--inject-fault", choices=["vjp"], help=argparse.SUPPRESS)
    return p


def _dispatch(args):
    config = TrackerConfig.load(getattr(args, "config", None) or args.top_config,
                                list(args.top_set) + list(getattr(args, "set", [])))
    if args.top_show or getattr(args, "show_config", False) or args.command is None:
        sys.stdout.write(format_config(config))
        return EXIT_OK
    if args.command == "track":
        cmd_track(config, args.seq, args.out, args.jobs, args.trace)
    elif args.command == "eval":
        report = cmd_eval(args.pred, args.seq, args.out)
        print(json.dumps({"SR": report.sr, "PR": report.pr, "NPR": report.npr}))
    elif args.command == "synth":
        if (args.spec is None) == (args.preset is None):
            raise ValidationError("give either a spec file or --preset")
        if args.spec is not None:
            specs = [(None, SceneSpec.load(args.spec))]
        elif args.count == 1:
            specs = [(None, PRESETS[args.preset](args.seed))]
        else:
            specs = [(f"{args.preset}_{s:03d}", PRESETS[args.preset](s))
                     for s in range(args.seed, args.seed + args.count)]
        for path in cmd_synth(specs, args.out, args.frames, args.jobs):
            print(path)
    elif args.command == "hopfield-demo":
        rows = hopfield_demo(args.N, args.d, args.beta, args.trials, args.seed, args.noise)
        write_demo_csv(rows, args.out)
    elif args.command == "check":
        cmd_check(config, args.seed, args.inject_fault)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except AMTError as exc:
        print(f"amt: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"amt: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
