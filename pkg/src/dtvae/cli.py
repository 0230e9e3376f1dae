"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 bad input (flags, paths,
checkpoint format, I/O), 3 training aborted by a non-finite update or a
non-PD posterior (the last checkpoint on disk is left untouched).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import checkpoint, data, gradcheck, nn, plotting, selftest, vae
from .gaussian import NonPDPosteriorError

log = logging.getLogger("dtvae")

METRICS_HEADER = ["epoch", "split", "elbo", "recon", "kl", "wall_seconds"]
CHECKPOINT_NAME = "checkpoint.dtvae"


class UsageError(Exception):
    pass


def _load_train_data(cfg: vae.TrainConfig):
    full = data.load_mnist(cfg.data_dir, "train")
    valid = None
    if cfg.validation:
        full, valid = data.split_validation(full)
    if cfg.subset is not None:
        if not 1 <= cfg.subset <= len(full):
            raise UsageError(f"--subset must be in [1, {len(full)}]")
        full = full.take(slice(0, cfg.subset))
    return full, valid


def _append_metrics(path: str, rows: list[vae.MetricsRow]) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r.epoch, r.split, repr(r.elbo), repr(r.recon), repr(r.kl), repr(r.wall_seconds)])


def cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, CHECKPOINT_NAME)
    metrics_path = os.path.join(args.out, "metrics.csv")
    if args.resume:
        old_cfg, state = checkpoint.load(args.resume)
        cfg = vae.TrainConfig(**{**old_cfg.to_dict(), "epochs": args.epochs, "data_dir": args.data_dir})
    else:
        cfg = vae.TrainConfig(latent=args.latent, rank=args.rank, epsilon=args.epsilon,
                              batch_size=args.batch, epochs=args.epochs, lr=args.lr, seed=args.seed,
                              hidden=args.hidden, validation=args.validation, data_dir=args.data_dir,
                              subset=args.subset, bounded_factors=not args.linear_factors)
        state = vae.init_state(cfg, args.init)
        if os.path.exists(metrics_path):
            os.remove(metrics_path)
    train_set, valid_set = _load_train_data(cfg)
    log.info("training on %d images, rank %d, eps %g, %d epochs", len(train_set), cfg.rank,
             cfg.epsilon, cfg.epochs)
    checkpoint.save(ckpt_path, cfg, state)

    def on_epoch_end(st, rows):
        checkpoint.save(ckpt_path, cfg, st)
        _append_metrics(metrics_path, rows)
        for r in rows:
            log.info("epoch %d %s elbo %.3f (recon %.3f, kl %.3f)", r.epoch, r.split, r.elbo, r.recon, r.kl)

    try:
        vae.train(cfg, train_set, valid_set, state=state, timing=not args.no_timing,
                  on_epoch_end=on_epoch_end)
    except (nn.PoisonedUpdateError, NonPDPosteriorError) as exc:
        print(f"training aborted at epoch {state.epoch + 1}: {exc}", file=sys.stderr)
        return 3
    if not os.path.exists(metrics_path):
        _append_metrics(metrics_path, [])
    if args.figures and os.path.getsize(metrics_path) > len(",".join(METRICS_HEADER)) + 1:
        plotting.render_report([metrics_path], ["run"], args.out)
    return 0


def cmd_eval(args) -> int:
    _, state = checkpoint.load(args.checkpoint)
    ds = data.load_mnist(args.data_dir, args.split)
    images = ds.images if args.subset is None else ds.images[:args.subset]
    value = vae.evaluate(state.params, images, args.samples, args.seed)
    print(f"{args.split}_elbo={value!r}")
    return 0


def cmd_gradcheck(args) -> int:
    worst_overall = 0.0
    failed = []
    for seed in args.seed:
        p, xs, alphas = gradcheck.tiny_setup(seed, args.latent, args.rank, args.hidden,
                                             epsilon=args.epsilon)
        grad_fn = None
        if args.corrupt:
            def grad_fn(q, x, a, _blk=args.corrupt):
                g = vae.elbo_minibatch(q, x, a)[1]
                g[_blk] = g[_blk] * 1.01
                return g
        results = gradcheck.check_gradients(p, xs, alphas, step=args.step, max_entries=args.max_entries,
                                            seed=seed, grad_fn=grad_fn)
        print(f"seed {seed}")
        for r in results:
            flag = "ok" if r.rel_error <= args.tol else "FAIL"
            print(f"  {r.name:10s} rel_err={r.rel_error:.3e} max|g|={r.max_grad:.3e} n={r.probed:4d} {flag}")
            if r.rel_error > args.tol:
                failed.append((seed, r.name))
        worst_overall = max(worst_overall, gradcheck.worst(results).rel_error)
    print(f"worst_rel_error={worst_overall:.3e}")
    if failed:
        print("gradient check failed for " + ", ".join(f"{b} (seed {s})" for s, b in failed), file=sys.stderr)
        return 1
    return 0


def cmd_selftest(args) -> int:
    results, seconds = selftest.run_all()
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:{width}s}  {r.detail}")
    print(f"{sum(r.passed for r in results)}/{len(results)} passed in {seconds:.1f}s")
    if args.figure_dir:
        os.makedirs(args.figure_dir, exist_ok=True)
        rng = np.random.default_rng(4)
        _, _, det_gaps, inv_gaps = selftest.first_order_slopes(selftest.random_transform(rng, 8, 2, 1.0))
        plotting.plot_eps_sweep(selftest.SWEEP_EPSILONS, det_gaps, inv_gaps,
                                os.path.join(args.figure_dir, "eps_sweep.png"))
    return 0 if all(r.passed for r in results) else 1


def write_pgm(path: str, pixels: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8).reshape(data.ROWS, data.COLS)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.COLS} {data.ROWS}\n255\n".encode() + img.tobytes())


def cmd_sample(args) -> int:
    _, state = checkpoint.load(args.checkpoint)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    if args.count == 0:
        return 0
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    z = rng.standard_normal((args.count, state.params.config.latent))
    logits, _ = nn.decoder_forward(state.params, z)
    means = 0.5 * (1.0 + np.tanh(0.5 * logits))
    for i, m in enumerate(means):
        write_pgm(os.path.join(args.out, f"sample_{i:04d}.pgm"), m)
    return 0


def cmd_report(args) -> int:
    if args.labels and len(args.labels) != len(args.metrics):
        raise UsageError("--labels needs one label per metrics file")
    for path in plotting.render_report(args.metrics, args.labels, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtvae", description="VAE with a dyadic posterior transform")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model, writing checkpoint and metrics.csv")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--latent", type=int, default=50)
    p.add_argument("--rank", type=int, default=0, help="0 trains the diagonal baseline")
    p.add_argument("--epsilon", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=500)
    p.add_argument("--subset", type=int, default=None)
    p.add_argument("--validation", action="store_true", help="hold out the last 10000 training images")
    p.add_argument("--init", choices=["glorot", "zeros"], default="glorot")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--linear-factors", action="store_true", help="unbounded U/V heads")
    p.add_argument("--no-timing", action="store_true", help="write wall_seconds as 0")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print the test-set ELBO of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--subset", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--latent", type=int, default=4)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--step", type=float, default=gradcheck.DEFAULT_STEP)
    p.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)
    p.add_argument("--max-entries", type=int, default=200)
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="dense-oracle checks of the factored algebra")
    p.add_argument("--figure-dir", default=None)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("sample", help="decode prior draws to PGM images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("report", help="plot ELBO curves and summarize metrics.csv files")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--labels", nargs="+", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"dtvae {args.command}: {exc}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())
