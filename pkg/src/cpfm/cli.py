"""Command-line entry point: ``cpfm <subcommand> ...``.

Stages share a work directory so each can be rerun on its own:

    work/gram.csv, work/subset.csv         kernel
    work/factor/                           factor
    work/plan.csv, work/embeddings.csv     gwot
    work/model.ckpt, work/history.csv      train

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as cio
from .config import RunConfig, load_config, save_config
from .dcfm import load_checkpoint, save_checkpoint
from .errors import IoError, NumericalError, ValidationError
from .gwot import EmbeddingSet, GwotResult, quadratic_objective, sign_flipped_solve, solve_adaptive
from .kernels import Dataset, neg_sqdist_kernel, sqdist_kernel
from .lowrank import factorize, pivoted_cholesky
from .metrics import UNAVAILABLE, aggregate, gwot_eval, wasserstein_to_gaussian
from .oracle import (entropic_ot_bruteforce, gw_expand_check, identity_check_factor2,
                     permutation_coupling_scan, quadratic_bruteforce, random_feasible_plan)
from .pipeline import build_gram, embed, fit_drift, reconstruct, subsample, CouplingStage
from .sampler import grid_conditions, grid_generate
from .sinkhorn import sinkhorn

log = logging.getLogger("cpfm")

# short spellings accepted by ``gwot --target``
TARGET_ALIASES = {"uniform-square": "uniform_square", "circle": "unit_circle"}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with numerical failures
    def error(self, message):
        raise ValidationError(message)


def _cfg(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _path(work, name):
    return os.path.join(work, name)


def _load_fp(args):
    return cio.load_fingerprints(args.fingerprints) if getattr(args, "fingerprints", None) else None


# -- stages ----------------------------------------------------------------

def cmd_synth(args):
    spec = cio.SyntheticSpec(n=args.n, d_x=args.d_x, n_classes=args.classes,
                             separation=args.separation, seed=args.seed, kind=args.kind,
                             n_bits=args.bits)
    out = cio.make_synthetic(spec)
    if spec.kind == "molecule":
        ds, bits = out
        cio.save_fingerprints(args.fingerprints_out or args.out + ".fp.csv", bits)
    else:
        ds = out
    cio.save_dataset(args.out, ds)


def cmd_kernel(args):
    cfg = _cfg(args)
    ds = cio.load_dataset(args.data)
    os.makedirs(args.work, exist_ok=True)
    idx = subsample(ds.n, cfg.max_ot_points, cfg.seed)
    fp = _load_fp(args)
    gram, sigma = build_gram(ds.subset(idx), args.kernel or cfg.kernel, None if fp is None else fp[idx])
    cio.save_matrix(_path(args.work, "gram.csv"), gram)
    cio.save_matrix(_path(args.work, "subset.csv"), idx)
    if sigma is not None:
        log.info("bandwidth %.6g", sigma)


def cmd_factor(args):
    cfg = _cfg(args)
    gram = cio.load_matrix(_path(args.work, "gram.csv"))
    factor = factorize(gram, args.eta if args.eta is not None else cfg.eta)
    cio.save_factor(_path(args.work, "factor"), factor)
    log.info("rank %d of %d", factor.rank, factor.n)


def cmd_gwot(args):
    cfg = _cfg(args)
    factor = cio.load_factor(_path(args.work, "factor"))
    if getattr(args, "embeddings", None):
        emb = EmbeddingSet(cio.load_matrix(args.embeddings))
    else:
        target = TARGET_ALIASES.get(getattr(args, "target", None), getattr(args, "target", None))
        target = target or cfg.target_dist
        dim = getattr(args, "dim", None) or cfg.d_y
        seed = cfg.seed if getattr(args, "seed", None) is None else args.seed
        emb = cio.draw_target(target, factor.n, dim, seed)
    res = solve_adaptive(factor, emb, cfg.epsilon_init, cfg.tau, cfg.delta)
    _save_gwot(args.work, emb, res)


def _save_gwot(work, emb, res: GwotResult):
    cio.save_matrix(_path(work, "plan.csv"), res.plan)
    cio.save_matrix(_path(work, "embeddings.csv"), emb.y)
    cio.save_matrix(_path(work, "aux.csv"), res.aux)
    cio.save_matrix(_path(work, "trace.csv"),
                    np.column_stack([res.objective_trace, res.unregularized_trace]))
    meta = {"final_epsilon": res.final_epsilon, "iterations": res.iterations,
            "objective": res.objective, "accepted_epsilons": res.accepted_epsilons,
            "objective_trace": res.objective_trace, "converged": res.converged}
    with open(_path(work, "gwot.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def _load_stage(work):
    idx = cio.load_matrix(_path(work, "subset.csv"))[:, 0].astype(np.int64)
    emb = EmbeddingSet(cio.load_matrix(_path(work, "embeddings.csv")))
    plan = cio.load_matrix(_path(work, "plan.csv"))
    with open(_path(work, "gwot.json")) as fh:
        meta = json.load(fh)
    res = GwotResult(plan, cio.load_matrix(_path(work, "aux.csv")), meta["objective_trace"],
                     meta["final_epsilon"], accepted_epsilons=meta["accepted_epsilons"])
    return CouplingStage(idx, None, emb, res)


def cmd_train(args):
    cfg = _cfg(args)
    ds = cio.load_dataset(args.data)
    stage = _load_stage(args.work)
    state = fit_drift(ds, stage, cfg)
    save_checkpoint(_path(args.work, "model.ckpt"), state.net, cfg.schedule)
    cio.save_matrix(_path(args.work, "history.csv"), np.array(state.history))


def cmd_embed(args):
    net, _ = load_checkpoint(args.checkpoint)
    ds = cio.load_dataset(args.data)
    cio.save_matrix(args.out, embed(net, ds.features, args.steps, args.seed))


def cmd_reconstruct(args):
    net, _ = load_checkpoint(args.checkpoint)
    y = cio.load_matrix(args.embeddings)
    cio.save_matrix(args.out, reconstruct(net, y, args.steps, args.seed))


def cmd_grid(args):
    net, _ = load_checkpoint(args.checkpoint)
    x = grid_generate(net, args.lo, args.hi, args.k, args.steps, args.seed)
    cio.save_matrix(args.out, np.hstack([grid_conditions(args.lo, args.hi, args.k), x]))


def cmd_eval(args):
    cfg = _cfg(args)
    result = {"metric": args.metric, "R": args.runs, "config": cfg.to_dict()}
    if args.metric in UNAVAILABLE:
        result.update(mean=None, std=None, available=False,
                      reason="needs a pretrained vision network; not provided")
        print(json.dumps(result))
        return
    y = cio.load_matrix(args.embeddings)
    if args.metric == "w2g":
        runs = [wasserstein_to_gaussian(y, args.eps, args.seed + r) for r in range(args.runs)]
    else:
        if not args.gram:
            raise ValidationError("gwot metric needs --gram")
        runs = [gwot_eval(cio.load_matrix(args.gram), y)] * args.runs
    if len(runs) >= 2:
        mean, std = aggregate(runs)
    else:
        mean, std = float(runs[0]), None
    result.update(mean=mean, std=std, runs=runs)
    print(json.dumps(result))


def oracle_table(seed: int = 0):
    """Library-versus-oracle comparisons as ``(name, max error, tolerance)`` rows."""
    rng = np.random.default_rng(seed)
    rows = []

    err = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 4))
        c = rng.uniform(0, 2, (n, n))
        eps = float(rng.choice([1.0, 0.3, 0.1]))
        err = max(err, float(np.abs(sinkhorn(c, eps) - entropic_ot_bruteforce(c, eps)).max()))
    rows.append(("sinkhorn vs polytope Newton", err, 1e-6))

    err = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 9))
        x = rng.standard_normal((n, 3))
        y = rng.standard_normal((n, int(rng.integers(1, 4))))
        g = build_gram(_ds(x), "rbf")[0]
        err = max(err, identity_check_factor2(g, y, 5, int(rng.integers(1 << 30)),
                                              phi=pivoted_cholesky(g, 1.0).phi))
    rows.append(("factor-2 variational identity", err, 1e-9))

    err = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 7))
        x = rng.standard_normal((n, 2))
        y = rng.standard_normal((n, 2))
        g = build_gram(_ds(x), "rbf")[0]
        p = random_feasible_plan(n, rng)
        q = quadratic_bruteforce(g, y, p)
        err = max(err, abs(quadratic_objective(g, y, p) - q) / max(1.0, abs(q)))
    rows.append(("quadratic objective vs quadruple sum", err, 1e-10))

    err = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 7))
        err = max(err, gw_expand_check(rng.standard_normal((n, 2)), rng.standard_normal((n, 2)),
                                       random_feasible_plan(n, rng)))
    rows.append(("GW expansion identity", err, 1e-10))

    x = np.array([[0.0], [1.0], [3.0]])
    res = sign_flipped_solve(sqdist_kernel(x), x.copy(), 1e-3)
    g = neg_sqdist_kernel(x)
    _, best, _ = permutation_coupling_scan(g, x)
    rows.append(("sign-flipped GW vs permutation scan", abs(quadratic_objective(g, x, res.plan) - best), 1e-4))
    return rows


def _ds(x):
    return Dataset(x)


def cmd_oracle(args):
    rows = oracle_table(args.seed)
    width = max(len(r[0]) for r in rows)
    failed = 0
    for name, err, tol in rows:
        ok = err <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  max_err={err:.3e}  tol={tol:.0e}")
    if failed:
        raise NumericalError(f"{failed} oracle check(s) failed")


def cmd_pipeline(args):
    cfg = _cfg(args)
    os.makedirs(args.work, exist_ok=True)
    save_config(_path(args.work, "config.json"), cfg)
    ns = argparse.Namespace(**vars(args))
    ns.kernel, ns.eta, ns.target, ns.dim, ns.seed, ns.embeddings = (None,) * 6
    for step in (cmd_kernel, cmd_factor, cmd_gwot, cmd_train):
        log.info("stage %s", step.__name__[4:])
        step(ns)
    net, _ = load_checkpoint(_path(args.work, "model.ckpt"))
    ds = cio.load_dataset(args.data)
    y = embed(net, ds.features, cfg.steps_T, cfg.seed)
    cio.save_matrix(_path(args.work, "generated_embeddings.csv"), y)
    runs = [wasserstein_to_gaussian(y, 1e-2, cfg.seed + r) for r in range(3)]
    mean, std = aggregate(runs)
    summary = {"metric": "w2g", "mean": mean, "std": std, "R": len(runs), "config": cfg.to_dict()}
    with open(_path(args.work, "eval.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary))


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpfm", description="Coupled flow matching at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic labeled dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=512)
    s.add_argument("--d-x", dest="d_x", type=int, default=10)
    s.add_argument("--classes", type=int, default=2)
    s.add_argument("--separation", type=float, default=6.0)
    s.add_argument("--kind", choices=("mixture", "molecule"), default="mixture")
    s.add_argument("--bits", type=int, default=32)
    s.add_argument("--fingerprints-out")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    def staged(name, func, helptext, data=False, work_default=None):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--work", required=work_default is None, default=work_default,
                       help="stage work directory")
        s.add_argument("--config")
        if data:
            s.add_argument("--data", required=True)
        s.set_defaults(func=func)
        return s

    s = staged("kernel", cmd_kernel, "Gram matrix of (a subsample of) the data", data=True)
    s.add_argument("--kernel", choices=("image", "rbf", "molecule", "neg-sqdist", "sqdist"))
    s.add_argument("--fingerprints")
    s = staged("factor", cmd_factor, "low-rank factor of the Gram matrix")
    s.add_argument("--eta", type=float)
    s = staged("gwot", cmd_gwot, "adaptive GWOT coupling to a target sample")
    s.add_argument("--target", choices=cio.TARGETS + tuple(TARGET_ALIASES))
    s.add_argument("--dim", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--embeddings", help="explicit embedding CSV instead of a target draw")
    staged("train", cmd_train, "train the drift network on plan-sampled pairs", data=True)
    s = staged("pipeline", cmd_pipeline, "kernel, factor, gwot, train, eval", data=True,
               work_default="cpfm_run")
    s.add_argument("--fingerprints")

    def sampling(name, func, helptext):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--steps", type=int, default=100)
        s.add_argument("--seed", type=int, default=0)
        s.set_defaults(func=func)
        return s

    sampling("embed", cmd_embed, "sample embeddings for data rows").add_argument("--data", required=True)
    sampling("reconstruct", cmd_reconstruct, "sample data for embedding rows").add_argument(
        "--embeddings", required=True)
    s = sampling("grid", cmd_grid, "decode a K x K latent grid")
    s.add_argument("--lo", type=float, default=-1.5)
    s.add_argument("--hi", type=float, default=1.5)
    s.add_argument("--k", type=int, default=10)

    s = sub.add_parser("eval", help="metrics as JSON")
    s.add_argument("--metric", choices=("w2g", "gwot") + UNAVAILABLE, default="w2g")
    s.add_argument("--embeddings")
    s.add_argument("--gram")
    s.add_argument("--runs", type=int, default=3)
    s.add_argument("--eps", type=float, default=1e-2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("oracle", help="brute-force oracle checks")
    s.add_argument("action", choices=("run-all",))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "eval" and args.metric not in UNAVAILABLE and not args.embeddings:
            raise ValidationError("--embeddings is required")
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {IoError(str(exc))}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
