"""``bip`` command-line entry point.

Every subcommand prints a JSON document on stdout. With ``--out PREFIX`` the
results are also written to files and ``PREFIX.run.json`` records the run.

Exit codes: 0 success, 1 constraint violations found, 2 bad input or usage,
3 internal or capacity failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .allocator import AllocConfig, monitoring_zone_check, provision, revocation_check
from .capacity import open_world_stress, stress_collision_stats
from .errors import BipError, CapacityExceeded, ConfigError, DomainError, FormatError, MaxAttemptsExceeded
from .geometry import gv_bound, safety_buffer_analysis
from .metrics import PairList, bip_metrics, evaluate_pairs, pair_scores
from .pca import fit_pca, load_pca, save_pca, spectrum_summary
from .store import (
    canonical_pair_dot,
    load_embeddings,
    load_gallery,
    resolve_workers,
    save_gallery,
)
from .synth import SynthGalleryConfig, sample_vmf_mixture

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _dump(doc):
    return json.dumps(_jsonable(doc), indent=1, sort_keys=True)


class Run:
    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()
        self.inputs = {}
        self.outputs = []
        self.seed = None
        self.config = {}

    def input(self, path):
        p = Path(path)
        if p.exists():
            self.inputs[str(p)] = _sha256(p)
        return path

    def write(self, path, text):
        Path(path).write_text(text)
        self.outputs.append(str(path))

    def manifest(self, prefix):
        doc = {
            "command": self.args.command,
            "config": {k: v for k, v in vars(self.args).items() if k != "func"} | self.config,
            "input_sha256": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "tool_version": __version__,
            "wall_time": time.perf_counter() - self.t0,
        }
        path = str(prefix) + ".run.json"
        Path(path).write_text(_dump(doc))
        return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_gallery_stats(args, run):
    g = load_gallery(run.input(args.gallery), validate=not args.no_validate)
    m = g.centroids
    dev = np.abs(m.row_norms() - 1.0) if m.count else np.zeros(0)
    doc = {"count": m.count, "dim": m.dim,
           "norm_violations": int(np.count_nonzero(dev > 1e-5)),
           "max_norm_deviation": float(dev.max()) if dev.size else 0.0}
    if m.count >= 2:
        rng = np.random.default_rng(args.seed)
        k = min(args.sample, m.count)
        idx = np.sort(rng.choice(m.count, size=k, replace=False))
        sub = m.take(idx)
        s = sub.data @ sub.data.T
        np.fill_diagonal(s, -np.inf)
        i, j = np.unravel_index(np.argmax(s), s.shape)
        exact = float(canonical_pair_dot(sub.data[[i]], sub.data[[j]])[0])
        off = s[np.isfinite(s)]
        doc["pairwise_sample"] = {"rows": k, "seed": args.seed, "max_offdiag_cos": exact,
                                  "mean_offdiag_cos": float(off.mean()) if off.size else None,
                                  "argmax": [int(idx[i]), int(idx[j])]}
        run.seed = args.seed
    return doc


def cmd_pca(args, run):
    g = load_gallery(run.input(args.gallery))
    model = fit_pca(g, centered=not args.uncentered)
    if args.out:
        run.outputs += save_pca(model, args.out, args.rank_method)
    return spectrum_summary(model, args.rank_method)


def cmd_capacity(args, run):
    rows = []
    for t in args.tau:
        rep = gv_bound(t, args.dim)
        rows.append(rep.to_dict())
    doc = {"dim": args.dim, "rows": rows}
    if args.delta is not None:
        if len(args.tau) != 1:
            raise ConfigError("--delta needs exactly one --tau")
        doc["buffer"] = safety_buffer_analysis(args.tau[0], args.delta, args.dim).to_dict()
    if args.out:
        lines = ["tau,mu,log2_A_GV,A_GV,alpha_star"]
        for r in rows:
            lines.append(",".join(repr(float(r[k])) for k in
                                  ("tau", "mu", "log2_gv", "gv_bound", "alpha_star_orthogonal")))
        run.write(args.out + ".capacity.csv", "\n".join(lines) + "\n")
        run.write(args.out + ".capacity.json", _dump(doc))
    return doc


def _alloc_config(args):
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("tau", "alpha", "kappa", "seed", "k_neighbors", "temperature",
                "max_attempts_per_candidate", "max_total_attempts"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    if "tau" not in doc:
        raise ConfigError("tau must be given in the config file or with --tau")
    return AllocConfig.from_dict(doc)


def cmd_provision(args, run):
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1 (got {args.n})")
    g = load_gallery(run.input(args.gallery))
    if args.config:
        run.input(args.config)
    cfg = _alloc_config(args)
    run.config = {"alloc_config": cfg.to_dict()}
    run.seed = cfg.seed
    pca = load_pca(args.pca) if args.pca else fit_pca(g)
    workers = args.threads
    status = "ok"
    try:
        vs, stats = provision(g, pca, cfg, args.n, workers=workers)
    except MaxAttemptsExceeded as exc:
        vs, stats = exc.partial, exc.stats
        status = "max_attempts_exceeded"
    metrics = bip_metrics(vs, g, cfg.tau, workers=workers)
    if status == "ok" and not metrics.passed:
        status = "verification_failed"
    doc = {"status": status, "stats": stats.to_dict(), "verification": metrics.to_dict()}
    if args.out:
        run.outputs += vs.save(args.out)
        run.write(args.out + ".stats.json", _dump(doc))
    if status == "max_attempts_exceeded":
        raise _Deferred(EXIT_INTERNAL, doc)
    if status == "verification_failed":
        raise _Deferred(EXIT_VIOLATION, doc)
    return doc


def cmd_verify(args, run):
    v = load_embeddings(run.input(args.virtual))
    g = load_gallery(run.input(args.gallery))
    m = bip_metrics(v, g, args.tau, workers=args.threads)
    doc = m.to_dict()
    if args.out:
        run.write(args.out + ".metrics.json", _dump(doc))
    print(m.table(), file=sys.stderr)
    if not m.passed:
        raise _Deferred(EXIT_VIOLATION, doc)
    return doc


def cmd_stress(args, run):
    v = load_embeddings(run.input(args.virtual))
    h = load_gallery(run.input(args.heldout))
    curve = open_world_stress(v, h, args.tau, args.fractions, alpha=args.alpha,
                              workers=args.threads)
    stats = stress_collision_stats(curve, args.ci_level)
    doc = {"curve": curve.to_dict(), "collision_stats": [s.to_dict() for s in stats]}
    if args.out:
        curve.write_csv(args.out + ".stress.csv")
        run.outputs.append(args.out + ".stress.csv")
        run.write(args.out + ".stress.json", _dump(doc))
    return doc


def cmd_revoke_check(args, run):
    v = load_embeddings(run.input(args.virtual))
    d = load_gallery(run.input(args.delta_gallery))
    revoke = revocation_check(v, d, args.tau, workers=args.threads)
    doc = {"tau": args.tau, "revoke": [list(x) for x in revoke]}
    if args.tau_safe is not None:
        doc["tau_safe"] = args.tau_safe
        doc["monitor"] = [list(x) for x in
                          monitoring_zone_check(v, d, args.tau, args.tau_safe, workers=args.threads)]
    if args.out:
        run.write(args.out + ".revoke.json", _dump(doc))
    if revoke:
        raise _Deferred(EXIT_VIOLATION, doc)
    return doc


def cmd_pairs(args, run):
    a = load_embeddings(run.input(args.a))
    b = load_embeddings(run.input(args.b)) if args.b else a
    pl = PairList.read_csv(run.input(args.pairs))
    calib = None
    if args.calibration_pairs:
        cpl = PairList.read_csv(run.input(args.calibration_pairs))
        ca = load_embeddings(run.input(args.calibration_a)) if args.calibration_a else a
        cb = load_embeddings(run.input(args.calibration_b)) if args.calibration_b else ca
        cs = pair_scores(ca, cb, cpl)
        calib = cs[cpl.genuine]
    if args.threshold is None and args.tar is None:
        raise ConfigError("give --threshold or --tar")
    rep = evaluate_pairs(a, b, pl, threshold=args.threshold, tar=args.tar,
                         protocol=args.mode, calibration_scores=calib)
    doc = rep.to_dict()
    if args.out:
        run.write(args.out + ".protocol.json", _dump(doc))
    return doc


def cmd_synth(args, run):
    if not args.out:
        raise ConfigError("synth needs --out")
    cfg = SynthGalleryConfig.from_json(run.input(args.config))
    run.seed = cfg.seed
    g = sample_vmf_mixture(cfg)
    save_gallery(g, args.out + ".bipe")
    run.outputs += [args.out + ".bipe", args.out + ".bipe.json"]
    return {"count": g.count, "dim": g.dim, "config": cfg.to_dict()}


# ---------------------------------------------------------------------------
# plumbing


class _Deferred(Exception):
    def __init__(self, code, doc):
        super().__init__(code)
        self.code = code
        self.doc = doc


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def build_parser():
    p = argparse.ArgumentParser(prog="bip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"bip {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $BIP_THREADS or all cores)")
        sp.add_argument("--out", default=None, help="output file prefix")
        return sp

    sp = add("gallery-stats", cmd_gallery_stats, "count, dim, norm audit, sampled cosines")
    sp.add_argument("gallery")
    sp.add_argument("--no-validate", action="store_true")
    sp.add_argument("--sample", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("pca", cmd_pca, "eigen-spectrum of the gallery centroids")
    sp.add_argument("gallery")
    sp.add_argument("--uncentered", action="store_true")
    sp.add_argument("--rank-method", choices=("participation", "entropy"), default="participation")

    sp = add("capacity", cmd_capacity, "cap volume and GV capacity table")
    sp.add_argument("--tau", type=float, nargs="+", required=True)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--delta", type=float, default=None)

    sp = add("provision", cmd_provision, "allocate virtual identities")
    sp.add_argument("gallery")
    sp.add_argument("--config", default=None, help="allocator JSON config")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--pca", default=None, help="prefix of a saved PCA model")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--max-attempts-per-candidate", dest="max_attempts_per_candidate", type=int)
    sp.add_argument("--max-total-attempts", dest="max_total_attempts", type=int)

    sp = add("verify", cmd_verify, "exact Non-Collision and Inter-Sep")
    sp.add_argument("virtual")
    sp.add_argument("gallery")
    sp.add_argument("--tau", type=float, required=True)

    sp = add("stress-test", cmd_stress, "open-world collision curve")
    sp.add_argument("virtual")
    sp.add_argument("heldout")
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--fractions", type=_floats, default=[0.1, 0.2, 0.3, 0.4, 0.5])
    sp.add_argument("--alpha", type=float, default=None, help="recorded in the curve only")
    sp.add_argument("--ci-level", type=float, default=0.95)

    sp = add("revoke-check", cmd_revoke_check, "virtual identities hit by new enrolments")
    sp.add_argument("virtual")
    sp.add_argument("delta_gallery")
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--tau-safe", type=float, default=None)

    sp = add("pairs", cmd_pairs, "pair-verification protocol report")
    sp.add_argument("--a", required=True, help="embeddings indexed by a_index")
    sp.add_argument("--b", default=None, help="embeddings indexed by b_index (default: --a)")
    sp.add_argument("--pairs", required=True, help="pair list CSV")
    sp.add_argument("--mode", choices=("R-R", "V-V", "R-V"), required=True)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--threshold", type=float)
    grp.add_argument("--tar", type=float)
    sp.add_argument("--calibration-pairs", default=None)
    sp.add_argument("--calibration-a", default=None)
    sp.add_argument("--calibration-b", default=None)

    sp = add("synth", cmd_synth, "synthetic vMF-mixture gallery")
    sp.add_argument("config")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.threads = resolve_workers(args.threads)
    run = Run(args)
    code = EXIT_OK
    try:
        doc = args.func(args, run)
    except _Deferred as d:
        doc, code = d.doc, d.code
    except (FormatError, ConfigError, DomainError, FileNotFoundError, ValueError) as exc:
        print(f"bip {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CapacityExceeded, BipError, ArithmeticError) as exc:
        print(f"bip {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    print(_dump(doc))
    if args.out and run.outputs:
        run.manifest(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
