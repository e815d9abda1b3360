"""Command-line interface: fit-stats, build, predict, compensate, simulate, bench.

Exit codes: 0 success, 2 input error (bad file, bad flag value), 3 numerical
failure (a matrix that must be positive definite is not).

Settings resolve as command-line flag, then ``--config`` file, then the
built-in default. The config file is TOML; keys are the long flag names with
dashes replaced by underscores, either at top level or inside one level of
tables (``[regularization]``, ``[hopdc]`` ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rng_mod
from .bench import results_csv, results_gnuplot, results_json, run_bench
from .classifiers import RegularizationParams, SgdConfig, build_lda, build_rgda, train_sgd_baseline
from .errors import DimensionError, FormatError, NumericalError
from .formats import load_gda, read_features, save_gda
from .hopdc import (
    DRIFT_ORACLES,
    HopdcConfig,
    build_anchor_bank,
    compensate_registry,
    drift_oracle,
    random_unit_rows,
    verify_error_bound,
)
from .lr_rgda import build_lr_rgda
from .simulator import CLASSIFIER_KINDS, PipelineConfig, StreamSpec, report_json, simulate
from .stats import StatsRegistry, accumulate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3

DEFAULTS = {
    "alpha1": 0.2,
    "alpha2": 2.0,
    "alpha3": 0.5,
    "rank": 64,
    "priors": None,
    "gamma": 0.1,
    "kind": "lrrgda",
    "randomized": False,
    "seed": 0,
    "tau": 0.05,
    "topk": 400,
    "samples": 256,
    "classifier": "lrrgda",
    "hopdc": "on",
    "seeds": 3,
    "drift_oracle": None,
    "oracle_seed": 0,
    "oracle_magnitude": 1.0,
    "bound_queries": 1000,
    "warmup": 3,
    "iters": 3,
    "queries": 64,
    "threads": 1,
    "kinds": "LDA,RGDA,LRRGDA",
    "classes": "100,200,400,800",
    "dims": "768",
    "ranks": "16",
}


class InputError(Exception):
    pass


def _opt(parser: argparse.ArgumentParser, flag: str, help_text: str, **kw) -> None:
    """Register a config-resolvable option; its parsed default is ``None``."""
    key = flag.lstrip("-").replace("-", "_")
    shown = DEFAULTS.get(key)
    parser.add_argument(flag, default=None, help=f"{help_text} (default: {shown})", **kw)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        raw = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"config file {path}: {exc}") from None
    flat: dict = {}
    for k, v in raw.items():
        if isinstance(v, dict):
            flat.update({kk.replace("-", "_"): vv for kk, vv in v.items()})
        else:
            flat[k.replace("-", "_")] = v
    return flat


def _resolve(args: argparse.Namespace, config: dict, key: str):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return DEFAULTS[key]


def _params(args, config) -> RegularizationParams:
    priors = _resolve(args, config, "priors")
    if isinstance(priors, str):
        priors = [float(p) for p in priors.split(",") if p.strip()]
    return RegularizationParams(
        alpha1=float(_resolve(args, config, "alpha1")),
        alpha2=float(_resolve(args, config, "alpha2")),
        alpha3=float(_resolve(args, config, "alpha3")),
        rank=int(_resolve(args, config, "rank")),
        priors=None if priors is None else tuple(priors),
    )


def _hopdc(args, config) -> HopdcConfig:
    return HopdcConfig(
        tau=float(_resolve(args, config, "tau")),
        top_k=int(_resolve(args, config, "topk")),
        m_samples=int(_resolve(args, config, "samples")),
        seed=int(_resolve(args, config, "seed")),
    )


def _load_stats(path) -> StatsRegistry:
    obj = load_gda(path)
    if not isinstance(obj, StatsRegistry):
        raise InputError(f"{path} holds a classifier, expected class statistics")
    return obj


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


# ---------------------------------------------------------------- commands


def cmd_fit_stats(args, config) -> int:
    fm = read_features(args.input)
    if fm.rows == 0:
        raise FormatError("zero rows", 0)
    if fm.labels is None:
        raise InputError(f"{args.input} has no labels; fit-stats needs labeled rows")
    registry = accumulate(StatsRegistry(fm.cols), fm)
    save_gda(args.out, registry)
    for c, n in registry.counts().items():
        print(f"class {c}: {n}")
    return EXIT_OK


def cmd_build(args, config) -> int:
    registry = _load_stats(args.stats)
    params = _params(args, config)
    kind = str(_resolve(args, config, "kind")).lower()
    seed = int(_resolve(args, config, "seed"))
    if kind == "lda":
        clf = build_lda(registry, params, gamma=float(_resolve(args, config, "gamma")))
    elif kind == "rgda":
        clf = build_rgda(registry, params)
    elif kind == "lrrgda":
        randomized = bool(args.randomized or config.get("randomized", DEFAULTS["randomized"]))
        clf = build_lr_rgda(registry, params, randomized=randomized, seed=seed)
    elif kind == "sgd":
        clf = train_sgd_baseline(registry, params, SgdConfig(seed=seed))
    else:
        raise InputError(f"--kind must be one of {CLASSIFIER_KINDS}, got {kind!r}")
    save_gda(args.out, clf)
    print(f"built {kind} with {len(clf.class_ids)} classes, d={clf.dim}")
    return EXIT_OK


def cmd_predict(args, config) -> int:
    clf = load_gda(args.model)
    if isinstance(clf, StatsRegistry):
        raise InputError(f"{args.model} holds class statistics; build a classifier first")
    fm = read_features(args.features)
    if fm.rows == 0:
        raise FormatError("zero rows", 0)
    S = np.atleast_2d(clf.scores(fm.data))
    best = np.argmax(S, axis=1)
    lines = ["row,pred,score"]
    lines += [f"{i},{int(clf.class_ids[j])},{float(S[i, j])!r}" for i, j in enumerate(best)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_compensate(args, config) -> int:
    registry = _load_stats(args.stats)
    F_old = read_features(args.anchors_old)
    F_new = read_features(args.anchors_new)
    cfg = _hopdc(args, config)
    bank = build_anchor_bank(F_old, F_new)
    if bank.dim != registry.dim:
        raise DimensionError(f"anchors have dimension {bank.dim}, statistics {registry.dim}")
    out = compensate_registry(registry, bank, cfg)
    save_gda(args.out, out)
    print(f"compensated {len(out)} classes using {bank.n_anchors} anchors")

    if args.verify_bounds:
        family = _resolve(args, config, "drift_oracle")
        if family is None:
            raise InputError("--verify-bounds needs --drift-oracle to declare the true drift")
        fn, lip = drift_oracle(
            family, bank.dim,
            seed=int(_resolve(args, config, "oracle_seed")),
            magnitude=float(_resolve(args, config, "oracle_magnitude")),
        )
        mismatch = float(np.max(np.abs(bank.D - fn(bank.F_old))))
        if mismatch > 1e-9 * (1.0 + float(np.max(np.abs(bank.D)))):
            raise InputError(f"anchor drifts differ from the declared {family} oracle by {mismatch:.3e}")
        gen = rng_mod.stream(cfg.seed, "bound-queries")
        queries = random_unit_rows(int(_resolve(args, config, "bound_queries")), bank.dim, gen)
        report = verify_error_bound(bank, fn, lip, queries, cfg)
        payload = {"drift_oracle": family, **report.to_dict(), "ok": report.ok}
        Path(args.verify_bounds).write_text(json.dumps(payload, indent=2) + "\n")
        print(f"bound check: {'ok' if report.ok else 'VIOLATED'}")
    return EXIT_OK


def cmd_simulate(args, config) -> int:
    spec_dict = {}
    if args.spec:
        try:
            raw = tomllib.loads(Path(args.spec).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"spec file {args.spec}: {exc}") from None
        spec_dict = raw.get("stream", raw)
    spec = StreamSpec.from_dict(spec_dict)
    kind = str(_resolve(args, config, "classifier")).lower()
    if kind not in CLASSIFIER_KINDS:
        raise InputError(f"--classifier must be one of {CLASSIFIER_KINDS}, got {kind!r}")
    hop = str(_resolve(args, config, "hopdc")).lower()
    if hop not in ("on", "off"):
        raise InputError(f"--hopdc must be on or off, got {hop!r}")
    cfg = PipelineConfig(
        params=_params(args, config),
        hopdc=_hopdc(args, config),
        lda_gamma=float(_resolve(args, config, "gamma")),
    )
    report = simulate(
        spec, kind, hop == "on",
        seeds=int(_resolve(args, config, "seeds")),
        cfg=cfg,
        base_seed=int(_resolve(args, config, "seed")),
    )
    text = report_json(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args, config) -> int:
    kinds = [k.strip().upper() for k in str(_resolve(args, config, "kinds")).split(",") if k.strip()]
    classes = _int_list(_resolve(args, config, "classes"))
    dims = _int_list(_resolve(args, config, "dims"))
    ranks = _int_list(_resolve(args, config, "ranks"))
    grid = []
    for kind in kinds:
        for d in dims:
            for C in classes:
                for r in (ranks if kind == "LRRGDA" else [0]):
                    grid.append((kind, C, d, r))
    results = run_bench(
        grid,
        warmup=int(_resolve(args, config, "warmup")),
        iters=int(_resolve(args, config, "iters")),
        seed=int(_resolve(args, config, "seed")),
        n_queries=int(_resolve(args, config, "queries")),
        count_flops=args.flops,
        threads=int(_resolve(args, config, "threads")),
    )
    Path(args.out).write_text(results_csv(results))
    if args.json:
        Path(args.json).write_text(results_json(results) + "\n")
    if args.gnuplot:
        Path(args.gnuplot).write_text(results_gnuplot(results))
    for res in results:
        tag = f" skipped: {res.skipped}" if res.skipped else ""
        print(f"{res.classifier_kind:7s} C={res.C:5d} d={res.d:4d} r={res.r:3d} "
              f"{res.throughput_samples_per_s:12.1f} samples/s{tag}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_regularization(p: argparse.ArgumentParser) -> None:
    _opt(p, "--alpha1", "weight of the class covariance", type=float)
    _opt(p, "--alpha2", "weight of the average covariance", type=float)
    _opt(p, "--alpha3", "ridge added to the diagonal", type=float)
    _opt(p, "--rank", "rank of the class-specific update (lrrgda)", type=int)
    _opt(p, "--priors", "comma-separated class priors in sorted class-id order; uniform if unset")
    _opt(p, "--gamma", "spherical shrinkage of the shared LDA covariance", type=float)


def _add_hopdc(p: argparse.ArgumentParser) -> None:
    _opt(p, "--tau", "softmax temperature", type=float)
    _opt(p, "--topk", "anchors kept per query", type=int)
    _opt(p, "--samples", "pseudo-features drawn per class", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="analytic-cil",
        description="Analytic class-incremental classifiers and drift compensation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="TOML file of option values (flags take precedence)")
        return p

    p = command("fit-stats", "accumulate per-class mean and covariance from labeled features")
    p.add_argument("input", help="FMX1 or CSV feature file with labels")
    p.add_argument("--out", required=True, help="output GDA1 statistics file")
    p.set_defaults(func=cmd_fit_stats)

    p = command("build", "construct a classifier from class statistics")
    p.add_argument("stats", help="GDA1 statistics file")
    p.add_argument("--out", required=True, help="output GDA1 classifier file")
    _opt(p, "--kind", "classifier kind", choices=CLASSIFIER_KINDS)
    _add_regularization(p)
    p.add_argument("--randomized", action="store_true",
                   help="randomized eigensolver for the low-rank factors (default: False)")
    _opt(p, "--seed", "random seed", type=int)
    p.set_defaults(func=cmd_build)

    p = command("predict", "score features with a saved classifier; writes row,pred,score CSV")
    p.add_argument("model", help="GDA1 classifier file")
    p.add_argument("features", help="FMX1 or CSV feature file")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = command("compensate", "shift class statistics by drift retrieved from paired anchors")
    p.add_argument("stats", help="GDA1 statistics file")
    p.add_argument("--anchors-old", required=True, help="anchor features under the old representation")
    p.add_argument("--anchors-new", required=True, help="anchor features under the new representation")
    p.add_argument("--out", required=True, help="output GDA1 statistics file")
    _add_hopdc(p)
    _opt(p, "--seed", "random seed", type=int)
    p.add_argument("--verify-bounds", metavar="REPORT_JSON",
                   help="test mode: check the retrieval error bounds against --drift-oracle (default: off)")
    _opt(p, "--drift-oracle", "declared drift function of the anchors", choices=DRIFT_ORACLES)
    _opt(p, "--oracle-seed", "seed of the declared drift function", type=int)
    _opt(p, "--oracle-magnitude", "scale of the declared drift function", type=float)
    _opt(p, "--bound-queries", "number of unit-norm test queries", type=int)
    p.set_defaults(func=cmd_compensate)

    p = command("simulate", "run the incremental pipeline on a synthetic drifting stream")
    p.add_argument("--spec", help="TOML stream spec (keys of StreamSpec; default: built-in stream)")
    _opt(p, "--classifier", "classifier kind", choices=CLASSIFIER_KINDS)
    _opt(p, "--hopdc", "drift compensation", choices=("on", "off"))
    _opt(p, "--seeds", "number of seeds (seed, seed+1, ...)", type=int)
    _opt(p, "--seed", "first seed", type=int)
    _add_regularization(p)
    _add_hopdc(p)
    p.add_argument("--out", help="output JSON report (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = command("bench", "time construction and scoring over a grid of C, d, r")
    _opt(p, "--kinds", "comma-separated classifier kinds (LDA,SGD,RGDA,LRRGDA)")
    _opt(p, "--classes", "comma-separated class counts")
    _opt(p, "--dims", "comma-separated feature dimensions")
    _opt(p, "--ranks", "comma-separated ranks for LRRGDA")
    _opt(p, "--warmup", "untimed warmup rounds", type=int)
    _opt(p, "--iters", "timed rounds (median reported, >= 3)", type=int)
    _opt(p, "--queries", "query rows per scoring round", type=int)
    _opt(p, "--threads", "BLAS threads", type=int)
    _opt(p, "--seed", "random seed", type=int)
    p.add_argument("--flops", action="store_true", help="also count multiply-adds per sample (default: False)")
    p.add_argument("--out", default="bench.csv", help="output CSV (default: bench.csv)")
    p.add_argument("--json", help="also write results as JSON (default: off)")
    p.add_argument("--gnuplot", help="also write classes vs log10 throughput table (default: off)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except NumericalError as exc:
        where = f" (class {exc.class_id})" if exc.class_id is not None else ""
        print(f"error: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, FormatError, DimensionError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
