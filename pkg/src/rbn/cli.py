"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 numeric failure.  Results go to
the paths named by flags (or stdout); diagnostics and timings go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from rbn import io as rio
from rbn.chart import api
from rbn.chart.params import GrbnParams
from rbn.errors import NumericError, RbnError
from rbn.model import serialize
from rbn.model.cnf import to_cnf
from rbn.model.sampling import sample_with_rng
from rbn.model.types import GAUSSIAN
from rbn.synth import EVAL_FIT, NOISE_LEVELS, SynthConfig, evaluate, generate_dataset
from rbn.train import FitConfig, FreeParams, default_init, fit


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _need_file(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: no such file: {path}")


def _check_out(path):
    if path is None:
        return
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"--out: directory does not exist: {parent}")


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _load_model(path):
    spec = serialize.load(path)
    return GrbnParams.from_spec(spec) if spec.kind == GAUSSIAN else spec


def _synth_config(path, noise=None) -> tuple[SynthConfig, dict]:
    data = _load_json(path) if path else {}
    extra = {k: data.pop(k) for k in ("fit", "eval") if k in data}
    cfg = SynthConfig.from_dict(data)
    if noise is not None:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), "noise": noise})
    return cfg, extra


def cmd_sample(args) -> None:
    if args.model is None and args.config is None:
        raise UsageError("sample needs --model or --config")
    if args.model:
        _need_file(args.model, "--model")
    if args.config:
        _need_file(args.config, "--config")
    _check_out(args.out)
    _check_out(args.trees)
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    if args.config:
        noise = args.noise[0] if args.noise else None
        cfg, _ = _synth_config(args.config, noise)
        pairs = generate_dataset(cfg, args.count, args.seed)
    else:
        model = _load_model(args.model)
        rng = np.random.default_rng(args.seed)
        pairs = [sample_with_rng(model, rng)[::-1] for _ in range(args.count)]
    _emit(rio.format_sequences([y for y, _ in pairs]), args.out)
    if args.trees:
        _emit(rio.trees_to_json([t for _, t in pairs]) if pairs else "[]\n", args.trees)


def _parse_inputs(args):
    _need_file(args.model, "--model")
    _need_file(args.data, "--data")
    _check_out(args.out)
    return _load_model(args.model), rio.read_sequences(args.data)


def cmd_parse(args) -> None:
    model, seqs = _parse_inputs(args)
    trees, marg = [], []
    for s, y in enumerate(seqs):
        chart = api.parse(model, y)
        print(f"sequence {s}: log_likelihood {chart.log_likelihood:.12g}")
        if args.mode == "marginal":
            nodes = []
            for post in api.node_posteriors(model, chart):
                item = {"span": list(post.span), "existence_prob": post.existence_prob}
                dist = post.dist
                if hasattr(dist, "g"):
                    item["mean"] = [float(x) for x in dist.g.mean]
                    item["var"] = [float(x) for x in np.diag(dist.g.cov)]
                else:
                    item["probs"] = [float(x) for x in np.exp(dist.log_probs)]
                nodes.append(item)
            marg.append({"n": chart.n, "log_likelihood": chart.log_likelihood, "nodes": nodes})
        else:
            trees.append(api.best_tree(model, chart))
    if args.mode == "marginal":
        payload = marg[0] if len(marg) == 1 else marg
        _emit(json.dumps(payload, indent=2) + "\n", args.out)
    elif args.out is not None or trees:
        _emit(rio.trees_to_json(trees) if trees else "[]\n", args.out)


def cmd_export_chart(args) -> None:
    model, seqs = _parse_inputs(args)
    blocks = [api.export_chart_csv(model, api.parse(model, y)) for y in seqs]
    _emit("\n".join(blocks), args.out)


def cmd_train(args) -> None:
    _need_file(args.data, "--data")
    if args.model:
        _need_file(args.model, "--model")
    if args.config:
        _need_file(args.config, "--config")
    _check_out(args.out)
    _check_out(args.report)
    conf = _load_json(args.config) if args.config else {}
    cov_mode = conf.pop("cov_mode", "diagonal")
    free = conf.pop("free", None)
    multi = conf.pop("multi_terminal", False)
    taus = conf.pop("transpositions", None)
    try:
        fit_cfg = FitConfig(**conf)
    except TypeError as exc:
        raise UsageError(f"--config: {exc}") from None
    seqs = rio.read_sequences(args.data)
    if args.model:
        init = _load_model(args.model)
    else:
        init = default_init(
            seqs,
            transpositions=taus is not None,
            transposition_support=taus,
            multi_terminal=multi,
        )
    start = FreeParams.from_params(init, free=free, cov_mode=cov_mode)
    report = fit(start, seqs, fit_cfg, threads=args.threads)
    _log(f"train: {report.iterations} iterations, {report.evaluations} evaluations, {report.wall_time:.2f} s")
    params = report.params
    spec = params.to_spec() if isinstance(params, GrbnParams) else params
    _emit(serialize.dumps(spec) + "\n", args.out)
    if args.report:
        _emit(json.dumps(report.to_dict(include_time=False), indent=2) + "\n", args.report)


def cmd_eval(args) -> None:
    if args.config:
        _need_file(args.config, "--config")
    _check_out(args.out)
    cfg, extra = _synth_config(args.config)
    ev = dict(extra.get("eval", {}))
    fit_cfg = FitConfig(**extra["fit"]) if "fit" in extra else EVAL_FIT
    known = {"n_train", "n_penalty", "resamples", "slack", "cov_mode"}
    if set(ev) - known:
        raise UsageError(f"unknown eval keys: {sorted(set(ev) - known)}")
    levels = args.noise or list(NOISE_LEVELS)
    rows = []
    for noise in levels:
        t0 = time.perf_counter()
        res = evaluate(
            cfg,
            noise,
            n_test=args.count if args.count is not None else 50,
            seed=args.seed,
            fit_config=fit_cfg,
            threads=args.threads,
            progress=_log,
            **ev,
        )
        _log(f"eval: noise {noise} done in {time.perf_counter() - t0:.1f} s (penalty {res.penalty:.4g})")
        rows.extend(res.rows())
    _emit(rio.format_metrics(rows), args.out)


def cmd_convert(args) -> None:
    _need_file(args.model, "--model")
    _check_out(args.out)
    spec = serialize.load(args.model)
    if args.to_cnf:
        spec = to_cnf(spec)
    _emit(serialize.dumps(spec) + "\n", args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rbn", description="Chart inference, training and evaluation for recursive Bayesian networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *flags):
        for f in flags:
            if f == "model":
                sp.add_argument("--model", help="model JSON")
            elif f == "data":
                sp.add_argument("--data", help="sequence CSV")
            elif f == "out":
                sp.add_argument("--out", help="output path (stdout if omitted)")
            elif f == "seed":
                sp.add_argument("--seed", type=int, default=0)
            elif f == "config":
                sp.add_argument("--config", help="JSON configuration")
            elif f == "threads":
                sp.add_argument("--threads", type=int, default=1, help="concurrent likelihood evaluations")

    sp = sub.add_parser("sample", help="draw sequences from a model or a synthetic config")
    common(sp, "model", "config", "out", "seed")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--noise", type=float, nargs=1, help="noise level (with --config)")
    sp.add_argument("--trees", help="also write the generating trees as JSON")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("parse", help="marginal likelihood and best tree (or node posteriors)")
    common(sp, "model", "data", "out")
    sp.add_argument("--mode", choices=("max", "marginal"), default="max")
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("train", help="fit a GRBN or discrete RBN by gradient descent")
    common(sp, "model", "data", "out", "config", "threads")
    sp.add_argument("--report", help="write the fit report JSON")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="synthetic evaluation against the change-point baseline")
    common(sp, "config", "out", "seed", "threads")
    sp.add_argument("--noise", type=float, nargs="+", help="noise levels (default: all six)")
    sp.add_argument("--count", type=int, default=None, help="test sequences per noise level (default 50)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-chart", help="per-cell table behind a scape plot")
    common(sp, "model", "data", "out")
    sp.set_defaults(func=cmd_export_chart)

    sp = sub.add_parser("convert", help="re-serialise a model, optionally to CNF")
    common(sp, "model", "out")
    sp.add_argument("--to-cnf", action="store_true")
    sp.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        t0 = time.perf_counter()
        args.func(args)
        _log(f"{args.command}: wall time {time.perf_counter() - t0:.2f} s")
        return 0
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _log(f"error: numeric failure: {exc}")
        return 2
    except (UsageError, RbnError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
