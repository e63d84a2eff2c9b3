"""Command-line entry point.

Subcommands: train, predict, eval, check-loss, gen.  Hyperparameters live
in a JSON config file (flags nest too poorly for per-parameter blocks, and
the config doubles as the experiment record).  Exit codes are stable for
scripting: 0 ok, 2 validation, 3 runtime/numeric, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

from . import booster, dataset, evaluate, losses, model_io
from .errors import DistboostError, NumericError, ValidationError
from .tree import TreeParams

_TOP_KEYS = {"loss", "response_col", "exposure_col", "adjustment_col",
             "total_rounds", "seed", "holdout_fraction", "trace_path", "params"}
_LOSS_KEYS = {"name", "nuisance"}
_PARAM_KEYS = {"name", "eta", "rounds", "clip_m", "a", "gamma_reg", "lambda_reg",
               "max_depth", "min_leaf_samples", "interval", "offset", "domain",
               "base_value"}
_GEN_KEYS = {"cuts", "cells", "exposure_choices", "adjustment_choices"}


@dataclass
class RunConfig:
    loss: losses.Loss
    response_col: str
    exposure_col: str | None
    adjustment_col: str | None
    total_rounds: int
    seed: int
    holdout_fraction: float | None
    trace_path: str | None
    param_configs: list


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown key(s): {', '.join(sorted(unknown))}")


def _param_config(block, where):
    _reject_unknown(block, _PARAM_KEYS, where)
    tree = TreeParams(
        gamma_reg=float(block.get("gamma_reg", 0.0)),
        lambda_reg=float(block.get("lambda_reg", 1.0)),
        a=float(block.get("a", 0.5)),
        max_depth=int(block.get("max_depth", 3)),
        min_leaf_samples=int(block.get("min_leaf_samples", 1)),
    )
    domain = block.get("domain")
    if domain is not None:
        if not (isinstance(domain, list) and len(domain) == 2):
            raise ValidationError(f"{where}.domain: expected [lo, hi]")
        domain = losses.ParameterDomain(float(domain[0]), float(domain[1]))
    rounds = block.get("rounds")
    base_value = block.get("base_value")
    cfg = booster.ParamTrainConfig(
        eta=float(block.get("eta", 0.1)),
        rounds=None if rounds is None else int(rounds),
        clip_m=float(block.get("clip_m", 1e4)),
        tree=tree,
        interval=int(block.get("interval", 1)),
        offset=int(block.get("offset", 0)),
        domain=domain,
        base_value=None if base_value is None else float(base_value),
    )
    cfg.validate()
    return cfg


def parse_run_config(doc):
    """Validate a config document and build the loss and per-parameter configs."""
    _reject_unknown(doc, _TOP_KEYS, "config")
    if "loss" not in doc:
        raise ValidationError("config: missing 'loss' block")
    _reject_unknown(doc["loss"], _LOSS_KEYS, "config.loss")
    if "name" not in doc["loss"]:
        raise ValidationError("config.loss: missing 'name'")
    loss = losses.make_loss(doc["loss"]["name"], doc["loss"].get("nuisance"))

    if "total_rounds" not in doc:
        raise ValidationError("config: missing 'total_rounds'")
    total_rounds = int(doc["total_rounds"])
    if total_rounds < 0:
        raise ValidationError("config: total_rounds must be >= 0")

    blocks = doc.get("params")
    if blocks is None:
        param_configs = [_param_config({}, f"config.params[{j}]")
                         for j in range(loss.n_params)]
    else:
        if not isinstance(blocks, list) or len(blocks) != loss.n_params:
            raise ValidationError(
                f"config.params must list exactly {loss.n_params} block(s) "
                f"for loss '{loss.name}'")
        param_configs = []
        for j, block in enumerate(blocks):
            where = f"config.params[{j}]"
            name = block.get("name")
            if name is not None and name != loss.param_names[j]:
                raise ValidationError(
                    f"{where}: name '{name}' != parameter '{loss.param_names[j]}'")
            param_configs.append(_param_config(block, where))

    holdout = doc.get("holdout_fraction")
    return RunConfig(
        loss=loss,
        response_col=str(doc.get("response_col", "y")),
        exposure_col=doc.get("exposure_col"),
        adjustment_col=doc.get("adjustment_col"),
        total_rounds=total_rounds,
        seed=int(doc.get("seed", 0)),
        holdout_fraction=None if holdout is None else float(holdout),
        trace_path=doc.get("trace_path"),
        param_configs=param_configs,
    )


def _load_json(path, what):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} {path}: not valid JSON: {exc}") from None


def _write_trace(path, loss, trace):
    cols = ["round"] + [f"active_{p}" for p in loss.param_names] + ["train_nll"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in trace:
            cells = [str(rec.round)]
            cells += ["1" if f else "0" for f in rec.active]
            cells.append(repr(rec.train_nll))
            fh.write(",".join(cells) + "\n")


def cmd_train(args):
    config = parse_run_config(_load_json(args.config, "config"))
    ds = dataset.load_csv(args.data, config.response_col,
                          config.exposure_col, config.adjustment_col)
    holdout = None
    if config.holdout_fraction is not None:
        ds, holdout = dataset.split_holdout(ds, config.holdout_fraction, config.seed)

    result = booster.train(ds, config.loss, config.param_configs, config.total_rounds)
    model_io.save(result.model, args.out)

    trace_path = args.trace or config.trace_path
    if trace_path:
        _write_trace(trace_path, config.loss, result.trace)

    final_nll = result.trace[-1].train_nll if result.trace else result.initial_nll
    print(f"final_train_nll={final_nll!r}")
    if final_nll > result.initial_nll:
        print("warning: training loss ended above its starting value "
              f"({result.initial_nll!r}); the learning rate is likely too "
              "large for this loss (reduce eta or raise lambda_reg)",
              file=sys.stderr)
    if holdout is not None:
        report = evaluate.nll_score(result.model, config.loss, holdout,
                                    model_id=args.out)
        print(f"holdout_nll={report.total_nll!r}")
    return 0


def cmd_predict(args):
    model = model_io.load(args.model)
    header, table = dataset.read_table(args.data)
    missing = [c for c in model.feature_names if c not in header]
    if missing:
        raise ValidationError(
            f"{args.data}: missing feature column(s): {', '.join(missing)}; "
            f"model expects: {', '.join(model.feature_names)}")
    X = table[:, [header.index(c) for c in model.feature_names]]
    preds = model.predict_many(X)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(",".join(model.param_names) + "\n")
        for i in range(preds.shape[0]):
            fh.write(",".join(repr(float(v)) for v in preds[i]) + "\n")
    print(f"wrote {preds.shape[0]} prediction rows to {args.out}")
    return 0


def cmd_eval(args):
    model = model_io.load(args.model)
    loss = losses.make_loss(model.loss_name, model.nuisance)
    ds = dataset.load_csv(args.data, args.response_col,
                          args.exposure_col, args.adjustment_col)
    report = evaluate.nll_score(model, loss, ds, model_id=args.model)
    for line in report.lines():
        print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    return 0


def cmd_check_loss(args):
    try:
        nuisance = json.loads(args.nuisance)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"--nuisance: not valid JSON: {exc}") from None
    loss = losses.make_loss(args.loss, nuisance)
    try:
        y_samples = [float(v) for v in args.y_samples.split(",") if v.strip() != ""]
    except ValueError:
        raise ValidationError(f"--y-samples: not a comma-separated number list: "
                              f"{args.y_samples!r}") from None
    report = losses.check_admissibility(loss, y_samples, args.grid)
    print(report.describe())
    return 0 if report.passed else 3


def cmd_gen(args):
    spec = _load_json(args.params, "params file")
    _reject_unknown(spec, _GEN_KEYS, "params file")
    if "cuts" not in spec or "cells" not in spec:
        raise ValidationError("params file: 'cuts' and 'cells' are required")
    param_fn = dataset.PiecewiseParamMap(spec["cuts"], spec["cells"])
    ds = dataset.generate_synthetic(
        args.dist, args.n, args.seed, param_fn,
        exposure_choices=spec.get("exposure_choices"),
        adjustment_choices=spec.get("adjustment_choices"),
    )
    dataset.write_csv(ds, args.out)
    print(f"wrote {ds.n_rows} rows to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="distboost",
        description="Tree boosting for distribution parameters with "
                    "non-convex-capable losses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model from a CSV and a JSON config")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--trace", default=None,
                   help="write the per-round loss trace CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-parameter predictions as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a model by holdout NLL")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--response-col", default="y")
    p.add_argument("--exposure-col", default=None)
    p.add_argument("--adjustment-col", default=None)
    p.add_argument("--out", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-loss",
                       help="scan a loss for the per-coordinate shape conditions")
    p.add_argument("--loss", required=True,
                   help=f"one of: {', '.join(losses.loss_names())}")
    p.add_argument("--nuisance", default="{}", help="JSON map, e.g. '{\"alpha\": 5}'")
    p.add_argument("--y-samples", required=True, help="comma-separated responses")
    p.add_argument("--grid", type=int, default=512)
    p.set_defaults(func=cmd_check_loss)

    p = sub.add_parser("gen", help="sample a synthetic dataset to CSV")
    p.add_argument("--dist", required=True,
                   help=f"one of: {', '.join(dataset.SYNTHETIC_DISTRIBUTIONS)}")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--params", required=True,
                   help="JSON file with piecewise-constant parameter cells")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DistboostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
