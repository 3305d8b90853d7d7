"""Command-line pipeline: generate -> train-metric -> eval-corr -> select-view.

Exit codes: 0 success, 1 I/O failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from . import dataio, evaluate, learned, reports
from .geometry import add_distance, cuboid_point_cloud
from .simulate import generate_dataset, default_config


class ValidationFailure(Exception):
    pass


def _load_config(path, seed_override=None):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"config: invalid JSON: {exc}") from None
    try:
        if seed_override is not None:
            doc["master_seed"] = seed_override
        return dataio.config_from_doc(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationFailure(f"config: {exc}") from None


def cmd_gen(args) -> int:
    config = _load_config(args.config, args.seed)
    records = generate_dataset(config, workers=args.workers)
    dataio.write_dataset(args.out, config, records)
    print(f"wrote {len(records)} records to {args.out}")
    for e in config.estimator_ids():
        n_det = sum(1 for r in records for o in r.observations
                    if o.estimator_id == e and o.detected)
        print(f"  {e}: detection rate {n_det / len(records):.3f}")
    return 0


def _read_dataset(path):
    try:
        return dataio.read_dataset(path)
    except OSError as exc:
        raise OSError(f"cannot read dataset: {exc}") from None
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None


def cmd_train_metric(args) -> int:
    config, records = _read_dataset(args.data)
    est_ids = config.estimator_ids()
    if args.estimator not in est_ids:
        raise ValidationFailure(f"unknown estimator '{args.estimator}'; "
                                f"dataset has {est_ids}")
    if args.object not in [o.object_id for o in config.objects]:
        raise ValidationFailure(f"unknown object '{args.object}'")
    k = est_ids.index(args.estimator)
    cloud = cuboid_point_cloud(config.object_map()[args.object].extents_m, args.object)

    import numpy as np
    cfg = learned.TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                              batch_size=args.batch_size, seed=args.seed)
    try:
        params, train_keys, held_keys = evaluate.train_learned_metric(
            records, config, args.object, args.estimator, split=args.split,
            train_config=cfg)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None

    # Loss diagnostics are reported on the scale-adjusted targets the
    # optimizer actually regresses.
    usable = {key: (poses, gt)
              for key, poses, gt in evaluate.usable_frames(records, est_ids, args.object)}

    def scaled_examples(keys):
        return [learned.TrainingExample(
                    usable[key][0],
                    add_distance(usable[key][0][k], usable[key][1], cloud) * cfg.target_scale)
                for key in keys]

    scaled = scaled_examples(train_keys)
    init = learned.init_params(np.random.default_rng(args.seed), k, args.object)
    initial_loss = learned.loss(init, scaled)
    final_loss = learned.loss(params, scaled)
    held = scaled_examples(held_keys)
    held_loss = learned.loss(params, held) / len(held) if held else float("nan")

    learned.save_params(args.out, params, extra={
        "seed": args.seed,
        "config": {"epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
                   "batch_size": cfg.batch_size, "target_scale": cfg.target_scale,
                   "split": args.split},
        "train_keys": [[s, f] for s, f in train_keys],
    })
    print(f"trained on {len(train_keys)} frames, held out {len(held)}")
    print(f"training loss: initial {initial_loss:.6g}, final {final_loss:.6g}")
    print(f"held-out mean squared error: {held_loss:.6g}")
    print(f"wrote {args.out}")
    return 0


def _load_learned_params(paths):
    mapping = {}
    meta = {}
    for path in paths or []:
        try:
            params, doc = learned.load_params(path)
        except OSError as exc:
            raise OSError(f"cannot read params: {exc}") from None
        except (KeyError, ValueError) as exc:
            raise ValidationFailure(f"{path}: {exc}") from None
        meta[path] = doc
        mapping[path] = params
    return mapping, meta


def _resolve_learned(config, param_files, meta):
    est_ids = config.estimator_ids()
    by_key = {}
    exclude = {}
    for path, params in param_files.items():
        if params.target_estimator >= len(est_ids):
            raise ValidationFailure(f"{path}: estimator index out of range")
        e = est_ids[params.target_estimator]
        by_key[(params.object_id, e)] = params
        keys = {(int(s), int(f)) for s, f in meta[path].get("train_keys", [])}
        exclude[(params.object_id, e, "d_learned")] = keys
    return by_key, exclude


def _parse_methods(raw):
    methods = [m.strip() for m in raw.split(",") if m.strip()]
    for m in methods:
        if m not in evaluate.METHODS:
            raise ValidationFailure(f"unknown method '{m}'; "
                                    f"choose from {', '.join(evaluate.METHODS)}")
    if not methods:
        raise ValidationFailure("no methods requested")
    return methods


def cmd_eval_corr(args) -> int:
    config, records = _read_dataset(args.data)
    methods = _parse_methods(args.methods)
    param_files, meta = _load_learned_params(args.learned_params)
    learned_map, exclude = _resolve_learned(config, param_files, meta)
    if "d_learned" in methods and not learned_map:
        raise ValidationFailure("method d_learned requires --learned-params")
    ctx = evaluate.build_context(config, learned_map,
                                 guapo_samples=args.guapo_samples,
                                 guapo_aggregate=args.guapo_aggregate,
                                 guapo_seed=args.guapo_seed)
    report = evaluate.correlation_analysis(records, methods, ctx, exclude_frames=exclude)
    paths = reports.write_correlation_report(args.out, report)
    print(reports.correlation_report_text(report))
    print("wrote " + ", ".join(paths))
    return 0


def cmd_select_view(args) -> int:
    config, records = _read_dataset(args.data)
    methods = _parse_methods(args.method)
    param_files, meta = _load_learned_params(args.learned_params)
    learned_map, _ = _resolve_learned(config, param_files, meta)
    if "d_learned" in methods and not learned_map:
        raise ValidationFailure("method d_learned requires --learned-params")
    ctx = evaluate.build_context(config, learned_map,
                                 guapo_samples=args.guapo_samples,
                                 guapo_aggregate=args.guapo_aggregate,
                                 guapo_seed=args.guapo_seed)
    report = evaluate.selection_analysis(records, methods, ctx, random_seed=args.random_seed)
    paths = reports.write_selection_report(args.out, report)
    print(reports.selection_report_text(report))
    print("wrote " + ", ".join(paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poseuq",
        description="Ensemble-disagreement uncertainty quantification for 6-DoF pose estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a simulated dataset")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--out", required=True, help="output dataset (JSON-Lines)")
    p.add_argument("--seed", type=int, default=None, help="override the config master seed")
    p.add_argument("--workers", type=int, default=1, help="parallel sequence workers")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-metric", help="train the learned disagreement metric")
    p.add_argument("--data", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--estimator", required=True, help="estimator id whose error is the target")
    p.add_argument("--split", type=float, default=1.0 / 3.0, help="training fraction")
    p.add_argument("--epochs", type=int, default=75)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output params JSON")
    p.set_defaults(func=cmd_train_metric)

    p = sub.add_parser("eval-corr", help="correlation analysis of UQ vs ADD error")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", required=True,
                   help="comma-separated subset of: " + ",".join(evaluate.METHODS))
    p.add_argument("--learned-params", action="append", default=[],
                   help="learned params file (repeatable)")
    p.add_argument("--guapo-samples", type=int, default=50)
    p.add_argument("--guapo-aggregate", choices=("rms_add", "translation_std"),
                   default="rms_add")
    p.add_argument("--guapo-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report path prefix (.json/.txt/.png)")
    p.set_defaults(func=cmd_eval_corr)

    p = sub.add_parser("select-view", help="uncertainty-guided camera view selection")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True,
                   help="comma-separated UQ methods (oracle and random are always added)")
    p.add_argument("--learned-params", action="append", default=[])
    p.add_argument("--guapo-samples", type=int, default=50)
    p.add_argument("--guapo-aggregate", choices=("rms_add", "translation_std"),
                   default="rms_add")
    p.add_argument("--guapo-seed", type=int, default=0)
    p.add_argument("--random-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report path prefix (.json/.txt/.png)")
    p.set_defaults(func=cmd_select_view)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
