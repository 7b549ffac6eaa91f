"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format/check error. Every run
prints its resolved configuration as JSON for provenance before doing work.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .boundary import gt_split_boundary
from .config import DEFAULT_GAMMAS, ExperimentConfig
from .edt import edt_exact
from .errors import InvalidConfig, SplitSegError
from .fields import LabelField3D, LogitField
from .losses import (
    BoundaryLossConfig,
    boundary_distance_loss,
    combined_loss,
    cross_entropy,
    gradcheck,
    soft_dice_loss,
)
from .phantom import make_dataset
from .pipeline import (
    FeatureExtractorConfig,
    LinearModel,
    evaluate_case,
    predict_labels,
    predict_split_within_mask,
    run_two_stage,
    train,
)
from .reports import emit_report, parse_report_csv
from .volume_io import load_dataset, save_dataset

GRADCHECK_THRESHOLDS = {
    "ce": 1e-5,
    "dice": 1e-5,
    "boundary": 1e-4,
    "combined": 1e-4,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); usage errors are exit 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="splitseg", description="split-region segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a phantom dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--train", type=int, default=30)
    p.add_argument("--val", type=int, default=10)
    p.add_argument("--test", type=int, default=20)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model stage")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="evaluate a trained model on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--stage1-model", default=None)

    p = sub.add_parser("sweep", help="run the two-stage experiment over gamma values")
    p.add_argument("--config", default=None)
    p.add_argument("--gammas", default=",".join(str(g) for g in DEFAULT_GAMMAS))
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of one loss gradient")
    p.add_argument("--loss", required=True, choices=sorted(GRADCHECK_THRESHOLDS))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="aggregate per-case report files")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--format", choices=["csv", "markdown"], default="markdown")
    p.add_argument("--out", default=None)
    return parser


def _print_provenance(kind: str, doc: dict) -> None:
    print(f"[splitseg] {kind}: {json.dumps(doc, sort_keys=True)}")


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_file(path)


def _model_to_json(model: LinearModel, gamma: float) -> dict:
    return {
        "stage": model.stage,
        "gamma": gamma,
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "features": dataclasses.asdict(model.features),
    }


def _model_from_json(doc: dict) -> tuple[LinearModel, float]:
    try:
        features = FeatureExtractorConfig(
            smoothing_sigmas=tuple(doc["features"]["smoothing_sigmas"]),
            include_intensity=doc["features"]["include_intensity"],
            include_coords=doc["features"]["include_coords"],
            include_mask=doc["features"]["include_mask"],
        )
        model = LinearModel(
            np.asarray(doc["weights"], dtype=np.float64),
            np.asarray(doc["bias"], dtype=np.float64),
            features,
            doc["stage"],
        )
        return model, float(doc.get("gamma", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"malformed model file: {exc}") from exc


def _cmd_gen_data(args) -> int:
    _print_provenance(
        "gen-data",
        {"seed": args.seed, "train": args.train, "val": args.val, "test": args.test},
    )
    train_set, val_set, test_set = make_dataset(args.seed, args.train, args.val, args.test)
    save_dataset({"train": train_set, "val": val_set, "test": test_set}, args.out)
    print(f"[splitseg] wrote {args.train + args.val + args.test} cases to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    _print_provenance("train", cfg.to_dict())
    splits = load_dataset(args.data)
    if "train" not in splits or not splits["train"]:
        raise InvalidConfig(f"{args.data}: no training split")
    model, curve = train(splits["train"], cfg.train_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(
        json.dumps(_model_to_json(model, cfg.gamma), indent=2) + "\n", encoding="utf-8"
    )
    curve_lines = ["iteration,loss"] + [f"{i},{v!r}" for i, v in enumerate(curve)]
    (out / "loss_curve.csv").write_text("\n".join(curve_lines) + "\n", encoding="utf-8")
    print(f"[splitseg] final training loss {curve[-1]:.6f}; model written to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    doc = json.loads(Path(args.model).read_text(encoding="utf-8"))
    model, gamma = _model_from_json(doc)
    _print_provenance("evaluate", {"model": args.model, "split": args.split, "gamma": gamma})
    splits = load_dataset(args.data)
    if args.split not in splits:
        raise InvalidConfig(f"{args.data}: no split named {args.split!r}")
    stage1 = None
    if args.stage1_model is not None:
        stage1, _ = _model_from_json(json.loads(Path(args.stage1_model).read_text("utf-8")))
    reports = []
    for case in splits[args.split]:
        if model.features.include_mask:
            mask = predict_labels(stage1, case) if stage1 is not None else case.whole_tumour
            predicted = predict_split_within_mask(model, case, mask)
        else:
            predicted = predict_labels(model, case)
        reports.append(evaluate_case(case, predicted, gamma=gamma, stage=model.stage))
    Path(args.out).write_text(emit_report(reports, "csv"), encoding="utf-8")
    print(f"[splitseg] wrote {len(reports)} case reports to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    try:
        gammas = [float(g) for g in args.gammas.split(",") if g.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad --gammas value: {args.gammas!r}") from exc
    if not gammas:
        raise UsageError("no gamma values given")
    _print_provenance("sweep", {**cfg.to_dict(), "gammas": gammas})
    if args.data is not None:
        splits = load_dataset(args.data)
        train_set, test_set = splits.get("train", []), splits.get("test", [])
    else:
        train_set, _, test_set = make_dataset(cfg.seed, cfg.n_train, cfg.n_val, cfg.n_test)
    if not train_set or not test_set:
        raise InvalidConfig("sweep needs non-empty train and test splits")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # the whole-tumour stage is gamma-independent; train it once per sweep
    stage1_model, _ = train(train_set, cfg.train_config(stage="stage1"))
    for gamma in gammas:
        reports = run_two_stage(
            train_set,
            test_set,
            cfg.train_config(gamma=gamma),
            cfg.test_mask_source,
            stage1_model=stage1_model,
        )
        path = out / f"report_gamma_{gamma:g}.csv"
        path.write_text(emit_report(reports, "csv"), encoding="utf-8")
        print(f"[splitseg] gamma={gamma:g}: report written to {path}")
    return 0


def _gradcheck_instance(seed: int):
    rng = np.random.default_rng(seed)
    dims = (8, 8, 8)
    logits = LogitField(rng.standard_normal((3,) + dims))
    labels = rng.integers(0, 3, dims)
    labels[0, 0, 0], labels[0, 0, 1] = 1, 2  # both split classes present
    target = LabelField3D(labels, num_classes=3)
    phi = edt_exact(gt_split_boundary(target))
    return logits, target, phi


def _cmd_gradcheck(args) -> int:
    _print_provenance("gradcheck", {"loss": args.loss, "seed": args.seed})
    logits, target, phi = _gradcheck_instance(args.seed)
    bcfg = BoundaryLossConfig(tau=4.0, epsilon=1e-8, gamma=0.5)
    fns = {
        "ce": lambda L: cross_entropy(L, target),
        "dice": lambda L: soft_dice_loss(L, target),
        "boundary": lambda L: boundary_distance_loss(L, phi, bcfg),
        "combined": lambda L: combined_loss(L, target, phi, bcfg),
    }
    err = gradcheck(fns[args.loss], logits, h=1e-4, sample_size=200, seed=args.seed)
    threshold = GRADCHECK_THRESHOLDS[args.loss]
    status = "PASS" if err < threshold else "FAIL"
    print(f"[splitseg] {args.loss}: max relative error {err:.3e} (threshold {threshold:g}) {status}")
    return 0 if err < threshold else 2


def _cmd_report(args) -> int:
    _print_provenance("report", {"inputs": args.inputs, "format": args.format})
    reports = []
    for path in args.inputs:
        reports.extend(parse_report_csv(Path(path).read_text(encoding="utf-8")))
    doc = emit_report(reports, args.format)
    if args.out is None:
        print(doc)
    else:
        Path(args.out).write_text(doc, encoding="utf-8")
        print(f"[splitseg] wrote aggregated report to {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
    "report": _cmd_report,
}


def cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SplitSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
