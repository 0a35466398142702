"""Command-line entry point: synth, train, eval, cv, gradcheck, inspect.

Every command echoes its fully resolved configuration as a flat key=value
block before computing, so a printed run can be reproduced exactly. Exit
codes: 0 success, 1 assertion/check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import tensor
from .data import (
    Dataset,
    FormatError,
    SynthConfig,
    read_checkpoint,
    read_features,
    read_records,
    synth_generate,
    write_checkpoint,
    write_features,
)
from .evaluate import (
    confusion_matrix,
    render_report,
    run_cv,
    predict_fusion,
    unweighted_accuracy,
    weighted_accuracy,
    write_report_files,
)
from .fusion import (
    FusionConfig,
    params_from_arrays,
    params_to_arrays,
    run_gradient_check,
)
from .train import TrainConfig, train

GRAD_TOLERANCE = 1e-4

MODALITY_CODES = {"both": 0, "audio": 1, "text": 2}
FUSION_CODES = {"ca": 0, "fc": 1}


def _bool_flag(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def echo_config(command: str, values: dict) -> None:
    print(f"command={command}")
    for key in sorted(values):
        print(f"{key}={values[key]}")
    print("", flush=True)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--heads", type=int, default=2, help="attention heads")
    p.add_argument("--layers", type=int, default=1, help="stacked cross-attention layers K")
    p.add_argument("--use-output-projection", type=_bool_flag, default=True, metavar="true|false")
    p.add_argument("--dropout", type=float, default=0.0, help="attention-weight dropout rate")
    p.add_argument("--fusion", choices=("ca", "fc"), default="ca")
    p.add_argument("--modality", choices=("both", "audio", "text"), default="both")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-3,
                   help="learning rate (default tuned for synthetic-scale runs)")
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--aux1", action="store_true", help="enable the recombination task")
    p.add_argument("--aux2", action="store_true", help="enable the same-class swap task")
    p.add_argument("--lambda-main", type=float, default=1.0)
    p.add_argument("--lambda-aux1", type=float, default=1.0)
    p.add_argument("--lambda-aux2", type=float, default=1.0)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mermix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic MEF1 dataset")
    p.add_argument("--out", required=True, help="output MEF1 path")
    p.add_argument("--mode", choices=("additive", "xor"), default="additive")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--tmin", type=int, default=3)
    p.add_argument("--tmax", type=int, default=6)
    p.add_argument("--sa", type=float, default=1.0, help="audio informativeness in [0,1]")
    p.add_argument("--st", type=float, default=1.0, help="text informativeness in [0,1]")
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--per-class", type=int, default=10, help="samples per class per session")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train on a MEF1 dataset and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a MEF1 dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--session", type=int, default=None, help="restrict to one session")

    p = sub.add_parser("cv", help="leave-one-session-out 5-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report path prefix (.txt/.jsonl)")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of all model gradients")
    p.add_argument("--use-output-projection", type=_bool_flag, default=True, metavar="true|false")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--break-grad", action="store_true",
                   help="debug: corrupt one backward rule; the check must then fail")

    p = sub.add_parser("inspect", help="dump MEF1 record headers and counts")
    p.add_argument("path")
    p.add_argument("--records", type=int, default=0, help="print up to N per-record header lines")

    return parser


def _validate_flag_conflicts(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.modality != "both":
        if args.aux1 or args.aux2:
            parser.error(f"--modality {args.modality} cannot be combined with --aux1/--aux2")
        if args.fusion == "ca":
            parser.error(f"--modality {args.modality} requires --fusion fc (no second stream to attend over)")


def _dataset_dims(dataset: Dataset) -> int:
    return dataset.samples[0].audio.shape[1]


def _model_config(args: argparse.Namespace, dataset: Dataset) -> FusionConfig:
    return FusionConfig(
        feature_dim=_dataset_dims(dataset),
        num_heads=args.heads,
        num_layers=args.layers,
        num_emotions=dataset.num_emotions,
        use_output_projection=args.use_output_projection,
        dropout_rate=args.dropout,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lambda_main=args.lambda_main,
        lambda_aux1=args.lambda_aux1,
        lambda_aux2=args.lambda_aux2,
        enable_aux1=args.aux1,
        enable_aux2=args.aux2,
        grad_clip_norm=args.grad_clip,
        seed=args.seed,
    )


def _echo_values(args: argparse.Namespace, skip=("command",)) -> dict:
    return {k: v for k, v in vars(args).items() if k not in skip}


def cmd_synth(args: argparse.Namespace) -> int:
    echo_config("synth", _echo_values(args))
    cfg = SynthConfig(
        num_emotions=args.classes,
        feature_dim=args.dim,
        t_min=args.tmin,
        t_max=args.tmax,
        audio_strength=args.sa,
        text_strength=args.st,
        noise=args.noise,
        per_class_per_session=args.per_class,
        mode=args.mode,
    )
    dataset = synth_generate(cfg, args.seed)
    write_features(dataset, args.out)
    manifest = {
        "config": {
            "mode": cfg.mode,
            "classes": cfg.num_emotions,
            "dim": cfg.feature_dim,
            "tmin": cfg.t_min,
            "tmax": cfg.t_max,
            "sa": cfg.audio_strength,
            "st": cfg.text_strength,
            "noise": cfg.noise,
            "per_class": cfg.per_class_per_session,
            "seed": args.seed,
        },
        "summary": dataset.summary(),
    }
    with open(args.out + ".json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {args.out} ({len(dataset.samples)} utterances)")
    for name, count in dataset.summary()["class_counts"].items():
        print(f"class {name}: {count}")
    return 0


def _checkpoint_vector(model_cfg: FusionConfig, modality: str, fusion: str) -> list[float]:
    return model_cfg.to_vector() + [float(MODALITY_CODES[modality]), float(FUSION_CODES[fusion])]


def cmd_train(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    _validate_flag_conflicts(parser, args)
    echo_config("train", _echo_values(args))
    dataset = read_features(args.data)
    model_cfg = _model_config(args, dataset)
    train_cfg = _train_config(args)
    if args.modality != "both":
        from .train import train_unimodal

        uni, history = train_unimodal(
            dataset.samples, args.modality, model_cfg.feature_dim, model_cfg.num_emotions, train_cfg
        )
        arrays = {name: t.data for name, t in uni.named()}
    else:
        params, history = train(
            dataset.samples, model_cfg, train_cfg, skip_attention=(args.fusion == "fc")
        )
        arrays = params_to_arrays(params)
    write_checkpoint(args.out, _checkpoint_vector(model_cfg, args.modality, args.fusion), arrays)
    for record in history:
        print(record.as_line())
    print(f"wrote checkpoint {args.out} ({len(arrays)} tensors)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    echo_config("eval", _echo_values(args))
    dataset = read_features(args.data)
    vector, arrays = read_checkpoint(args.checkpoint)
    model_cfg = FusionConfig.from_vector(vector[:6])
    modality = {v: k for k, v in MODALITY_CODES.items()}[int(round(vector[6]))] if len(vector) > 6 else "both"
    fusion = {v: k for k, v in FUSION_CODES.items()}[int(round(vector[7]))] if len(vector) > 7 else "ca"
    samples = dataset.samples
    if args.session is not None:
        samples = [s for s in samples if s.session == args.session]
        if not samples:
            raise ValueError(f"no samples in session {args.session}")
    if modality != "both":
        from .evaluate import predict_unimodal
        from .fusion import UnimodalHeadParams
        from .tensor import Tensor

        uni = UnimodalHeadParams(
            w=Tensor(arrays["head.w"], requires_grad=True),
            b=Tensor(arrays["head.b"], requires_grad=True),
        )
        preds = predict_unimodal(uni, modality, samples)
    else:
        params = params_from_arrays(model_cfg, arrays)
        preds = predict_fusion(params, model_cfg, samples, skip_attention=(fusion == "fc"))
    cm = confusion_matrix([s.label for s in samples], preds, model_cfg.num_emotions)
    wa = weighted_accuracy(cm)
    ua = unweighted_accuracy(cm)
    print(f"samples={len(samples)} wa={wa:.4f} ua={ua:.4f}")
    print("confusion (rows true, cols predicted):")
    for row in cm:
        print(" ".join(f"{int(v):>6d}" for v in row))
    return 0


def cmd_cv(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    _validate_flag_conflicts(parser, args)
    config_echo = _echo_values(args)
    echo_config("cv", config_echo)
    dataset = read_features(args.data)
    model_cfg = _model_config(args, dataset)
    train_cfg = _train_config(args)
    report = run_cv(dataset, model_cfg, train_cfg, fusion=args.fusion, modality=args.modality)
    txt_path, jsonl_path = write_report_files(
        report, args.out, dataset.class_names, {str(k): str(v) for k, v in sorted(config_echo.items())}
    )
    print(render_report(report, dataset.class_names))
    print(f"wrote {txt_path} and {jsonl_path}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    echo_config("gradcheck", _echo_values(args))
    cfg = FusionConfig(
        feature_dim=8, num_heads=2, num_layers=2, num_emotions=4,
        use_output_projection=args.use_output_projection,
    )
    tensor.BREAK_BACKWARD = bool(args.break_grad)
    try:
        errors = run_gradient_check(cfg, seed=args.seed)
    finally:
        tensor.BREAK_BACKWARD = False
    worst = max(errors.values())
    for name in sorted(errors, key=errors.get, reverse=True):
        print(f"{name}: max_rel_err={errors[name]:.3e}")
    print(f"worst={worst:.3e} tolerance={GRAD_TOLERANCE:.0e}")
    if worst >= GRAD_TOLERANCE:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    echo_config("inspect", _echo_values(args))
    records = read_records(args.path, allowed_modalities=(0, 1, 2))
    print(f"records={len(records)}")
    for rec in records[: args.records]:
        print(
            f"uid={rec.uid} session={rec.session} emotion={rec.emotion} "
            f"modality={rec.modality} T={rec.values.shape[0]} C={rec.values.shape[1]}"
        )
    by_emotion: dict[int, int] = {}
    by_session: dict[int, int] = {}
    by_modality: dict[int, int] = {}
    dims = set()
    for rec in records:
        by_emotion[rec.emotion] = by_emotion.get(rec.emotion, 0) + 1
        by_session[rec.session] = by_session.get(rec.session, 0) + 1
        by_modality[rec.modality] = by_modality.get(rec.modality, 0) + 1
        dims.add(rec.values.shape[1])
    print("emotions: " + " ".join(f"{k}:{by_emotion[k]}" for k in sorted(by_emotion)))
    print("sessions: " + " ".join(f"{k}:{by_session[k]}" for k in sorted(by_session)))
    print("modalities: " + " ".join(f"{k}:{by_modality[k]}" for k in sorted(by_modality)))
    print("dims: " + " ".join(str(d) for d in sorted(dims)))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "cv":
            return cmd_cv(args, parser)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        parser.error(f"unknown command {args.command!r}")
    except (FormatError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
