"""Command-line entry point: ``eegssm <command> [options]``.

Commands map onto the pipeline stages::

    synth       write a synthetic EDF/CSV corpus and manifest
    preprocess  build 10 s window caches from a manifest
    pretrain    reconstruction pretraining (optionally with the no-spectral-loss arm)
    finetune    seizure-detection fine-tuning (optionally with the from-scratch arm)
    eval        score a checkpoint on a split
    saliency    channel saliency of one window
    filters     spectra of the first-layer filters

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError, DataError, EegSsmError
from .model import ModelConfig, load_checkpoint, reduced_config

log = logging.getLogger("eegssm")

CONFIG_HELP = """\
--config takes a JSON file {"model": {...}, "train": {...}}; see config_schema.json
shipped with the package (print it with `eegssm schema`).  Command-line flags
override file values.  EEG_SSM_THREADS caps preprocessing worker threads.
"""


def load_schema() -> dict:
    return json.loads(resources.files("eegssm").joinpath("config_schema.json").read_text())


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        body = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(body, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config file {path}: {exc.message}") from None
    return body


def _model_config(args, file_cfg: dict) -> ModelConfig:
    base = ModelConfig() if getattr(args, "preset", "reduced") == "default" else reduced_config()
    merged = asdict(base)
    merged.update(file_cfg.get("model", {}))
    try:
        cfg = ModelConfig.from_dict(merged)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model config: {exc}") from None
    return cfg


_TRAIN_FLAGS = {
    "seed": "seed", "steps": "steps", "batch_size": "batch_size", "lr": "lr",
    "lambda_spectral": "lambda_spectral", "mask_channels_prob": "mask_channels_prob",
    "eval_every": "eval_every", "patience": "patience",
}


def _train_config(args, file_cfg: dict, **forced):
    from .train import TrainConfig

    merged = asdict(TrainConfig())
    merged.update(file_cfg.get("train", {}))
    for attr, key in _TRAIN_FLAGS.items():
        val = getattr(args, attr, None)
        if val is not None:
            merged[key] = val
    for key, flag in forced.items():
        if flag:
            merged[key] = True
    try:
        return TrainConfig.from_dict(merged)
    except TypeError as exc:
        raise ConfigError(f"train config: {exc}") from None


def _write_effective(out: Path, command: str, **sections) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = {"command": command}
    body.update(sections)
    (out / "effective_config.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------------------
def cmd_synth(args) -> int:
    from .ingest.synth import synth_corpus

    out = Path(args.out)
    synth_corpus(out, args.patients, args.test_patients, args.seed, args.records_per_patient,
                 args.duration, args.fs, seizure_seconds=tuple(args.seizure_seconds))
    _write_effective(out, "synth", synth={
        "patients": args.patients, "test_patients": args.test_patients, "seed": args.seed,
        "records_per_patient": args.records_per_patient, "duration": args.duration, "fs": args.fs,
        "seizure_seconds": list(args.seizure_seconds),
    })
    print(f"wrote corpus and manifest to {out / 'manifest.json'}")
    return 0


def cmd_preprocess(args) -> int:
    from .ingest.manifest import load_manifest, preprocess_manifest

    out = Path(args.out)
    manifest = load_manifest(args.manifest)
    preprocess_manifest(manifest, out, args.threads)
    _write_effective(out, "preprocess", manifest=str(args.manifest))
    print(f"wrote window caches and {out / 'manifest.json'}")
    return 0


def cmd_pretrain(args) -> int:
    from .ingest.manifest import load_manifest
    from .train import pretrain

    file_cfg = _read_config(args.config)
    model_cfg = _model_config(args, file_cfg)
    cfg = _train_config(args, file_cfg, ablate_spectral=args.ablate_spectral)
    out = Path(args.out)
    _write_effective(out, "pretrain", manifest=str(args.manifest), model=asdict(model_cfg),
                     train=asdict(cfg))
    report = pretrain(load_manifest(args.manifest), model_cfg, cfg, out)
    print(json.dumps({"final": report.final, "arms": report.arms}, indent=2, sort_keys=True))
    return 0


def cmd_finetune(args) -> int:
    from .ingest.manifest import load_manifest
    from .train import finetune

    file_cfg = _read_config(args.config)
    cfg = _train_config(args, file_cfg, from_scratch=args.from_scratch,
                        compare_from_scratch=args.compare_from_scratch,
                        freeze_encoder=args.freeze_encoder)
    if args.checkpoint is None and not cfg.from_scratch:
        raise ConfigError("finetune needs --checkpoint (or --from-scratch)")
    model_cfg = _model_config(args, file_cfg) if args.checkpoint is None else None
    out = Path(args.out)
    eff_model = asdict(model_cfg) if model_cfg else asdict(load_checkpoint(args.checkpoint)[1])
    _write_effective(out, "finetune", manifest=str(args.manifest), checkpoint=args.checkpoint,
                     model=eff_model, train=asdict(cfg))
    report = finetune(load_manifest(args.manifest), args.checkpoint, model_cfg, cfg, out)
    print(json.dumps({"final": report.final, "arms": report.arms}, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .ingest.manifest import load_manifest
    from .train import evaluate

    if args.checkpoint is None:
        raise ConfigError("eval requires --checkpoint")
    report = evaluate(load_manifest(args.manifest), args.checkpoint, args.split)
    if args.out:
        out = Path(args.out)
        _write_effective(out, "eval", manifest=str(args.manifest), checkpoint=args.checkpoint,
                         split=args.split)
        (out / "eval_report.json").write_text(report.to_json())
    print(json.dumps({"final": report.final, "auroc": report.auroc}, indent=2, sort_keys=True))
    return 0


def cmd_saliency(args) -> int:
    from .ingest.manifest import load_manifest, load_split_windows
    from .interpret import channel_saliency, export_saliency

    if args.checkpoint is None:
        raise ConfigError("saliency requires --checkpoint")
    params, model_cfg, _ = load_checkpoint(args.checkpoint)
    windows = load_split_windows(load_manifest(args.manifest), args.split)
    if not 0 <= args.window < len(windows):
        raise DataError(f"--window {args.window} out of range for {len(windows)} windows")
    smap = channel_saliency(windows[args.window], params, model_cfg)
    out = Path(args.out)
    _write_effective(out, "saliency", manifest=str(args.manifest), checkpoint=args.checkpoint,
                     split=args.split, window=args.window)
    export_saliency(smap, out / "saliency.json", out / "saliency.csv" if args.csv else None)
    print(f"wrote {out / 'saliency.json'}")
    return 0


def cmd_filters(args) -> int:
    from .interpret import export_filter_spectra, filter_spectra

    if args.checkpoint is None:
        raise ConfigError("filters requires --checkpoint")
    params, _, _ = load_checkpoint(args.checkpoint)
    spectra = filter_spectra(params)
    out = Path(args.out)
    _write_effective(out, "filters", checkpoint=args.checkpoint)
    export_filter_spectra(spectra, out / "filter_spectra.json")
    for i, s in enumerate(spectra):
        print(f"filter {i}: peak {s.peak_hz:.2f} Hz")
    return 0


def cmd_schema(args) -> int:
    print(json.dumps(load_schema(), indent=2, sort_keys=True))
    return 0


# -- parser -----------------------------------------------------------------------------
def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="preprocessed manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (model/train sections)")
    p.add_argument("--preset", choices=["default", "reduced"], default="reduced",
                   help="base model size before --config overrides: 'reduced' is the CPU-sized model, "
                        "'default' the full-width one (default: %(default)s)")
    p.add_argument("--seed", type=int, help="PRNG seed for init and batching")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="windows per step")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--lambda-spectral", dest="lambda_spectral", type=float,
                   help="spectral loss weight")
    p.add_argument("--mask-channels-prob", dest="mask_channels_prob", type=float,
                   help="probability of zeroing each input channel during training")
    p.add_argument("--eval-every", dest="eval_every", type=int, help="steps between validations")
    p.add_argument("--patience", type=int, help="early-stop patience in validations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegssm", description="Selective state space EEG pipeline.",
        epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic EDF corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=4, help="training patients")
    p.add_argument("--test-patients", dest="test_patients", type=int, default=2)
    p.add_argument("--records-per-patient", dest="records_per_patient", type=int, default=1)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per recording")
    p.add_argument("--fs", type=float, default=256.0, help="native sampling rate")
    p.add_argument("--seizure-seconds", dest="seizure_seconds", type=float, nargs=2,
                   default=[20.0, 40.0], metavar=("MIN", "MAX"), help="seizure length range")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="build window caches from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, help="worker threads (default: EEG_SSM_THREADS or 1)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="self-supervised reconstruction pretraining")
    _train_args(p)
    p.add_argument("--ablate-spectral", dest="ablate_spectral", action="store_true",
                   help="also train with lambda_spectral=0 and report both")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="seizure-detection fine-tuning")
    _train_args(p)
    p.add_argument("--checkpoint", help="pretrained checkpoint")
    p.add_argument("--from-scratch", dest="from_scratch", action="store_true",
                   help="ignore the checkpoint and train from random init")
    p.add_argument("--compare-from-scratch", dest="compare_from_scratch", action="store_true",
                   help="run both pretrained and from-scratch arms")
    p.add_argument("--freeze-encoder", dest="freeze_encoder", action="store_true",
                   help="update only the classification head")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("saliency", help="channel saliency for one window")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--window", type=int, default=0, help="window index within the split")
    p.add_argument("--csv", action="store_true", help="also write the full saliency as CSV")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("filters", help="spectra of the first-layer filters")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filters)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EegSsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (ValueError, EOFError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
