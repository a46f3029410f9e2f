"""Command-line entry point: train, eval, infer, propose and serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from .checkpoint import load_model
from .config import RunConfig, deep_merge, parse_override, resolve_config, save_resolved_config, validate_config
from .datasets import StereoSample, build_dataset, to_tensor_image
from .errors import CheckpointError, PipelineError
from .metrics import MetricsAccumulator, Prediction, SampleReport, EvalReport, evaluate
from .pipeline import infer_pair
from .training import Trainer, evaluate_model, model_predictor, resolve_device
from .visualize import colorize_error, save_png

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, stream=sys.stderr)


def _emit(summary: Dict[str, Any]) -> None:
    print(json.dumps(summary, default=str))


def _apply_overrides(config: RunConfig, overrides: List[str]) -> RunConfig:
    """Apply ``--set`` overrides to a checkpoint's config; model changes are rejected."""

    tree = config.model_dump(mode="json")
    for expression in overrides:
        tree = deep_merge(tree, parse_override(expression))
    updated = validate_config(tree)
    if updated.model != config.model:
        raise CheckpointError("Overrides change the model section, which no longer matches the checkpoint")
    return updated


def _samples(config: RunConfig, split: str, limit: Optional[int]) -> List[StereoSample]:
    dataset = build_dataset(config, split)
    count = len(dataset) if limit is None else min(limit, len(dataset))
    return [dataset[index] for index in range(count)]


def cmd_train(args: argparse.Namespace) -> int:
    overrides = list(args.set)
    if args.device:
        overrides.append(f"train.device={args.device}")
    config = resolve_config(args.config, args.preset, overrides)
    run_dir = Path(args.run_dir)
    save_resolved_config(config, run_dir)

    trainer = Trainer(config, run_dir, build_dataset(config, "train"))
    if args.resume:
        trainer.resume(args.resume)
    final = trainer.fit()

    summary: Dict[str, Any] = {"status": "success", "checkpoint": str(final), "steps": trainer.step}
    eval_samples = _samples(config, "eval", None)
    if eval_samples:
        report = evaluate_model(trainer.model, eval_samples, trainer.device)
        (run_dir / "eval_report.json").write_text(report.model_dump_json(indent=2))
        summary["metrics"] = report.overall.model_dump()
    _emit(summary)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    device = resolve_device(args.device or "auto")
    model, config = load_model(args.checkpoint, device)
    config = _apply_overrides(config, args.set)
    run_dir = Path(args.run_dir)
    error_dir = run_dir / "error_maps"
    predictor = model_predictor(model, device)

    def predict_and_plot(sample: StereoSample) -> Prediction:
        prediction = predictor(sample)
        save_png(error_dir / f"{sample.name}.png", colorize_error(prediction.disparity - sample.disparity, sample.valid))
        return prediction

    report = evaluate(predict_and_plot, _samples(config, args.split, args.max_samples))
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "eval_report.json").write_text(report.model_dump_json(indent=2))
    (run_dir / "eval_report.txt").write_text(report.table() + "\n")
    logger.info("\n" + report.table())

    defined = report.overall.defined
    _emit(
        {
            "status": "success" if defined else "undefined",
            "report": str(run_dir / "eval_report.json"),
            "metrics": report.overall.model_dump(),
        }
    )
    if not defined and not args.allow_empty:
        logger.error("No valid ground-truth pixels; metrics are undefined")
        return 1
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    device = resolve_device(args.device or "auto")
    model, _ = load_model(args.checkpoint, device)
    output = Path(args.run_dir) / args.name
    result = infer_pair(model, args.left, args.right, output, args.format, device)
    for stage, seconds in result.timings.items():
        logger.info(f"{stage:>10}: {seconds * 1000:.1f} ms")
    _emit(
        {
            "status": "success",
            "disparity_path": str(result.disparity_path),
            "preview_path": str(result.preview_path),
            "timings": result.timings,
        }
    )
    return 0


def cmd_propose(args: argparse.Namespace) -> int:
    device = resolve_device(args.device or "auto")
    model, config = load_model(args.checkpoint, device)
    config = _apply_overrides(config, args.set)
    dump_dir = Path(args.run_dir) / "proposals"
    dump_dir.mkdir(parents=True, exist_ok=True)

    overall = MetricsAccumulator()
    reports = []
    for sample in _samples(config, args.split, args.max_samples):
        with torch.no_grad():
            proposed = model.propose(
                to_tensor_image(sample.left).unsqueeze(0).to(device),
                to_tensor_image(sample.right).unsqueeze(0).to(device),
            )
        candidates = proposed.candidates.disparity[0].cpu().numpy()
        seeds = proposed.seeds.disparity[0].cpu().numpy()
        np.savez(
            dump_dir / f"{sample.name}.npz",
            candidates=candidates,
            seeds=seeds,
            seed_is_modal=proposed.seeds.is_modal[0].cpu().numpy(),
        )
        single = MetricsAccumulator()
        for accumulator in (single, overall):
            accumulator.add(None, sample.disparity, sample.valid, candidates, seeds)
        reports.append(SampleReport(name=sample.name, metrics=single.report()))

    report = EvalReport(overall=overall.report(), samples=reports)
    report_path = Path(args.run_dir) / "proposal_report.json"
    report_path.write_text(report.model_dump_json(indent=2))
    _emit(
        {
            "status": "success",
            "dump_dir": str(dump_dir),
            "report": str(report_path),
            "metrics": report.overall.model_dump(),
        }
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(args.checkpoint, args.device, args.output_root), host=args.host, port=args.port)
    return 0


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Neural MRF stereo matching: training, evaluation and inference.")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser, needs_checkpoint: bool = True) -> None:
        if needs_checkpoint:
            sub.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint written by `train`")
        sub.add_argument("--run-dir", type=Path, required=True, help="Directory receiving every output file")
        sub.add_argument("--device", default=None, help="cpu, cuda, cuda:1 ... (default: auto)")

    train = commands.add_parser("train", help="Train a model")
    add_common(train, needs_checkpoint=False)
    train.add_argument("--config", type=Path, help="JSON config file")
    train.add_argument("--preset", help="Built-in preset: sceneflow, kitti or toy")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override, e.g. train.steps=100")
    train.add_argument("--resume", type=Path, help="Checkpoint to resume from")
    train.set_defaults(handler=cmd_train)

    for name, handler, description in (
        ("eval", cmd_eval, "Evaluate a checkpoint on a data split"),
        ("propose", cmd_propose, "Dump candidate labels and their recall"),
    ):
        sub = commands.add_parser(name, help=description)
        add_common(sub)
        sub.add_argument("--split", choices=["train", "eval"], default="eval")
        sub.add_argument("--max-samples", type=int, default=None)
        sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override data settings")
        sub.set_defaults(handler=handler)
        if name == "eval":
            sub.add_argument("--allow-empty", action="store_true", help="Exit 0 even when no pixel is valid")

    infer = commands.add_parser("infer", help="Predict disparity for one image pair")
    add_common(infer)
    infer.add_argument("--left", type=Path, required=True)
    infer.add_argument("--right", type=Path, required=True)
    infer.add_argument("--format", choices=["pfm", "kitti-png16"], default="pfm")
    infer.add_argument("--name", default="disparity", help="Output file stem inside the run directory")
    infer.set_defaults(handler=cmd_infer)

    serve = commands.add_parser("serve", help="Run the HTTP inference service")
    serve.add_argument("--checkpoint", type=Path, required=True)
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8010)
    serve.add_argument("--device", default=None)
    serve.add_argument("--output-root", type=Path, default=Path("runs/serve"), help="Directory receiving /infer outputs")
    serve.set_defaults(handler=cmd_serve)

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except PipelineError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
