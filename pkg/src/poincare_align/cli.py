"""
Command-line entry point for Poincare Align
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy
import torch

from poincare_align import __version__
from poincare_align.config import MANIFEST_FORMAT, Config
from poincare_align.data import (
    AlignmentDataset,
    SyntheticSpec,
    dataset_statistics,
    format_statistics,
    generate_synthetic,
    load_dataset,
    write_dataset,
)
from poincare_align.evaluation import (
    EMBEDDINGS_VERSION,
    METRICS_VERSION,
    evaluate_variants,
    export_embeddings,
    format_table,
    fused_embeddings,
    predict,
    write_metrics,
)
from poincare_align.exceptions import (
    AlignmentError,
    CheckpointError,
    ConfigError,
    DataFormatError,
    InvalidInputError,
)
from poincare_align.logger import Logger
from poincare_align.model import ChannelModel, anchor_index, channel_distance
from poincare_align.train import (
    CHECKPOINT_VERSION,
    GradCheckReport,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train_channel,
)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
STRUCTURE_CHECKPOINT = "structure.pt"
VISUAL_CHECKPOINT = "visual.pt"

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_BAD_INPUT = 2

# Named flags and the configuration key each one overrides.
FLAG_KEYS = {
    "seed": "rng_seed",
    "output_dir": "output_directory",
    "dataset_dir": "dataset.directory",
    "split_fraction": "dataset.split_fraction",
    "geometry": "model.geometry",
    "dim": "model.dim",
    "layers": "model.layers",
    "curvature": "model.curvature",
    "epochs": "training.epochs",
    "lr": "training.learning_rate",
    "negatives": "training.negatives_per_positive",
    "num_threads": "training.num_threads",
    "beta_list": "evaluation.beta_list",
    "k_list": "evaluation.k_list",
    "top_n": "evaluation.top_n",
    "beta": "evaluation.beta",
    "n_entities": "synthetic.n_entities",
    "avg_degree": "synthetic.avg_degree",
    "edge_noise": "synthetic.edge_noise",
    "visual_signal": "synthetic.visual_signal",
    "image_coverage": "synthetic.image_coverage",
    "n_coordinates": "gradcheck.n_coordinates",
    "tolerance": "gradcheck.tolerance",
}


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file or run manifest")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key, e.g. training.epochs=100")
    common.add_argument("--output-dir", help="directory for checkpoints, logs and reports")
    common.add_argument("--seed", type=int, help="random seed for data, initialization and sampling")
    common.add_argument("--dataset-dir", help="read dataset files instead of generating a synthetic pair")
    common.add_argument("--split-fraction", type=float, help="fraction of alignments used as training seeds")
    common.add_argument("--geometry", choices=["poincare", "euclidean"])
    common.add_argument("--dim", type=int, help="embedding dimension")
    common.add_argument("--layers", type=int, help="number of graph convolution layers")
    common.add_argument("--curvature", type=float, help="curvature of every hidden layer")
    common.add_argument("--no-visual", action="store_true", help="ignore visual features")
    common.add_argument("--no-log", action="store_true", help="disable the log file and console log")

    synthetic = argparse.ArgumentParser(add_help=False)
    synthetic.add_argument("--n-entities", type=int)
    synthetic.add_argument("--avg-degree", type=float)
    synthetic.add_argument("--edge-noise", type=float)
    synthetic.add_argument("--visual-signal", type=float)
    synthetic.add_argument("--image-coverage", type=float)

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--lr", type=float, help="Adam learning rate")
    training.add_argument("--negatives", type=int, help="negative samples per positive pair")
    training.add_argument("--num-threads", type=int, help="torch intra-op threads (1 = deterministic)")

    checkpoints = argparse.ArgumentParser(add_help=False)
    checkpoints.add_argument("--checkpoint-dir", help="directory holding structure.pt and visual.pt "
                                                      "(defaults to the output directory)")

    parser = argparse.ArgumentParser(
        prog="poincare-align",
        description="Multi-modal entity alignment with hyperbolic graph convolutions",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common, synthetic, training],
                   help="train the structure and visual channels")

    evaluate = sub.add_parser("evaluate", parents=[common, synthetic, checkpoints],
                              help="Hits@k table for structure, visual and fused embeddings")
    evaluate.add_argument("--beta-list", type=_float_list, help="comma separated fusion weights")
    evaluate.add_argument("--k-list", type=_int_list, help="comma separated cut-offs")

    predict_parser = sub.add_parser("predict", parents=[common, synthetic, checkpoints],
                                    help="top candidates for every test entity")
    predict_parser.add_argument("--beta", type=float, help="fusion weight of the structure channel")
    predict_parser.add_argument("--top-n", type=int, help="candidates written per query")

    export = sub.add_parser("export-embeddings", parents=[common, synthetic, checkpoints],
                            help="write fused embeddings of both graphs")
    export.add_argument("--beta", type=float, help="fusion weight of the structure channel")
    export.add_argument("--output", help="embedding file (defaults to <output-dir>/embeddings.tsv)")

    gradcheck = sub.add_parser("gradcheck", parents=[common, training],
                               help="compare analytic and finite-difference gradients")
    gradcheck.add_argument("--n-coordinates", type=int)
    gradcheck.add_argument("--tolerance", type=float)

    sub.add_parser("stats", parents=[common, synthetic], help="print dataset statistics")
    sub.add_parser("generate", parents=[common, synthetic],
                   help="write a synthetic dataset to the output directory")
    return parser


def load_run_config(args: argparse.Namespace) -> Config:
    """File values, then ``--set`` overrides, then named flags."""
    if args.config and not os.path.isfile(args.config):
        raise ConfigError("--config", f"file not found: {args.config}")
    config = Config(args.config)
    config.apply_overrides(args.set)
    for name, key in FLAG_KEYS.items():
        value = getattr(args, name, None)
        if value is not None:
            config.set(key, value)
    if getattr(args, "dataset_dir", None):
        config.set("synthetic.enabled", False)
    if args.no_visual:
        config.set("model.visual", False)
    if args.no_log:
        config.set("logging_enabled", False)
    config.validate()
    return config


def start_run(config: Config, console: bool = True) -> Logger:
    output_dir = config.get_output_directory()
    os.makedirs(output_dir, exist_ok=True)
    torch.set_num_threads(int(config.get("training.num_threads")))
    return Logger(
        os.path.join(output_dir, config.get_log_file()),
        enabled=config.is_logging_enabled(),
        console=console,
    )


def write_manifest(config: Config, command: str, files: Sequence[str] = ()) -> str:
    """Everything needed to rerun: resolved config, seed and format versions."""
    num_threads = int(config.get("training.num_threads"))
    manifest = {
        "format": MANIFEST_FORMAT,
        "format_version": MANIFEST_VERSION,
        "command": command,
        "package_version": __version__,
        "rng_seed": config.get_rng_seed(),
        "config": config.config,
        "checkpoint_format_version": CHECKPOINT_VERSION,
        "metrics_format_version": METRICS_VERSION,
        "embeddings_format_version": EMBEDDINGS_VERSION,
        "num_threads": num_threads,
        "deterministic": num_threads == 1,
        "library_versions": {
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
        },
        "files": sorted(files),
    }
    name = "manifest.json" if command == "train" else f"manifest_{command.replace('-', '_')}.json"
    path = os.path.join(config.get_output_directory(), name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_run_dataset(config: Config) -> AlignmentDataset:
    if config.is_synthetic():
        return generate_synthetic(config.synthetic_spec())
    return load_dataset(
        config.dataset_paths(), float(config.get("dataset.split_fraction")), config.get_rng_seed()
    )


def structure_anchors(config: Config, dataset: AlignmentDataset) -> Optional[np.ndarray]:
    """Training seed pairs whose inputs the structure channel ties, if enabled."""
    if not config.get("model.tie_seeds"):
        return None
    logger.debug(f"Tying the structure inputs of {len(dataset.seeds.train_pairs)} seed pairs")
    return dataset.seeds.train_pairs


def build_channels(config: Config, dataset: AlignmentDataset) -> Tuple[ChannelModel, Optional[ChannelModel]]:
    """Freshly initialized channels; the visual one only when features exist."""
    seed = config.get_rng_seed()
    geometry = config.get("model.geometry")
    activation = config.get("model.activation")
    curvatures = config.layer_curvatures()
    dim = int(config.get("model.dim"))
    structure = ChannelModel.structure(
        dataset.merged.graph.n,
        config.layer_dims(dim),
        curvatures,
        activation,
        geometry,
        torch.Generator().manual_seed(seed),
        structure_anchors(config, dataset),
    )
    visual = None
    if config.get("model.visual") and dataset.has_visual:
        features, mask = dataset.visual_inputs()
        visual = ChannelModel.visual(
            features,
            mask,
            config.layer_dims(features.shape[1]),
            curvatures,
            activation,
            geometry,
            torch.Generator().manual_seed(seed + 1),
        )
    return structure, visual


def write_losses(path: str, losses: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for epoch, loss in enumerate(losses):
            f.write(f"{epoch}\t{format(loss, '.17g')}\n")


def _check_checkpoint(channel: ChannelModel, name: str, config: Config, dataset: AlignmentDataset) -> None:
    if channel.n_nodes != dataset.merged.graph.n:
        raise CheckpointError(
            f"{name} holds {channel.n_nodes} entities but the dataset has {dataset.merged.graph.n}"
        )
    if channel.geometry != config.get("model.geometry"):
        raise CheckpointError(
            f"{name} was trained with geometry '{channel.geometry}', "
            f"configuration says '{config.get('model.geometry')}'"
        )
    expected = config.layer_dims(channel.dims[0])
    if channel.dims != expected:
        raise CheckpointError(
            f"{name} has layer dims {channel.dims} but the configuration gives {expected}"
        )
    if channel.kind == "structure":
        anchors = structure_anchors(config, dataset)
        n = dataset.merged.graph.n
        index = anchor_index(n, anchors) if anchors is not None else torch.arange(n)
        if not torch.equal(channel.input_index, index):
            raise CheckpointError(
                f"{name} ties a different set of seed pairs than the configured split"
            )


def load_channels(
    config: Config, dataset: AlignmentDataset, checkpoint_dir: Optional[str]
) -> Tuple[ChannelModel, Optional[ChannelModel]]:
    directory = checkpoint_dir or config.get_output_directory()
    structure, _ = load_checkpoint(os.path.join(directory, STRUCTURE_CHECKPOINT))
    _check_checkpoint(structure, STRUCTURE_CHECKPOINT, config, dataset)
    visual = None
    visual_path = os.path.join(directory, VISUAL_CHECKPOINT)
    if config.get("model.visual") and os.path.exists(visual_path):
        visual, _ = load_checkpoint(visual_path)
        _check_checkpoint(visual, VISUAL_CHECKPOINT, config, dataset)
    return structure, visual


def cmd_train(config: Config) -> int:
    dataset = load_run_dataset(config)
    cfg = config.training_config()
    structure, visual = build_channels(config, dataset)
    output_dir = config.get_output_directory()
    files = []
    for channel in (structure, visual):
        if channel is None:
            continue
        result = train_channel(channel, dataset.merged, dataset.seeds, cfg)
        checkpoint = f"{channel.kind}.pt"
        losses = f"losses_{channel.kind}.tsv"
        save_checkpoint(os.path.join(output_dir, checkpoint), channel, cfg.rng_seed)
        write_losses(os.path.join(output_dir, losses), result.losses)
        files += [checkpoint, losses]
        logger.info(f"Saved {channel.kind} channel, final loss {result.losses[-1]:.6f}")
    write_manifest(config, "train", files)
    return EXIT_OK


def cmd_evaluate(config: Config, checkpoint_dir: Optional[str]) -> int:
    dataset = load_run_dataset(config)
    structure, visual = load_channels(config, dataset, checkpoint_dir)
    beta_list = [float(b) for b in config.get("evaluation.beta_list")] if visual is not None else []
    if visual is None and config.get("evaluation.beta_list"):
        logger.warning("No visual checkpoint: reporting the structure channel only")
    table = evaluate_variants(
        dataset.merged,
        dataset.seeds,
        structure,
        visual,
        beta_list,
        config.get("evaluation.k_list"),
        int(config.get("evaluation.top_n")),
    )
    print(format_table(table))
    best = table.best_fused()
    if best is not None:
        print(f"best fused beta: {best.beta:g}")
    write_metrics(table, config.get_output_directory(), structure.geometry)
    write_manifest(config, "evaluate", ["metrics.txt", "metrics.json"])
    return EXIT_OK


def cmd_predict(config: Config, checkpoint_dir: Optional[str]) -> int:
    dataset = load_run_dataset(config)
    structure, visual = load_channels(config, dataset, checkpoint_dir)
    fusion = config.fusion_config(None if visual is not None else 1.0)
    beta = fusion.beta
    emb = fused_embeddings(structure, visual, dataset.merged, fusion)
    c = structure.output_curvature
    top_n = int(config.get("evaluation.top_n"))
    report = predict(
        emb,
        dataset.seeds.test_pairs,
        dataset.merged.kg2_global,
        config.get("evaluation.k_list"),
        lambda a, b: channel_distance(a, b, c, structure.geometry),
        top_n,
    )
    names = dataset.entity_names()
    path = os.path.join(config.get_output_directory(), "predictions.tsv")
    with open(path, "w", encoding="utf-8") as f:
        for q in report.queries:
            candidates = "\t".join(
                f"{names[e]}={format(float(d), '.17g')}"
                for e, d in zip(q.candidates[:top_n], q.distances[:top_n])
            )
            f.write(f"{names[q.query]}\t{names[q.truth]}\t{q.rank}\t{candidates}\n")
    hits = ", ".join(f"Hits@{k}={v:.4f}" for k, v in report.hits_at.items())
    print(f"{len(report.queries)} queries at beta={beta:g}: {hits}")
    print(f"Predictions written to {path}")
    write_manifest(config, "predict", ["predictions.tsv"])
    return EXIT_OK


def cmd_export_embeddings(config: Config, checkpoint_dir: Optional[str], output: Optional[str]) -> int:
    dataset = load_run_dataset(config)
    structure, visual = load_channels(config, dataset, checkpoint_dir)
    fusion = config.fusion_config(None if visual is not None else 1.0)
    beta = fusion.beta
    emb = fused_embeddings(structure, visual, dataset.merged, fusion)
    path = output or os.path.join(config.get_output_directory(), "embeddings.tsv")
    export_embeddings(emb, dataset.entity_names(), path)
    print(f"Exported {emb.shape[0]} embeddings (beta={beta:g}) to {path}")
    write_manifest(config, "export-embeddings", [os.path.basename(path)])
    return EXIT_OK


def run_gradient_check(config: Config) -> Dict[str, GradCheckReport]:
    """Check both channels on a small generated instance."""
    g = config.get("gradcheck")
    seed = config.get_rng_seed()
    dataset = generate_synthetic(
        SyntheticSpec(
            n_entities=int(g["n_entities"]),
            avg_degree=float(g["avg_degree"]),
            rng_seed=seed,
            visual_dim=int(g["dim"]),
            split_fraction=float(config.get("dataset.split_fraction")),
        )
    )
    layers = int(g["layers"])
    dims = [int(g["dim"])] * (layers + 1)
    c = float(config.get("model.curvature"))
    curvatures = [c] * layers + [float(config.get("model.fusion_curvature"))]
    geometry = config.get("model.geometry")
    activation = config.get("model.activation")
    channels = [
        ChannelModel.structure(
            dataset.merged.graph.n, dims, curvatures, activation, geometry,
            torch.Generator().manual_seed(seed), structure_anchors(config, dataset),
        )
    ]
    if config.get("model.visual"):
        features, mask = dataset.visual_inputs()
        channels.append(
            ChannelModel.visual(
                features, mask, dims, curvatures, activation, geometry,
                torch.Generator().manual_seed(seed + 1),
            )
        )
    cfg = config.training_config()
    return {
        channel.kind: gradient_check(
            channel,
            dataset.merged,
            dataset.seeds,
            cfg,
            n_coordinates=int(g["n_coordinates"]),
            step=float(g["step"]),
        )
        for channel in channels
    }


def cmd_gradcheck(config: Config) -> int:
    tolerance = float(config.get("gradcheck.tolerance"))
    reports = run_gradient_check(config)
    lines = []
    for kind, report in reports.items():
        status = "passed" if report.passed(tolerance) else "FAILED"
        lines.append(f"[{kind}] {status} (tolerance {tolerance:g})")
        lines += [f"[{kind}] {line}" for line in report.lines()]
    text = "\n".join(lines)
    print(text)
    with open(os.path.join(config.get_output_directory(), "gradcheck.txt"), "w", encoding="utf-8") as f:
        f.write(text + "\n")
    write_manifest(config, "gradcheck", ["gradcheck.txt"])
    if all(report.passed(tolerance) for report in reports.values()):
        return EXIT_OK
    logger.error("Gradient check failed")
    return EXIT_VALIDATION_FAILED


def cmd_stats(config: Config) -> int:
    dataset = load_run_dataset(config)
    print(format_statistics(dataset_statistics(dataset)))
    return EXIT_OK


def cmd_generate(config: Config) -> int:
    dataset = generate_synthetic(config.synthetic_spec())
    paths = write_dataset(dataset, config.get_output_directory())
    files = [p for p in (paths.triples1, paths.triples2, paths.alignments, paths.visual1, paths.visual2) if p]
    print(format_statistics(dataset_statistics(dataset)))
    print(f"Dataset written to {config.get_output_directory()}")
    write_manifest(config, "generate", [os.path.basename(p) for p in files])
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    run_logger: Optional[Logger] = None
    try:
        config = load_run_config(args)
        run_logger = start_run(config)
        logger.info(f"poincare-align {__version__}: {args.command} (seed {config.get_rng_seed()})")
        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.checkpoint_dir)
        if args.command == "predict":
            return cmd_predict(config, args.checkpoint_dir)
        if args.command == "export-embeddings":
            return cmd_export_embeddings(config, args.checkpoint_dir, args.output)
        if args.command == "gradcheck":
            return cmd_gradcheck(config)
        if args.command == "stats":
            return cmd_stats(config)
        return cmd_generate(config)
    except (ConfigError, DataFormatError, CheckpointError, InvalidInputError, OSError) as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except AlignmentError as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_VALIDATION_FAILED
    finally:
        if run_logger is not None:
            run_logger.close()


if __name__ == "__main__":
    sys.exit(main())
