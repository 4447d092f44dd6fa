"""Command-line stages of a scene-parsing experiment.

    synth        write synthetic train and test splits
    train-local  train the classifier ensemble
    train-metric learn the transfer metric
    build-index  describe the training split for global transfer
    parse        label the test split (local, global or integrated)
    eval         score predicted labels against the test split

Each stage reads its predecessors' files from the output directory and
writes one artifact there. Exit status is 0 on success, 1 for usage or
configuration errors and 2 for missing or malformed data.
"""
import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys

from .config import ExperimentConfig, load_config, parse_modes
from .convnet import inverse_frequency_weights
from .data import DatasetSplit, SceneRecord, compute_class_frequencies
from .ensemble import load_ensemble, local_belief_map, save_ensemble, train_ensemble
from .exceptions import ConfigError, EmptyDataError, FormatError
from .integration import belief_energy, evaluate, infer_labels, integrate
from .metric import (collect_cell_features, load_metric, loss_norms, save_metric, train_metric,
                     train_metric_network)
from .netpbm import load_split, save_split
from .sampling import all_strategies
from .synth import generate_synthetic_scenes
from .transfer import build_transfer_index, load_index, save_index, transfer_beliefs

logger = logging.getLogger(__name__)

ENSEMBLE_FILE = "ensemble.pens"
METRIC_FILE = "metric.pmtr"
INDEX_FILE = "index.pidx"
PREDICTIONS_FILE = "predictions/split.txt"
REPORT_FILE = "report.txt"
CONFUSION_FILE = "confusion.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def cmd_synth(config: ExperimentConfig, args):
    for role, path, seed in (("train", config.train_split, config.seed),
                             ("test", config.test_split, config.seed + 1)):
        split = generate_synthetic_scenes(config.synth.config(role), seed)
        save_split(split, path)


def cmd_train_local(config: ExperimentConfig, args):
    split = load_split(config.train_split)
    spec = config.network.spec(split.catalog.count)
    train = config.train
    if config.ensemble.asymmetric:
        train = replace(train, class_weights=inverse_frequency_weights(compute_class_frequencies(split)))
    model = train_ensemble(split, config.ensemble.strategies, spec, train, config.sampler)
    save_ensemble(model, config.path(ENSEMBLE_FILE))


def cmd_train_metric(config: ExperimentConfig, args):
    split = load_split(config.train_split)
    network = load_ensemble(config.path(ENSEMBLE_FILE)).members[0][1]
    if config.metric.fine_tune:
        metric, tuned = train_metric_network(split, network, config.metric)
        save_metric(metric, config.path(METRIC_FILE), tuned)
    else:
        features, labels = collect_cell_features(split, network)
        save_metric(train_metric(features, labels, config.metric), config.path(METRIC_FILE))


def cmd_build_index(config: ExperimentConfig, args):
    split = load_split(config.train_split)
    network = load_ensemble(config.path(ENSEMBLE_FILE)).members[0][1]
    feature_network = None
    if args.metric is not None:
        _, feature_network = load_metric(args.metric)
    index = build_transfer_index(split, network, feature_network, config.retrieval.pyramid, config.sampler.eta)
    save_index(index, args.index or config.path(INDEX_FILE))


def cmd_parse(config: ExperimentConfig, args):
    split = load_split(config.test_split)
    mode = config.parse.mode
    model = load_ensemble(config.path(ENSEMBLE_FILE)) if mode != "global" else None
    index = load_index(args.index or config.path(INDEX_FILE)) if mode != "local" else None
    metric = load_metric(args.metric)[0] if args.metric is not None else None
    if index is not None and index.catalog != split.catalog:
        raise FormatError("The transfer index and the test split use different classes")

    records = []
    for i, record in enumerate(split):
        local = local_belief_map(model, record.image) if model is not None else None
        global_ = (transfer_beliefs(index, record.image, config.retrieval, metric, config.seed, i)
                   if index is not None else None)
        if mode == "local":
            energy = belief_energy(local)
        elif mode == "global":
            energy = belief_energy(global_)
        else:
            energy = integrate(local, global_)
        records.append(SceneRecord(record.image, infer_labels(energy), record.scene_id, record.name))
        logger.info("labeled test image %d/%d (%s)", i + 1, len(split), mode)
    save_split(DatasetSplit(split.catalog, tuple(records), "test"), config.path(PREDICTIONS_FILE))


def cmd_eval(config: ExperimentConfig, args):
    truth = load_split(config.test_split)
    predicted = load_split(args.predictions or config.path(PREDICTIONS_FILE))
    if len(predicted) != len(truth):
        raise FormatError(f"{len(predicted)} predicted maps for {len(truth)} test images")
    report = evaluate([r.labels for r in predicted], [r.labels for r in truth], truth.catalog)
    report.write(config.path(REPORT_FILE), config.path(CONFUSION_FILE))
    sys.stdout.write(report.to_text())


commands = {
    "synth": cmd_synth,
    "train-local": cmd_train_local,
    "train-metric": cmd_train_metric,
    "build-index": cmd_build_index,
    "parse": cmd_parse,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory (must exist)")
    common.add_argument("--verbose", action="store_true", help="log per-batch details")

    parser = _Parser(prog="scenekit", description="Scene parsing with local and global beliefs.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sub.add_parser("synth", parents=[common], help="write synthetic train and test splits")

    p = sub.add_parser("train-local", parents=[common], help="train the classifier ensemble")
    p.add_argument("--sampler", nargs="+", choices=all_strategies, help="sampling strategies, one per member")
    p.add_argument("--eta", type=float, help="rarity threshold")

    p = sub.add_parser("train-metric", parents=[common], help="learn the transfer metric")
    p.add_argument("--fine-tune", action="store_true", default=None, help="also fine-tune the feature extractor")
    p.add_argument("--loss-norm", choices=loss_norms, help="hinge-sum normalization")

    p = sub.add_parser("build-index", parents=[common], help="index the training split")
    p.add_argument("--index", help="index file to write")
    p.add_argument("--metric", help="metric file whose fine-tuned network yields the cell features")
    p.add_argument("--eta", type=float, help="rarity threshold")

    p = sub.add_parser("parse", parents=[common], help="label the test split")
    p.add_argument("--mode", choices=parse_modes, help="labeling mode")
    p.add_argument("--index", help="index file to read")
    p.add_argument("--metric", help="metric file for pixel similarity")

    p = sub.add_parser("eval", parents=[common], help="score the predicted labels")
    p.add_argument("--predictions", help="predicted split manifest")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    if hasattr(args, "seed"):
        changes["seed"] = args.seed
    if hasattr(args, "out"):
        changes["out"] = args.out
    if getattr(args, "sampler", None):
        changes["ensemble"] = replace(config.ensemble, strategies=tuple(args.sampler))
    if getattr(args, "eta", None) is not None:
        changes["sampler"] = replace(config.sampler, eta=args.eta)
    metric = {}
    if getattr(args, "fine_tune", None):
        metric["fine_tune"] = True
    if getattr(args, "loss_norm", None):
        metric["loss_norm"] = args.loss_norm
    if metric:
        changes["metric"] = replace(config.metric, **metric)
    if getattr(args, "mode", None):
        changes["parse"] = replace(config.parse, mode=args.mode)
    return replace(config, **changes)


def main(argv = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return 1
    for name in ("index", "metric", "predictions"):
        if not hasattr(args, name):
            setattr(args, name, None)

    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        config = _resolve_config(args)
        if not Path(config.out).is_dir():
            raise FileNotFoundError(f"Output directory {config.out} does not exist")
        commands[args.command](config, args)
    except ConfigError as e:
        logger.error("%s", e)
        return 1
    except (FormatError, EmptyDataError, OSError) as e:
        logger.error("%s", e)
        return 2
    return 0
