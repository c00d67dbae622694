"""Command-line entry point: synth | extract | train | classify | evaluate | cdf."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, synth
from .bundle import ModelBundle, load_bundle, save_bundle
from .classify import MODES, STRICT, DecisionPolicy, classify_flow, format_decision
from .evaluate import ExperimentConfig, run_experiment, split_flows
from .features import CORE8, EXT14, FEATURE_NAMES, ExtractStats, FeatureVector, emit_cdf, \
    flow_feature_matrix, format_cdf, format_feature_row
from .flows import DEFAULT_IDLE_TIMEOUT_US, KNOWN, UNKNOWN, UNLABELED, Flow, assemble_flows
from .likelihood import ConfusionCounts, fit_from_counts, subflow_likelihoods
from .models import GbdtParams, LabeledDataset, ModelFormatError, train_gbdt
from .packet_io import PcapFormatError, RecordFormatError, load_packets

log = logging.getLogger("subflowclf")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on|off")
    return v == "on"


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(","))


def _float_list(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(","))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option defaults; flags take precedence")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("inputs", nargs="*", help="PCAP or pktrec files")
    p.add_argument("--labels", help="sidecar file of 'flow_key label' lines for the inputs")
    p.add_argument("--known", nargs="+", default=[], metavar="FILE", help="captures whose flows are all known")
    p.add_argument("--unknown", nargs="+", default=[], metavar="FILE", help="captures whose flows are all unknown")
    p.add_argument("--idle-timeout-s", type=float,
                   help="flow idle timeout in seconds (default 60, or the bundle's value for classify)")
    p.add_argument("--bidirectional", type=_on_off, metavar="{on,off}",
                   help="merge both directions into one flow (default on, or the bundle's value for classify)")


def _add_features(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=100, help="packets per subflow (evaluated sizes: 25, 100, 1000)")
    p.add_argument("--features", choices=(CORE8, EXT14), default=CORE8)


def _add_certainty(p: argparse.ArgumentParser) -> None:
    p.add_argument("--certainty", type=float, default=0.95)
    p.add_argument("--certainty-known", type=float)
    p.add_argument("--certainty-unknown", type=float)
    p.add_argument("--min-subflows", type=int, default=15)


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=1.0, help="Laplace smoothing of the likelihood table")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--calibration-fraction", type=float, default=0.25)
    p.add_argument("--calibrate-on-train", action="store_true",
                   help="fit the likelihood table on the GBDT training flows")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="subflowclf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a labelled synthetic trace")
    _add_common(p)
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="scidmz-like")
    p.add_argument("--scale", type=float, default=1.0, help="multiply preset flow counts")

    p = sub.add_parser("extract", help="dump per-subflow feature vectors")
    _add_common(p)
    _add_inputs(p)
    _add_features(p)

    p = sub.add_parser("train", help="train a GBDT and fit its likelihood table")
    _add_common(p)
    _add_inputs(p)
    _add_features(p)
    _add_training(p)

    p = sub.add_parser("classify", help="classify the flows of a capture against a bundle")
    _add_common(p)
    _add_inputs(p)
    _add_certainty(p)
    p.add_argument("--model", required=True, help="bundle written by 'train'")
    p.add_argument("--mode", choices=MODES, default=STRICT)

    p = sub.add_parser("evaluate", help="run the full experiment grid")
    _add_common(p)
    _add_inputs(p)
    _add_certainty(p)
    _add_training(p)
    p.add_argument("--preset", choices=sorted(synth.PRESETS), help="use a synthetic preset instead of inputs")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--features", choices=(CORE8, EXT14), default=CORE8)
    p.add_argument("--sizes", type=_int_list, default=(25, 100, 1000), help="comma-separated subflow sizes")
    p.add_argument("--fractions", type=_float_list, default=(0.25, 0.5, 0.75, 1.0))
    p.add_argument("--modes", type=lambda v: tuple(v.split(",")), default=MODES)
    p.add_argument("--split-fraction", type=float, default=0.8)

    p = sub.add_parser("cdf", help="per-class CDF of one feature")
    _add_common(p)
    _add_inputs(p)
    _add_features(p)
    p.add_argument("--feature", default="0", help="feature name or index within the schema")
    return parser


def _parse(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.exit(EXIT_USAGE, f"subflowclf: error: bad config file: {exc}\n")
        if not isinstance(cfg, dict):
            parser.exit(EXIT_USAGE, "subflowclf: error: config file must hold a JSON object\n")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(cfg) - known
        if unknown:
            parser.exit(EXIT_USAGE, f"subflowclf: error: unknown config keys {sorted(unknown)}\n")
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_files(args: argparse.Namespace) -> list[str]:
    files = list(getattr(args, "inputs", []) or [])
    for attr in ("labels", "model"):
        if getattr(args, attr, None):
            files.append(getattr(args, attr))
    files += getattr(args, "known", []) or []
    files += getattr(args, "unknown", []) or []
    return files


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _write_manifest(args: argparse.Namespace, out: Path, started: str, outputs: list[str]) -> None:
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    manifest = {
        "command": args.command,
        "config": config,
        "input_digests": {f: _digest(f) for f in _input_files(args)},
        "seed": args.seed,
        "tool_version": __version__,
        "outputs": outputs,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _resolve_flow_options(args: argparse.Namespace, bidirectional: bool = True,
                          idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US) -> None:
    if args.bidirectional is None:
        args.bidirectional = bidirectional
    if args.idle_timeout_s is None:
        args.idle_timeout_s = idle_timeout_us / 1_000_000


def _flows_from(paths: Sequence[str], args: argparse.Namespace, label: str) -> list[Flow]:
    flows = []
    timeout = int(round(args.idle_timeout_s * 1_000_000))
    for path in paths:
        records = load_packets(path)
        records.sort(key=lambda r: r.timestamp_us)
        for f in assemble_flows(records, args.bidirectional, timeout):
            f.label = label
            flows.append(f)
    return flows


def load_flows(args: argparse.Namespace, require_labels: bool) -> list[Flow]:
    if not (args.inputs or args.known or args.unknown):
        raise UsageError("no input captures given")
    flows = _flows_from(args.inputs, args, UNLABELED)
    if args.labels:
        labels = synth.read_labels(args.labels)
        for f in flows:
            f.label = labels.get(f.key, UNLABELED)
    flows += _flows_from(args.known, args, KNOWN)
    flows += _flows_from(args.unknown, args, UNKNOWN)
    if require_labels:
        unlabeled = sum(f.label == UNLABELED for f in flows)
        if unlabeled:
            log.warning("ignoring %d unlabelled flows", unlabeled)
        flows = [f for f in flows if f.label != UNLABELED]
        if not flows:
            raise ValueError("no labelled flows in the inputs")
    return flows


def _cmd_synth(args: argparse.Namespace, out: Path) -> list[str]:
    flows = synth.generate(synth.preset(args.preset, args.scale), args.seed)
    synth.write_trace(flows, out / "packets.txt", out / "labels.txt")
    log.info("wrote %d flows, %d packets", len(flows), sum(len(f) for f in flows))
    return ["packets.txt", "labels.txt"]


def _cmd_extract(args: argparse.Namespace, out: Path) -> list[str]:
    flows = load_flows(args, require_labels=False)
    stats = ExtractStats()
    with open(out / "features.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(["label", "flow_key", "index", *FEATURE_NAMES[args.features]]) + "\n")
        for f in flows:
            for i, row in enumerate(flow_feature_matrix(f, args.n, args.features, stats)):
                fh.write(format_feature_row(f.label, f.key, i, row) + "\n")
    if stats.degenerate:
        log.warning("%d zero-duration subflows (throughput set to 0)", stats.degenerate)
    return ["features.csv"]


def _params(args: argparse.Namespace) -> GbdtParams:
    return GbdtParams(trees=args.trees, max_depth=args.max_depth, learning_rate=args.learning_rate,
                      min_leaf=args.min_leaf, seed=args.seed)


def _dataset(flows: Sequence[Flow], n: int, schema: str) -> LabeledDataset:
    mats = [flow_feature_matrix(f, n, schema) for f in flows]
    X = np.concatenate(mats) if mats else np.empty((0, len(FEATURE_NAMES[schema])))
    y = np.concatenate([np.full(len(m), int(f.label == UNKNOWN)) for f, m in zip(flows, mats)]) \
        if mats else np.empty(0)
    return LabeledDataset(X, y, schema)


def _cmd_train(args: argparse.Namespace, out: Path) -> list[str]:
    flows = load_flows(args, require_labels=True)
    known = [f for f in flows if f.label == KNOWN]
    unknown = [f for f in flows if f.label == UNKNOWN]
    if not known or not unknown:
        raise ValueError("training needs flows of both classes")
    if args.calibrate_on_train:
        gbdt_flows = calib_flows = flows
    else:
        gbdt_flows, calib_flows = [], []
        for ci, group in enumerate((known, unknown)):
            g, c = split_flows(group, 1.0 - args.calibration_fraction, (args.seed, ci, 1))
            gbdt_flows += g
            calib_flows += c
    model = train_gbdt(_dataset(gbdt_flows, args.n, args.features), _params(args))
    cal = _dataset(calib_flows, args.n, args.features)
    pred = model.predict_unknown(cal.X)
    counts = ConfusionCounts(int(np.sum(~pred & (cal.y == 0))), int(np.sum(~pred & (cal.y == 1))),
                             int(np.sum(pred & (cal.y == 0))), int(np.sum(pred & (cal.y == 1))))
    table = fit_from_counts(counts, args.alpha)
    log.info("calibration counts %s -> %s", counts, table)
    bundle = ModelBundle(model, table, args.n, args.bidirectional,
                         int(round(args.idle_timeout_s * 1_000_000)))
    save_bundle(bundle, out / "bundle.json")
    return ["bundle.json"]


def _cmd_classify(args: argparse.Namespace, out: Path) -> list[str]:
    bundle = load_bundle(args.model)
    _resolve_flow_options(args, bundle.bidirectional, bundle.idle_timeout_us)
    flows = load_flows(args, require_labels=False)
    policy = DecisionPolicy.from_certainty(args.certainty, args.certainty_known, args.certainty_unknown,
                                           args.min_subflows, args.mode)
    skipped = 0
    lines = []
    for f in flows:
        X = flow_feature_matrix(f, bundle.subflow_size, bundle.schema)
        if len(X) == 0:
            skipped += 1
            continue
        pred = bundle.model.predict_unknown(X)
        seq = [subflow_likelihoods(bundle.table, UNKNOWN if p else KNOWN) for p in pred]
        lines.append(format_decision(f.key, classify_flow(seq, policy)) + "\n")
    if skipped:
        log.warning("%d flows shorter than one %d-packet subflow were not classified",
                    skipped, bundle.subflow_size)
    (out / "decisions.txt").write_text("".join(lines))
    return ["decisions.txt"]


def _cmd_evaluate(args: argparse.Namespace, out: Path) -> list[str]:
    if args.preset:
        if args.inputs or args.known or args.unknown:
            raise UsageError("--preset cannot be combined with input captures")
        flows = synth.generate(synth.preset(args.preset, args.scale), args.seed)
    else:
        flows = load_flows(args, require_labels=True)
    known = [f for f in flows if f.label == KNOWN]
    unknown = [f for f in flows if f.label == UNKNOWN]
    cfg = ExperimentConfig(subflow_sizes=args.sizes, fractions=args.fractions, certainty=args.certainty,
                           certainty_known=args.certainty_known, certainty_unknown=args.certainty_unknown,
                           modes=args.modes, split_fraction=args.split_fraction,
                           calibration_fraction=args.calibration_fraction,
                           calibrate_on_train=args.calibrate_on_train, seed=args.seed,
                           min_subflows=args.min_subflows, alpha=args.alpha, schema=args.features,
                           gbdt=_params(args))
    report = run_experiment(cfg, known, unknown)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_text())
    (out / "decisions.csv").write_text(report.decisions_csv())
    outputs = ["report.csv", "report.txt", "decisions.csv"]
    timeout = int(round(args.idle_timeout_s * 1_000_000))
    for n, art in report.artifacts.items():
        name = f"bundle_n{n}.json"
        save_bundle(ModelBundle(art.model, art.table, n, args.bidirectional, timeout), out / name)
        outputs.append(name)
    print(report.to_text(), end="")
    return outputs


def _cmd_cdf(args: argparse.Namespace, out: Path) -> list[str]:
    names = FEATURE_NAMES[args.features]
    idx = int(args.feature) if args.feature.isdigit() else None
    if idx is None:
        if args.feature not in names:
            raise UsageError(f"unknown feature {args.feature!r}; choose from {', '.join(names)}")
        idx = names.index(args.feature)
    if not 0 <= idx < len(names):
        raise UsageError(f"feature index {idx} out of range for {args.features}")
    flows = load_flows(args, require_labels=True)
    vectors = []
    for f in flows:
        for i, row in enumerate(flow_feature_matrix(f, args.n, args.features)):
            vectors.append(FeatureVector(row, args.features, (f.key, i), f.label))
    (out / "cdf.txt").write_text(format_cdf(emit_cdf(vectors, idx)))
    return ["cdf.txt"]


COMMANDS = {
    "synth": _cmd_synth,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "classify": _cmd_classify,
    "evaluate": _cmd_evaluate,
    "cdf": _cmd_cdf,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse(argv)
    if args.command != "classify" and hasattr(args, "bidirectional"):
        _resolve_flow_options(args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat()
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args, out)
        _write_manifest(args, out, started, outputs)
    except UsageError as exc:
        print(f"subflowclf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, PcapFormatError, RecordFormatError, ModelFormatError) as exc:
        print(f"subflowclf: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
