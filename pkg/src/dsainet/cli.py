"""Command-line front end: ``dsainet {train,eval,inspect,saliency,attn-export,gen-data,split}``."""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Set

from .config import DATASETS, RunConfig, ablate, apply_overrides, dump_config, preset_configs
from .data import (SplitManifest, check_manifest, make_splits, read_header, read_trials, synth_generate,
                   write_matrix, write_trials, zscore)
from .efficiency import MAC_CONVENTION, count_macs, count_parameters
from .exceptions import ConfigurationError, DSAINetError
from .interpret import export_attention, saliency
from .metrics import format_summary, summarize
from .model import DSAINet
from .training import evaluate, run_protocol, write_records

logger = logging.getLogger("dsainet")

DATA_KEYS = ("n_channels", "n_samples", "n_classes")


# ----------------------------------------------------------------------------
# config assembly
# ----------------------------------------------------------------------------
def _parse_sets(items: List[str]) -> Dict[str, Dict[str, str]]:
    out: Dict[str, Dict[str, str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise ConfigurationError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section.strip(), {})[name.strip()] = value
    return out


def _merge(a: Dict[str, Dict[str, str]], b: Dict[str, Dict[str, str]]) -> Dict[str, Dict[str, str]]:
    out = {s: dict(v) for s, v in a.items()}
    for s, v in b.items():
        out.setdefault(s, {}).update(v)
    return out


def _file_overrides(path: Optional[str]) -> Dict[str, Dict[str, str]]:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    return {s: dict(parser[s]) for s in parser.sections()}


def build_config(args) -> tuple[RunConfig, Set[str]]:
    """Effective run config plus the set of ``[arch]`` keys the user pinned explicitly."""
    overrides = _merge(_file_overrides(getattr(args, "config", None)), _parse_sets(getattr(args, "set", None) or []))
    flag_map = {("train", "max_epochs"): "epochs", ("train", "batch_size"): "batch_size",
                ("train", "learning_rate"): "lr", ("train", "dtype"): "dtype",
                ("data", "protocol"): "protocol", ("data", "k"): "k", ("data", "workers"): "workers"}
    for (section, key), attr in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = str(value)
    seeds = getattr(args, "seeds", None)
    if seeds is not None:
        overrides.setdefault("train", {})["seeds"] = seeds
    base = RunConfig()
    preset = getattr(args, "preset", None)
    if preset:
        base = RunConfig(*preset_configs(preset))
    cfg = apply_overrides(base, overrides)
    ablation = getattr(args, "ablation", None)
    if ablation:
        cfg = replace(cfg, model=ablate(cfg.model, ablation))
    return cfg, set(overrides.get("arch", {}))


def _fit_to_data(cfg: RunConfig, pinned: Set[str], header: dict) -> RunConfig:
    """Fill C, T, K from the trial file unless pinned; pinned values must agree."""
    found = {k: header[k] for k in DATA_KEYS}
    for k in DATA_KEYS:
        if k in pinned and getattr(cfg.model, k) != found[k]:
            raise ConfigurationError(
                f"config sets {k}={getattr(cfg.model, k)} but the data file has {k}={found[k]}")
    return replace(cfg, model=replace(cfg.model, **found))


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    data = synth_generate(args.subjects, args.trials, args.channels, args.samples, args.classes,
                          args.seed, args.sample_rate)
    write_trials(args.out, data)
    print(f"wrote {len(data)} trials ({data.n_channels}x{data.n_samples}, K={data.n_classes}) to {args.out}")
    return 0


def cmd_split(args) -> int:
    data = read_trials(args.data)
    manifest = make_splits(data.subjects, data.y, args.protocol, args.k, args.seed)
    check_manifest(manifest)
    manifest.save(args.out)
    print(f"wrote {len(manifest.runs)}-run {args.protocol} manifest to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg, pinned = build_config(args)
    cfg = _fit_to_data(cfg, pinned, read_header(args.data))
    data = read_trials(args.data)
    if args.manifest:
        manifest = SplitManifest.load(args.manifest)
    else:
        manifest = make_splits(data.subjects, data.y, cfg.data.protocol, cfg.data.k, args.split_seed,
                               cfg.train.val_fraction)
    check_manifest(manifest)
    out = Path(args.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")
    echo = dump_config(cfg)
    (out / "config.ini").write_text(echo)
    with open(out / "run.log", "w") as log:
        log.write(f"config hash {cfg.hash()}\n{echo}\n")
    records = run_protocol(cfg.model, data, manifest, cfg.train, workers=cfg.data.workers,
                           checkpoint_dir=out / "checkpoints")
    write_records(records, out / "runs.jsonl")
    table = format_summary(summarize(records), len(records))
    (out / "summary.txt").write_text(table + "\n")
    with open(out / "run.log", "a") as log:
        for r in records:
            log.write(f"run {r.run} seed {r.seed}: test_acc {r.test_acc:.4f} test_f1 {r.test_f1:.4f} "
                      f"best_epoch {r.best_epoch}\n")
        log.write(table + "\n")
    print(f"config hash {cfg.hash()}")
    print(table)
    return 0


def _load_model_for(path, data_header: dict) -> DSAINet:
    model = DSAINet.load(path)
    found = tuple(data_header[k] for k in DATA_KEYS)
    wanted = tuple(getattr(model.config, k) for k in DATA_KEYS)
    if found != wanted:
        raise ConfigurationError(f"checkpoint expects (C, T, K) = {wanted} but data has {found}")
    return model


def _select(data, args):
    if getattr(args, "manifest", None):
        manifest = SplitManifest.load(args.manifest)
        if not 0 <= args.run < len(manifest.runs):
            raise ConfigurationError(f"run {args.run} not in a {len(manifest.runs)}-run manifest")
        return data.subset(manifest.runs[args.run].test_idx)
    return data


def cmd_eval(args) -> int:
    model = _load_model_for(args.checkpoint, read_header(args.data))
    data = _select(read_trials(args.data), args)
    acc, f1 = evaluate(model, zscore(data.X).astype(model.dtype), data.y)
    print(f"trials {len(data)}  acc {acc:.4f}  weighted_f1 {f1:.4f}")
    return 0


def cmd_inspect(args) -> int:
    cfg, _ = build_config(args)
    model = cfg.model
    report = count_macs(model)
    print(f"config hash {cfg.hash()}")
    print(f"input (C, T, K) = ({model.n_channels}, {model.n_samples}, {model.n_classes}), tokens N = {model.n_tokens}")
    print(f"trainable parameters {count_parameters(model):,d}")
    print(f"MACs {report.total:,d} ({report.total / 1e6:.2f} M)")
    print(report.format())
    print(f"convention: {MAC_CONVENTION}")
    return 0


def cmd_saliency(args) -> int:
    model = _load_model_for(args.checkpoint, read_header(args.data))
    data = _select(read_trials(args.data), args)
    vec = saliency(model, data.X, data.y)
    write_matrix(args.out, vec)
    print(" ".join(f"{v:.4g}" for v in vec))
    return 0


def cmd_attn_export(args) -> int:
    model = _load_model_for(args.checkpoint, read_header(args.data))
    data = read_trials(args.data)
    if not 0 <= args.trial < len(data):
        raise ConfigurationError(f"trial {args.trial} not in a file of {len(data)} trials")
    files = export_attention(model, data.X[args.trial], args.out)
    print(f"wrote {len(files)} attention maps to {args.out}")
    return 0


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------
def _add_config_flags(p: argparse.ArgumentParser, training: bool) -> None:
    p.add_argument("--config", help="INI file with [arch] [ablation] [train] [data] sections")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    p.add_argument("--preset", choices=sorted(DATASETS), help="dataset preset for shape and training settings")
    p.add_argument("--ablation", help="named ablation switch set (full, no_pe, single_fine, ...)")
    if training:
        p.add_argument("--seeds", help="comma separated seeds")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--dtype", choices=("float32", "float64"))
        p.add_argument("--protocol", choices=("loso", "kfold"))
        p.add_argument("--k", type=int)
        p.add_argument("--workers", type=int, help="parallel training processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsainet", description="Dual-scale attentive EEG decoder")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every run of a split manifest over the configured seeds")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    _add_config_flags(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and weighted F1 of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--manifest")
    p.add_argument("--run", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="parameter and MAC counts of a configuration")
    _add_config_flags(p, training=False)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("saliency", help="per-channel input-gradient saliency")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--run", type=int, default=0)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("attn-export", help="attention maps of one trial")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attn_export)

    p = sub.add_parser("gen-data", help="write a synthetic trial file")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--sample-rate", dest="sample_rate", type=float, default=250.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("split", help="write a subject-independent split manifest")
    p.add_argument("data")
    p.add_argument("--protocol", choices=("loso", "kfold"), default="loso")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DSAINetError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"dsainet {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
