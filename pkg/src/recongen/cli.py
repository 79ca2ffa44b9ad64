"""Command-line entry point.

Artifacts under ``--output``::

    zoo/<model>_seed<p>.pt                         pretrained classifier
    search/<model>/seed<s>/arch.json               derived architecture
    search/<model>/seed<s>/search.json             search record
    search/<model>/seed<s>/telemetry.jsonl         per-step losses
    search/<model>/seed<s>/checkpoints/            resumable search state
    compress/<model>/<scheme>/<generator>/s<scale>/seed<s>/result.jsonl, model.pt
    ablate_scale/<model>_<scheme>/table.csv, accuracy_vs_scale.png
    summary/summary.csv, summary.png

Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import torch

from . import audit
from .baselines import HUMAN, RANDOM, SEARCHED, HumanGenerator, random_baseline
from .compression import compress, train_generator
from .config import GENERATOR_KINDS, ExperimentConfig, config_schema, load_config
from .errors import ConfigError, ReconGenError, UpstreamMissingError
from .reports import (
    ABLATION_COLUMNS,
    RECORD_NAME,
    ablation_rows,
    read_records,
    render_summary,
    summary_rows,
    to_csv,
)
from .search_engine import search, validation_loss
from .search_space import (
    build_macro,
    export_arch,
    instantiate_derived,
    read_arch_file,
    scale_channels,
)
from .search_space.derived import arch_to_dict
from .reconstruction import capture_original_stats
from .zoo import evaluate, freeze, get_spec, load_checkpoint, load_dataset, pretrain, save_checkpoint
from .zoo.data import DATA_DIR_ENV

log = logging.getLogger("recongen")


# --- paths -----------------------------------------------------------------

def out_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output)


def zoo_path(cfg: ExperimentConfig) -> Path:
    if cfg.pretrain.checkpoint:
        return Path(cfg.pretrain.checkpoint)
    return out_dir(cfg) / "zoo" / f"{cfg.model}_seed{cfg.pretrain.seed}.pt"


def search_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return out_dir(cfg) / "search" / cfg.model / f"seed{seed}"


def arch_path(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.arch_file) if cfg.arch_file else search_dir(cfg, seed) / "arch.json"


def scheme_tag(cfg: ExperimentConfig, scheme: str | None = None) -> str:
    if cfg.compress.mode == "distill":
        return f"distill-{cfg.compress.student}"
    return scheme or cfg.compress.scheme


def run_dir(cfg: ExperimentConfig, kind: str, scale: float, seed: int) -> Path:
    return out_dir(cfg) / "compress" / cfg.model / scheme_tag(cfg) / kind / f"s{scale:g}" / f"seed{seed}"


def _data_dir(cfg: ExperimentConfig):
    return os.environ.get(DATA_DIR_ENV) or cfg.data.data_dir


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _fresh(path: Path, overwrite: bool) -> bool:
    """True when ``path`` must be (re)computed; clears it on overwrite."""
    if not path.exists():
        return True
    if overwrite:
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
        return True
    return False


# --- stages ----------------------------------------------------------------

def run_pretrain(cfg: ExperimentConfig, overwrite: bool = False) -> Path:
    path = zoo_path(cfg)
    if not _fresh(path, overwrite):
        log.info("%s exists; skipping (use --overwrite to redo)", path)
        return path
    spec = get_spec(cfg.model)
    model, meta = pretrain(spec, _data_dir(cfg), cfg.pretrain.seed, source=cfg.data.source,
                           download=cfg.data.download, epochs=cfg.pretrain.epochs,
                           batch_size=cfg.pretrain.batch_size, lr=cfg.pretrain.lr,
                           image_size=cfg.data.image_size)
    save_checkpoint(model, meta, path)
    log.info("pretrained %s: accuracy %.4f -> %s", cfg.model, meta["accuracy"], path)
    return path


def load_zoo(cfg: ExperimentConfig):
    path = zoo_path(cfg)
    if not path.exists():
        raise UpstreamMissingError(f"classifier checkpoint {path} missing; run the 'pretrain' subcommand first")
    model, meta = load_checkpoint(path)
    if meta["spec"] != cfg.model:
        raise ConfigError(f"{path} holds {meta['spec']!r}, config asks for {cfg.model!r}")
    return freeze(model), meta


def load_test_set(cfg: ExperimentConfig, meta: dict):
    spec = get_spec(cfg.model)
    return load_dataset(spec.dataset, _data_dir(cfg), source=cfg.data.source, download=cfg.data.download,
                        image_size=meta["image_shape"][-1])[1]


def macro_for(cfg: ExperimentConfig, meta: dict):
    return build_macro(tuple(meta["image_shape"]), cfg.macro.base_channels, cfg.macro.latent_dim,
                       meta["num_classes"], embed_dim=cfg.macro.embed_dim)


def run_search(cfg: ExperimentConfig, seed: int, overwrite: bool = False) -> dict:
    """Stage 1: search, export the derived architecture, write the search record."""
    d = search_dir(cfg, seed)
    record_path = d / "search.json"
    if record_path.exists() and not overwrite:
        log.info("%s exists; skipping (use --overwrite to redo)", record_path)
        return json.loads(record_path.read_text())
    if overwrite and d.exists():
        shutil.rmtree(d)
    model, meta = load_zoo(cfg)
    macro = macro_for(cfg, meta)
    scfg = cfg.search.to_library(seed)

    ckdir = d / "checkpoints"
    resume = max(ckdir.glob("search_epoch*.pt"), default=None) if ckdir.exists() else None
    if resume is not None:
        log.info("resuming search from %s", resume)
    d.mkdir(parents=True, exist_ok=True)
    audit_before = audit.violations()
    start = time.perf_counter()
    derived, state = search(model, macro, scfg, telemetry_path=d / "telemetry.jsonl",
                            checkpoint_dir=ckdir, checkpoint_every=cfg.search.checkpoint_every,
                            resume_from=resume)
    original = capture_original_stats(model)
    val_kw = dict(beta=scfg.beta, batch_size=scfg.batch_size, num_batches=cfg.search.val_batches)
    record = {
        "kind": "search",
        "model": cfg.model,
        "seed": seed,
        "config": cfg.search.model_dump(),
        "macro": cfg.macro.model_dump(),
        "choices": {str(k): v for k, v in sorted(derived.choices.items())},
        "ops": {str(k): v for k, v in sorted(derived.op_names(macro).items())},
        "val_loss": validation_loss(model, state.supernet, state.arch, original, **val_kw),
        "control_val_loss": None,
    }
    if cfg.search.paired_control:
        control_cfg = cfg.search.model_copy(update={"arch_steps": 0}).to_library(seed)
        _, control = search(model, macro, control_cfg)
        record["control_val_loss"] = validation_loss(model, control.supernet, control.arch, original, **val_kw)
    record["data_reads"] = audit.violations() - audit_before
    export_arch(derived, d / "arch.json", macro)
    record["timing"] = {"wall_clock": time.perf_counter() - start,
                        "finished": datetime.now(timezone.utc).isoformat()}
    record_path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    log.info("search seed %d: val %.4f -> %s", seed, record["val_loss"], d / "arch.json")
    return record


def build_generator(cfg: ExperimentConfig, kind: str, scale: float, seed: int, meta: dict):
    """Fresh generator of the requested kind; returns ``(module, description)``."""
    macro = macro_for(cfg, meta)
    torch.manual_seed(seed)
    if kind == HUMAN:
        gen = HumanGenerator(tuple(meta["image_shape"]), cfg.macro.base_channels, cfg.macro.latent_dim,
                             meta["num_classes"], embed_dim=cfg.macro.embed_dim, channel_scale=scale)
        return gen, {"kind": HUMAN, "channels": gen.channels}
    if kind == SEARCHED:
        path = arch_path(cfg, seed)
        if not path.exists():
            raise UpstreamMissingError(f"architecture file {path} missing; run the 'search' subcommand first")
        file_macro, derived = read_arch_file(path)
        if (file_macro.image_shape, file_macro.num_classes, file_macro.latent_dim) != \
                (macro.image_shape, macro.num_classes, macro.latent_dim):
            raise ConfigError(f"{path} was searched for a different classifier or latent size")
        macro = file_macro
    elif kind == RANDOM:
        derived = random_baseline(macro, seed)
    else:
        raise ConfigError(f"unknown generator kind {kind!r}")
    derived = scale_channels(derived, derived.channel_scale * scale)
    torch.manual_seed(seed)
    return instantiate_derived(macro, derived), {"kind": kind, **arch_to_dict(macro, derived)}


def run_compress(cfg: ExperimentConfig, kind: str, scale: float, seed: int, overwrite: bool = False) -> dict:
    """Stage 2 for one (generator, scale, seed): train the generator, then compress."""
    d = run_dir(cfg, kind, scale, seed)
    result_path = d / RECORD_NAME
    if result_path.exists() and not overwrite:
        log.info("%s exists; skipping (use --overwrite to redo)", result_path)
        return json.loads(result_path.read_text().splitlines()[0])
    model, meta = load_zoo(cfg)
    generator, gen_desc = build_generator(cfg, kind, scale, seed, meta)
    test_set = load_test_set(cfg, meta)
    ccfg = cfg.compress.to_library(seed)

    audit_before = audit.violations()
    start = time.perf_counter()
    train_generator(model, generator, cfg.generator_training.to_library(seed),
                    latent_dim=cfg.macro.latent_dim, num_classes=meta["num_classes"])
    result = compress(model, generator, ccfg, test_set, latent_dim=cfg.macro.latent_dim,
                      num_classes=meta["num_classes"])
    record = {
        "kind": "compress",
        "model": cfg.model,
        "scheme": scheme_tag(cfg),
        "generator": kind,
        "scale": float(scale),
        "seed": seed,
        "config": {"compress": result.config, "generator_training": cfg.generator_training.model_dump(),
                   "macro": cfg.macro.model_dump(), "generator": gen_desc},
        "float_accuracy": evaluate(model, test_set),
        "ptq_accuracy": result.ptq_accuracy,
        "accuracy": result.accuracy,
        "final_accuracy": result.final_accuracy,
        "data_reads": audit.violations() - audit_before,
        "timing": {"wall_clock": time.perf_counter() - start,
                   "finished": datetime.now(timezone.utc).isoformat()},
    }
    if overwrite and d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True, exist_ok=True)
    torch.save(result.model, d / "model.pt")
    result_path.write_text(_dump(record) + "\n")
    log.info("%s s=%g seed %d: A0 %s final %.4f", kind, scale, seed, result.ptq_accuracy, result.final_accuracy)
    return record


def strip_timing(record: dict) -> dict:
    return {k: v for k, v in record.items() if k != "timing"}


# --- subcommands -----------------------------------------------------------

def cmd_pretrain(cfg, args) -> int:
    path = run_pretrain(cfg, args.overwrite)
    _, meta = load_checkpoint(path)
    print(_dump({"checkpoint": str(path), "spec": meta["spec"], "seed": meta["seed"],
                 "accuracy": meta["accuracy"], "epoch": meta["epoch"]}))
    return 0


def cmd_search(cfg, args) -> int:
    load_zoo(cfg)
    for seed in cfg.seeds:
        rec = run_search(cfg, seed, args.overwrite)
        print(_dump({"seed": seed, "arch": str(arch_path(cfg, seed)), "val_loss": rec["val_loss"],
                     "control_val_loss": rec["control_val_loss"]}))
    return 0


def _check_upstream(cfg, kinds) -> None:
    load_zoo(cfg)
    if SEARCHED in kinds:
        for seed in cfg.seeds:
            if not arch_path(cfg, seed).exists():
                raise UpstreamMissingError(
                    f"architecture file {arch_path(cfg, seed)} missing; run the 'search' subcommand first")


def cmd_compress(cfg, args) -> int:
    _check_upstream(cfg, [cfg.generator])
    for scale in cfg.scales:
        for seed in cfg.seeds:
            rec = run_compress(cfg, cfg.generator, scale, seed, args.overwrite)
            print(_dump({k: rec[k] for k in ("generator", "scheme", "scale", "seed", "ptq_accuracy", "final_accuracy")}))
    return 0


def cmd_eval(cfg, args) -> int:
    dest = out_dir(cfg) / "eval" / f"{cfg.model}_{scheme_tag(cfg)}_{cfg.generator}.jsonl"
    if not _fresh(dest, args.overwrite):
        log.info("%s exists; skipping (use --overwrite to redo)", dest)
        sys.stdout.write(dest.read_text())
        return 0
    model, meta = load_zoo(cfg)
    test_set = load_test_set(cfg, meta)
    rows = [{"target": "float", "accuracy": evaluate(model, test_set)}]
    for scale in cfg.scales:
        for seed in cfg.seeds:
            path = run_dir(cfg, cfg.generator, scale, seed) / "model.pt"
            if not path.exists():
                raise UpstreamMissingError(f"{path} missing; run the 'compress' subcommand first")
            compressed = torch.load(path, map_location="cpu", weights_only=False)
            rows.append({"target": f"{cfg.generator}/{scheme_tag(cfg)}/s{scale:g}/seed{seed}",
                         "accuracy": evaluate(compressed, test_set)})
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text("".join(_dump(r) + "\n" for r in rows))
    sys.stdout.write(dest.read_text())
    return 0


def cmd_ablate_scale(cfg, args) -> int:
    kinds = (SEARCHED, HUMAN)
    _check_upstream(cfg, kinds)
    records = [run_compress(cfg, kind, s, seed, args.overwrite)
               for kind in kinds for s in cfg.ablation_scales for seed in cfg.seeds]
    rows = ablation_rows(records, cfg.ablation_scales, cfg.model, scheme_tag(cfg))
    d = out_dir(cfg) / "ablate_scale" / f"{cfg.model}_{scheme_tag(cfg)}"
    d.mkdir(parents=True, exist_ok=True)
    table = to_csv(rows, ABLATION_COLUMNS)
    (d / "table.csv").write_text(table)
    from .plotting import plot_accuracy_vs_scale
    plot_accuracy_vs_scale(rows, d / "accuracy_vs_scale.png", title=f"{cfg.model} {scheme_tag(cfg)}")
    sys.stdout.write(table)
    return 0


def cmd_summarize(cfg, args) -> int:
    root = Path(args.runs) if args.runs else out_dir(cfg)
    records, warnings = read_records(root)
    if not records:
        raise UpstreamMissingError(f"no run records under {root}; run the 'compress' subcommand first")
    rows = summary_rows(records)
    report = render_summary(rows, warnings)
    d = out_dir(cfg) / "summary"
    d.mkdir(parents=True, exist_ok=True)
    (d / "summary.csv").write_text(report)
    from .plotting import plot_summary
    plot_summary(rows, d / "summary.png")
    sys.stdout.write(report)
    return 0


def cmd_schema(cfg, args) -> int:
    print(config_schema())
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "search": cmd_search,
    "compress": cmd_compress,
    "eval": cmd_eval,
    "ablate-scale": cmd_ablate_scale,
    "summarize": cmd_summarize,
    "schema": cmd_schema,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--seed", type=int, metavar="N", help="run only this seed")
    common.add_argument("--overwrite", action="store_true", help="recompute existing outputs")
    common.add_argument("--output", metavar="DIR", help="artifact root")
    common.add_argument("--generator", choices=GENERATOR_KINDS, help="generator for compress/eval")
    common.add_argument("--scheme", metavar="wXaY", help="quantization scheme, e.g. w4a4")
    common.add_argument("--scale", type=float, metavar="S", help="channel scale factor")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="recongen", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="train the zoo classifier")
    sub.add_parser("search", parents=[common], help="search a generator architecture")
    sub.add_parser("compress", parents=[common], help="train a generator and compress the classifier")
    sub.add_parser("eval", parents=[common], help="evaluate float and compressed models")
    sub.add_parser("ablate-scale", parents=[common], help="compress across channel scales")
    p = sub.add_parser("summarize", parents=[common], help="aggregate run records")
    p.add_argument("runs", nargs="?", help="directory to scan (default: --output)")
    sub.add_parser("schema", parents=[common], help="print the config JSON schema")
    return parser


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["seeds"] = [args.seed]
    if args.output:
        ov["output"] = args.output
    if args.generator:
        ov["generator"] = args.generator
    if args.scheme:
        ov["compress.scheme"] = args.scheme
    if args.scale is not None:
        ov["scales"] = ov["ablation_scales"] = [args.scale]
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except ReconGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
