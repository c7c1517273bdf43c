"""Command-line entry point: ``wtamem <command> [options]``.

Every command reads a ``key = value`` config (``--config``), applies flag
overrides, echoes the effective config to ``<outdir>/config.resolved`` and
writes its CSV reports into ``outdir``.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .analysis.corruption import KINDS, NoiseReport, noise_eval
from .analysis.fewshot import (extract_features, features_by_class, ncm_fewshot,
                               write_fewshot_csv)
from .analysis.opcount import count_multiplications, sweep, write_count_csv, write_layer_csv
from .analysis.winstats import win_statistics
from .config import ConfigError, RunConfig, load_config
from .data import LabeledDataset, load_cifar, make_synthetic, write_cifar
from .model import Model, build
from .sam import (BLANK, SparseMessage, capacity_sweep, memory_new, retrieve, save_memory,
                  store)
from .training import evaluate, inference_mode, train

EVAL_HEADER = ["mode", "images", "accuracy"]
SAM_DEMO_HEADER = ["pair", "input", "target", "retrieved", "probe_erased", "retrieved_erased",
                   "exact", "exact_erased"]
SAM_CAPACITY_HEADER = ["messages", "message_error", "symbol_error"]


# ---------------------------------------------------------------------------
# data and model plumbing
# ---------------------------------------------------------------------------
def _variant(cfg: RunConfig) -> str:
    if cfg["dataset"] not in ("synthetic", "c10", "c100"):
        raise ConfigError(f"unknown dataset {cfg['dataset']!r}")
    return cfg["dataset"]


def load_split(cfg: RunConfig, split: str) -> LabeledDataset:
    """Train or test split named by the config, truncated to ``limit``."""
    variant = _variant(cfg)
    if variant == "synthetic":
        n = cfg["synthetic_train"] if split == "train" else cfg["synthetic_test"]
        if cfg["limit"] is not None:
            n = min(n, cfg["limit"])
        seed = [cfg["synthetic_seed"], 0 if split == "train" else 1]
        return make_synthetic(n, n_classes=cfg["classes"], seed=seed,
                              prototype_seed=cfg["synthetic_seed"])
    path = cfg["train_data"] if split == "train" else cfg["test_data"]
    if not path:
        raise ConfigError(f"{split}_data must be set for dataset {variant}")
    return load_cifar(path, variant, cfg["limit"])


def make_model(cfg: RunConfig, n_classes: int, input_shape) -> Model:
    return build(cfg.model_config(input_shape=input_shape, n_classes=n_classes), seed=cfg["seed"])


def load_model(cfg: RunConfig, n_classes: int, input_shape) -> Model:
    path = cfg.checkpoint_path()
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return make_model(cfg, n_classes, input_shape).load(path)


def _eval_mode(cfg: RunConfig, model: Model) -> str:
    return cfg["eval_mode"] or inference_mode(model)


def _out(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg["outdir"], name)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _shape(ds: LabeledDataset):
    return ds.images.shape[1:]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_train(cfg: RunConfig) -> int:
    train_set = load_split(cfg, "train")
    test_set = load_split(cfg, "test")
    model = make_model(cfg, train_set.n_classes, _shape(train_set))
    report = train(model, train_set, cfg.train_config(), val_set=test_set)
    path = cfg.checkpoint_path()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    model.save(path)
    report.write_csv(_out(cfg, "train_report.csv"))
    acc = evaluate(model, test_set, mode=_eval_mode(cfg, model))
    _write_rows(_out(cfg, "eval.csv"), EVAL_HEADER,
                [[_eval_mode(cfg, model), len(test_set), f"{acc:.6f}"]])
    print(f"trained {len(train_set)} images, test accuracy {acc:.4f}; checkpoint {path}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    test_set = load_split(cfg, "test")
    model = load_model(cfg, test_set.n_classes, _shape(test_set))
    mode = _eval_mode(cfg, model)
    acc = evaluate(model, test_set, mode=mode)
    _write_rows(_out(cfg, "eval.csv"), EVAL_HEADER, [[mode, len(test_set), f"{acc:.6f}"]])
    print(f"{mode} accuracy {acc:.4f} on {len(test_set)} images")
    return 0


def _count_ells(cfg: RunConfig, model: Model) -> tuple:
    if cfg["count_ells"]:
        return cfg["count_ells"]
    smallest = min(s.channels for s in model.sites if s.grouped)
    return tuple(2 ** k for k in range(smallest.bit_length()) if smallest % 2 ** k == 0)


def cmd_count(cfg: RunConfig) -> int:
    if cfg["count_mode"] not in ("ell", "c"):
        raise ConfigError(f"count_mode must be 'ell' or 'c', got {cfg['count_mode']!r}")
    shape = (3, 32, 32)
    model = Model(cfg.model_config(input_shape=shape))
    ells = _count_ells(cfg, model)
    results = sweep(model.layers, ells, cfg["count_mode"])
    write_count_csv(_out(cfg, "count.csv"), results)
    write_layer_csv(_out(cfg, "count_layers.csv"), count_multiplications(model.layers, cfg.group()))
    for ell, rep in results:
        print(f"{cfg['count_mode']}={ell}: {rep.total}")
    return 0


def cmd_wins(cfg: RunConfig) -> int:
    test_set = load_split(cfg, "test")
    model = load_model(cfg, test_set.n_classes, _shape(test_set))
    classes = cfg["wins_classes"] or None
    stats = win_statistics(model, test_set.images, test_set.labels, classes)
    stats.write_plot_data(_out(cfg, "wins.csv"))
    stats.write_summary(_out(cfg, "wins_summary.csv"))
    print(f"win statistics for {len(stats.layers)} layers")
    return 0


def cmd_noise(cfg: RunConfig) -> int:
    kinds = cfg["noise_kinds"]
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise ConfigError(f"unknown noise kinds {bad}")
    test_set = load_split(cfg, "test")
    model = load_model(cfg, test_set.n_classes, _shape(test_set))
    mode = _eval_mode(cfg, model)
    reports = [noise_eval(model, test_set, kinds, cfg["noise_severities"], seed, mode)
               for seed in cfg["noise_seeds"]]
    merged = NoiseReport(float(np.mean([r.clean for r in reports])))
    for key in reports[0].detail:
        merged.detail[key] = float(np.mean([r.detail[key] for r in reports]))
    merged.write_csv(_out(cfg, "noise.csv"))
    merged.write_detail_csv(_out(cfg, "noise_detail.csv"))
    print(", ".join(f"{k} {v:.4f}" for k, v in merged.row().items()))
    return 0


def _fewshot_data(cfg: RunConfig) -> LabeledDataset:
    if cfg["fewshot_data"]:
        return load_cifar(cfg["fewshot_data"], cfg["fewshot_variant"])
    # novel synthetic classes: a prototype draw disjoint from the training one
    n = cfg["fewshot_pool"] * cfg["fewshot_per_class"]
    return make_synthetic(n, n_classes=cfg["fewshot_pool"], seed=[cfg["synthetic_seed"], 2],
                          prototype_seed=cfg["synthetic_seed"] + 1)


def cmd_fewshot(cfg: RunConfig) -> int:
    data = _fewshot_data(cfg)
    model = load_model(cfg, cfg["classes"], _shape(data))
    fs = cfg.fewshot_config()
    feats = extract_features(model, data.images, normalize=fs.normalize, mode=_eval_mode(cfg, model))
    acc, ci = ncm_fewshot(features_by_class(feats, data.labels), fs)
    write_fewshot_csv(_out(cfg, "fewshot.csv"), fs, acc, ci)
    print(f"{fs.n_way}-way {fs.k_shot}-shot accuracy {acc:.4f} +- {ci:.4f}")
    return 0


def _fmt_msg(msg: SparseMessage) -> str:
    return " ".join("_" if a == BLANK else str(a) for a in msg.active)


def cmd_sam_demo(cfg: RunConfig) -> int:
    c, ell, c_out, ell_out = cfg["sam_c"], cfg["sam_l"], cfg["sam_c_out"], cfg["sam_l_out"]
    mem = memory_new(c, ell, c_out, ell_out)
    rng = np.random.default_rng(cfg["seed"])
    pairs = [(SparseMessage(c, ell, rng.integers(0, ell, c)),
              SparseMessage(c_out, ell_out, rng.integers(0, ell_out, c_out)))
             for _ in range(cfg["sam_pairs"])]
    for x, y in pairs:
        mem = store(mem, x, y)
    rows = []
    for i, (x, y) in enumerate(pairs):
        got = retrieve(mem, x)
        erased = x.erase([0]) if c > 1 else x
        got_erased = retrieve(mem, erased)
        rows.append([i, _fmt_msg(x), _fmt_msg(y), _fmt_msg(got), _fmt_msg(erased),
                     _fmt_msg(got_erased), int(np.array_equal(got.active, y.active)),
                     int(np.array_equal(got_erased.active, y.active))])
    _write_rows(_out(cfg, "sam_demo.csv"), SAM_DEMO_HEADER, rows)
    save_memory(_out(cfg, "memory.samw"), mem)
    print(f"stored {len(pairs)} pairs; exact retrievals {sum(r[6] for r in rows)}/{len(rows)}")
    return 0


def cmd_sam_capacity(cfg: RunConfig) -> int:
    rows = capacity_sweep(cfg["sam_c"], cfg["sam_l"], cfg["sam_c_out"], cfg["sam_l_out"],
                          cfg["sam_counts"], trials=cfg["sam_trials"], seed=cfg["seed"])
    _write_rows(_out(cfg, "sam_capacity.csv"), SAM_CAPACITY_HEADER,
                [[r.messages, f"{r.message_error:.6f}", f"{r.symbol_error:.6f}"] for r in rows])
    for r in rows:
        print(f"M={r.messages}: message error {r.message_error:.4f}, symbol error {r.symbol_error:.4f}")
    return 0


def cmd_gen_data(cfg: RunConfig) -> int:
    variant = "c10" if cfg["dataset"] == "synthetic" else _variant(cfg)
    cfg_syn = RunConfig(dict(cfg.raw, dataset="synthetic"))
    for split in ("train", "test"):
        ds = load_split(cfg_syn, split)
        path = _out(cfg, f"{split}.bin")
        write_cifar(path, ds, variant)
        print(f"wrote {len(ds)} images to {path}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "count": cmd_count,
    "wins": cmd_wins,
    "noise": cmd_noise,
    "fewshot": cmd_fewshot,
    "gen-data": cmd_gen_data,
}
SAM_COMMANDS = {"demo": cmd_sam_demo, "capacity": cmd_sam_capacity}
HELP = {
    "train": "train a model, write model.dnwt, train_report.csv and eval.csv",
    "eval": "evaluate a checkpoint on the test split, write eval.csv",
    "count": "multiplication counts over group lengths, write count.csv",
    "wins": "per-map win proportions of a checkpoint, write wins.csv",
    "noise": "accuracy under gaussian, shot and impulse noise, write noise.csv",
    "fewshot": "nearest-class-mean few-shot accuracy on novel classes, write fewshot.csv",
    "gen-data": "write the synthetic splits in the CIFAR binary format",
    "demo": "store and retrieve a few message pairs, write sam_demo.csv",
    "capacity": "retrieval error against the number of stored pairs, write sam_capacity.csv",
}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------
def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int, help="use only the first N images of each split")
    p.add_argument("--outdir")
    p.add_argument("--mode", choices=("baseline", "anneal", "wta"))
    p.add_argument("--ell", type=int, help="fixed group length")
    p.add_argument("--c", type=int, help="fixed group count (overrides --ell)")
    p.add_argument("--t-init", type=float, dest="t_init")
    p.add_argument("--t-final", type=float, dest="t_final")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wtamem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _add_common(sub.add_parser(name, help=HELP[name]))
    sam = sub.add_parser("sam", help="sparse associative memory experiments")
    sam_sub = sam.add_subparsers(dest="sam_command", required=True)
    for name in SAM_COMMANDS:
        _add_common(sam_sub.add_parser(name, help=HELP[name]))
    return parser


def overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    for key in ("seed", "limit", "outdir", "mode", "ell", "c", "t_init", "t_final"):
        value = getattr(args, key)
        if value is not None:
            out[key] = value
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides(args))
        cfg.write_resolved(cfg["outdir"])
        if args.command == "sam":
            return SAM_COMMANDS[args.sam_command](cfg)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"wtamem: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"wtamem: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"wtamem: numeric failure: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"wtamem: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
