"""Command-line entry point: ``fcarac <command> ...``.

Exit codes: 0 ok, 2 missing checkpoint, 3 config/spec parse failure,
4 empty evaluation split, 5 unreadable dataset.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .ablation import Grid, ablate, parse_grid, write_rows
from .config import Config, ConfigError, load_config
from .densitymap import gaussian_cycle_density
from .diffcore import CheckpointError
from .metrics import DataError, evaluate, mean_baseline_report, write_report
from .plotting import plot_count_scatter, plot_density, plot_k_sweep
from .seqdata import (
    DatasetParseError,
    DatasetSplit,
    GenerationError,
    GeneratorConfig,
    content_hash,
    generate_dataset,
    ingest,
    load,
    load_split,
    resplit,
    save,
    save_split,
)
from .train import finetune, load_checkpoint, pretrain, save_checkpoint

log = logging.getLogger("fcarac")

EXIT_MISSING_CHECKPOINT = 2
EXIT_CONFIG = 3
EXIT_EMPTY_SPLIT = 4
EXIT_DATA = 5


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------


def _config(args) -> Config:
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else Config()
        if getattr(args, "seed", None) is not None:
            cfg = cfg.with_(seed=args.seed)
        return cfg
    except ConfigError as exc:
        raise CLIError(EXIT_CONFIG, f"config error: {exc}") from exc


def _dataset(path):
    try:
        seqs = load(path)
    except (OSError, DatasetParseError) as exc:
        raise CLIError(EXIT_DATA, f"cannot load dataset {path}: {exc}") from exc
    split_path = Path(path) / "split.json"
    split = load_split(split_path) if split_path.exists() else resplit(seqs, "regular", 0) if seqs else DatasetSplit([], [], [])
    return seqs, split


def _subset(seqs, ids):
    by_id = {s.id: s for s in seqs}
    return [by_id[i] for i in ids]


def _checkpoint(path, cfg=None):
    if not Path(path).is_file():
        raise CLIError(EXIT_MISSING_CHECKPOINT, f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path, cfg)
    except CheckpointError as exc:
        raise CLIError(EXIT_MISSING_CHECKPOINT, f"unreadable checkpoint {path}: {exc}") from exc


def _manifest(path, command, seed, cfg: Config | None, data=None, **extra):
    doc = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_hash": cfg.digest() if cfg else None,
        "dataset_hash": content_hash(data) if data else None,
    }
    doc.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------------


def cmd_generate(args):
    try:
        if args.spec_file:
            from .config import parse_kv

            gcfg = GeneratorConfig.from_mapping(parse_kv(Path(args.spec_file).read_text()))
        else:
            gcfg = GeneratorConfig()
    except (OSError, ConfigError, GenerationError) as exc:
        raise CLIError(EXIT_CONFIG, f"bad generator spec: {exc}") from exc
    n = args.n_train + args.n_val + args.n_test
    try:
        seqs = generate_dataset(n, gcfg, args.seed)
    except GenerationError as exc:
        raise CLIError(EXIT_CONFIG, f"generation failed: {exc}") from exc
    out = Path(args.out_dir)
    save(out, seqs)
    ids = [s.id for s in seqs]
    if args.split_mode == "disjoint_types":
        try:
            split = resplit(seqs, "disjoint_types", args.seed)
        except ValueError as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from exc
    else:
        a, b = args.n_train, args.n_train + args.n_val
        split = DatasetSplit(ids[:a], ids[a:b], ids[b:])
    save_split(out / "split.json", split)
    _manifest(out / "manifest.json", "generate", args.seed, None, None, n=n, split_mode=args.split_mode)
    print(f"wrote {n} sequences to {out}")


def cmd_ingest(args):
    try:
        seqs = ingest(args.src, args.out_dir)
    except (OSError, DatasetParseError) as exc:
        raise CLIError(EXIT_DATA, f"ingest failed: {exc}") from exc
    if seqs and not (Path(args.out_dir) / "split.json").exists():
        src_split = Path(args.src) / "split.json"
        split = load_split(src_split) if src_split.exists() else resplit(seqs, "regular", args.seed)
        save_split(Path(args.out_dir) / "split.json", split)
    print(f"ingested {len(seqs)} sequences into {args.out_dir}")


def cmd_pretrain(args):
    cfg = _config(args)
    if args.baseline:
        cfg = cfg.with_(baseline=args.baseline)
    seqs, split = _dataset(args.data)
    train = _subset(seqs, split.train)
    if not train:
        raise CLIError(EXIT_EMPTY_SPLIT, "training split is empty")
    model, history = pretrain(train, cfg)
    save_checkpoint(args.out_checkpoint, model)
    _manifest(
        str(args.out_checkpoint) + ".manifest.json", "pretrain", cfg.seed, cfg, args.data, final_loss=history[-1] if history else None
    )
    print(f"saved {args.out_checkpoint}")


def cmd_finetune(args):
    cfg = _config(args)
    model, _ = _checkpoint(args.checkpoint, cfg)
    if model.kind != "none":
        raise CLIError(EXIT_CONFIG, "retrieval fine-tuning applies to the kernel-correlation model only")
    seqs, split = _dataset(args.data)
    train = _subset(seqs, split.train)
    if not train:
        raise CLIError(EXIT_EMPTY_SPLIT, "training split is empty")
    K = cfg.K if args.k is None else args.k
    model, store = finetune(model, train, K, model.cfg, args.fusion or cfg.fusion)
    out = args.out_checkpoint or args.checkpoint
    save_checkpoint(out, model, store)
    _manifest(str(out) + ".manifest.json", "finetune", cfg.seed, model.cfg, args.data, K=K)
    print(f"saved {out} (K={K})")


def _eval_split(args, seqs, split):
    try:
        ids = split.ids(args.split)
    except KeyError as exc:
        raise CLIError(EXIT_CONFIG, f"unknown split {args.split!r}") from exc
    if not ids:
        raise CLIError(EXIT_EMPTY_SPLIT, f"split {args.split!r} is empty")
    return _subset(seqs, ids)


def cmd_eval(args):
    cfg = _config(args)
    model, store = _checkpoint(args.checkpoint, cfg)
    if args.baseline and args.baseline != model.kind:
        raise CLIError(EXIT_CONFIG, f"checkpoint holds a {model.kind!r} model, not {args.baseline!r}")
    seqs, split = _dataset(args.data)
    test = _eval_split(args, seqs, split)
    K = getattr(model, "K", 0)
    tta_steps = (args.tta_steps if args.tta_steps is not None else cfg.tta_steps) if args.tta else 0
    tta_lr = args.tta_lr if args.tta_lr is not None else cfg.tta_lr
    report = evaluate(model, test, store, K, tta_steps, tta_lr, cfg.round_obo)
    out = Path(args.out_dir)
    write_report(out, report, model.cfg.digest(), name=f"eval_{args.split}")
    train = _subset(seqs, split.train)
    if train:
        write_report(out, mean_baseline_report(train, test), "train-mean", name=f"mean_baseline_{args.split}")
    plot_count_scatter(out / f"eval_{args.split}_counts.png", [r.gt for r in report.records], [r.pred for r in report.records])
    with torch.no_grad():
        shown = test[: args.plots]
        if shown:
            o = model(shown, store=store, K=K)
            gt = gaussian_cycle_density(model.k, model.cfg.sigma_rule)
            for s, dmap, c in zip(shown, o.density_maps(), o.counts()):
                dmap.to_csv(out / "density" / f"{s.id}.csv")
                plot_density(out / "density" / f"{s.id}.png", dmap.values, gt, s.id, float(c), s.count)
    _manifest(out / "manifest.json", "eval", cfg.seed, model.cfg, args.data, split=args.split, tta_steps=tta_steps)
    print(f"MAE {report.mae:.4f}  OBO {report.obo:.4f}  (n={report.n})")


def cmd_predict(args):
    cfg = _config(args)
    model, store = _checkpoint(args.checkpoint, cfg)
    seqs, _ = _dataset(args.data)
    match = [s for s in seqs if s.id == args.sequence]
    if not match:
        raise CLIError(EXIT_DATA, f"sequence {args.sequence!r} not in {args.data}")
    seq = match[0]
    K = getattr(model, "K", 0)
    with torch.no_grad():
        o = model([seq], store=store, K=K)
    dmap = o.density_maps()[0]
    count = float(o.counts()[0])
    out = Path(args.out_dir)
    dmap.to_csv(out / f"{seq.id}_density.csv")
    plot_density(out / f"{seq.id}_density.png", dmap.values, gaussian_cycle_density(model.k, model.cfg.sigma_rule), seq.id, count, seq.count)
    result = {"id": seq.id, "count": count, "gt": seq.count, "frames": int(dmap.values.size)}
    if o.neighbors:
        result["neighbors"] = [store.ids[i] for i in o.neighbors[0]]
    (out / f"{seq.id}_prediction.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    _manifest(out / "manifest.json", "predict", cfg.seed, model.cfg, args.data, sequence=seq.id)
    print(f"{seq.id}: predicted {count:.3f} (gt {seq.count})")


def cmd_ablate(args):
    cfg = _config(args)
    try:
        grid = parse_grid(Path(args.grid).read_text()) if args.grid else Grid()
    except OSError as exc:
        raise CLIError(EXIT_CONFIG, f"cannot read grid: {exc}") from exc
    except ConfigError as exc:
        raise CLIError(EXIT_CONFIG, f"grid error: {exc}") from exc
    seqs, split = _dataset(args.data)
    train = _subset(seqs, split.train)
    test = _eval_split(args, seqs, split)
    if not train:
        raise CLIError(EXIT_EMPTY_SPLIT, "training split is empty")
    out = Path(args.out_dir)
    rows = ablate(grid, train, test, cfg, progress=lambda r: log.info("%s", r))
    write_rows(out / "ablation.csv", rows)
    # retrieval sweep at the default scales/fusion/alpha when present in the grid
    sweep = [r for r in rows if r["scales"] == "-".join(map(str, cfg.scales)) and r["fusion"] == cfg.fusion and r["alpha"] == cfg.alpha]
    if sweep:
        sweep.sort(key=lambda r: r["K"])
        write_rows(out / "k_sweep.csv", sweep)
        plot_k_sweep(out / "k_sweep.png", [r["K"] for r in sweep], [r["mae"] for r in sweep], [r["obo"] for r in sweep])
    _manifest(out / "manifest.json", "ablate", cfg.seed, cfg, args.data, cells=len(rows))
    print(f"wrote {len(rows)} rows to {out / 'ablation.csv'}")


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fcarac", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset and split manifest")
    g.add_argument("--spec-file", help="generator ranges as key = value lines")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int, default=300)
    g.add_argument("--n-val", type=int, default=30)
    g.add_argument("--n-test", type=int, default=60)
    g.add_argument("--split-mode", choices=["regular", "disjoint_types"], default="regular")
    g.set_defaults(func=cmd_generate)

    g = sub.add_parser("ingest", help="import pre-extracted per-frame features")
    g.add_argument("--src", required=True)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_ingest)

    g = sub.add_parser("pretrain", help="train without retrieval")
    g.add_argument("--data", required=True)
    g.add_argument("--config")
    g.add_argument("--out-checkpoint", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--baseline", choices=["none", "fcv", "vv"])
    g.set_defaults(func=cmd_pretrain)

    g = sub.add_parser("finetune", help="fine-tune with K retrieved training kernels")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--config")
    g.add_argument("--k", "--top-k", dest="k", type=int, help="number of retrieved kernels (K)")
    g.add_argument("--fusion", choices=["attention", "softmax", "average", "max"])
    g.add_argument("--out-checkpoint")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_finetune)

    g = sub.add_parser("eval", help="score a checkpoint on a split")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--split", default="test")
    g.add_argument("--config")
    g.add_argument("--baseline", choices=["none", "fcv", "vv"])
    g.add_argument("--tta", action="store_true", help="adapt the head on each test sequence's first cycle")
    g.add_argument("--tta-steps", type=int)
    g.add_argument("--tta-lr", type=float)
    g.add_argument("--plots", type=int, default=4, help="density figures to render")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("predict", help="density map and count for one sequence")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--sequence", required=True, help="sequence id")
    g.add_argument("--config")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_predict)

    g = sub.add_parser("ablate", help="sweep scales x K x fusion x alpha")
    g.add_argument("--grid", help="grid file; default is the full 144-cell grid")
    g.add_argument("--data", required=True)
    g.add_argument("--split", default="test")
    g.add_argument("--config")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        args.func(args)
    except CLIError as exc:
        print(f"fcarac: {exc}", file=sys.stderr)
        return exc.code
    except DataError as exc:
        print(f"fcarac: {exc}", file=sys.stderr)
        return EXIT_EMPTY_SPLIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
