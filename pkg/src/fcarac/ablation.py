"""Grid sweeps over kernel scales, retrieved-kernel count, fusion and loss weight."""

import copy
import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

from .config import Config, ConfigError, parse_kv, parse_scales
from .metrics import evaluate
from .train import finetune, pretrain


@dataclass(frozen=True)
class Grid:
    scales: tuple = ((4,), (3, 4, 5), (2, 3, 4, 5, 6))
    K: tuple = (0, 1, 5, 10)
    fusion: tuple = ("average", "attention", "max")
    alpha: tuple = (0.0, 1.0, 10.0, 20.0)

    def cells(self):
        return list(itertools.product(self.scales, self.K, self.fusion, self.alpha))

    def __len__(self):
        return len(self.scales) * len(self.K) * len(self.fusion) * len(self.alpha)


def parse_grid(text: str) -> Grid:
    """``scales`` options are separated by ``|``; other keys by commas."""
    kv = parse_kv(text)
    grid = Grid()
    unknown = set(kv) - {"scales", "K", "fusion", "alpha"}
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    try:
        updates = {}
        if "scales" in kv:
            updates["scales"] = tuple(parse_scales(opt) for opt in kv["scales"].split("|"))
        if "K" in kv:
            updates["K"] = tuple(int(x) for x in kv["K"].split(","))
        if "fusion" in kv:
            updates["fusion"] = tuple(x.strip() for x in kv["fusion"].split(","))
        if "alpha" in kv:
            updates["alpha"] = tuple(float(x) for x in kv["alpha"].split(","))
    except ValueError as exc:
        raise ConfigError(f"bad grid value: {exc}") from exc
    grid = Grid(**{**grid.__dict__, **updates})
    for s, K, f, a in grid.cells():
        Config(scales=s, K=K, fusion=f, alpha=a).validate()
    return grid


COLUMNS = ["scales", "K", "fusion", "alpha", "mae", "obo", "n"]


def ablate(grid: Grid, train: list, test: list, cfg: Config, progress=None) -> list:
    """One evaluation row per grid cell; pre-training is shared across cells with equal (scales, alpha)."""
    rows = []
    pretrained = {}
    for scales, K, fusion, alpha in grid.cells():
        key = (scales, alpha)
        if key not in pretrained:
            pretrained[key], _ = pretrain(train, cfg.with_(scales=scales, alpha=alpha, K=0))
        model = copy.deepcopy(pretrained[key])
        model.cfg = model.cfg.with_(scales=scales, alpha=alpha)
        model, store = finetune(model, train, K, model.cfg, fusion)
        rep = evaluate(model, test, store=store, K=K)
        rows.append(
            {
                "scales": "-".join(str(s) for s in scales),
                "K": K,
                "fusion": fusion,
                "alpha": alpha,
                "mae": rep.mae,
                "obo": rep.obo,
                "n": rep.n,
            }
        )
        if progress is not None:
            progress(rows[-1])
    return rows


def write_rows(path, rows: list, columns=COLUMNS) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({c: repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns})
