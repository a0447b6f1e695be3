"""Pre-training, retrieval-augmented fine-tuning and checkpoint I/O."""

import logging

import numpy as np
import torch

from .baselines import build_model
from .config import Config, config_from_mapping
from .diffcore import Adam, read_container, write_container
from .pipeline import FCARAC
from .tka import EmbeddingStore, build_store, refresh

log = logging.getLogger(__name__)

_FUSION_CODES = {"attention": 0, "softmax": 1, "average": 2, "max": 3}
_BASELINE_CODES = {"none": 0, "fcv": 1, "vv": 2}


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _batches(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Yield (step, index array); reshuffles at every epoch boundary."""
    order, pos, epoch = rng.permutation(n), 0, 0
    for step in range(steps):
        if pos + batch_size > n:
            order, pos, epoch = rng.permutation(n), 0, epoch + 1
        idx = order[pos : pos + batch_size]
        pos += len(idx)
        yield step, epoch, idx


def _train(model, params, train: list, steps: int, lr: float, seed: int, store=None, K: int = 0, on_epoch=None):
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    bs = min(model.cfg.batch_size, len(train))
    last_epoch = 0
    history = []
    for step, epoch, idx in _batches(len(train), bs, steps, rng):
        if epoch != last_epoch and on_epoch is not None:
            store = on_epoch(epoch)
            last_epoch = epoch
        batch = [train[i] for i in idx]
        out = model(batch, store=store, K=K)
        total, report = model.batch_loss(out, batch)
        opt.zero_grad()
        total.backward()
        opt.step()
        history.append(report.total)
        if step % 200 == 0:
            log.info("step %d loss %.4f (mse %.4f mae %.4f)", step, report.total, report.l_mse, report.l_mae)
    return history, store


def pretrain(train: list, cfg: Config, in_channels: int | None = None, model=None):
    if not train:
        raise ValueError("empty training set")
    seed_everything(cfg.seed)
    if model is None:
        model = build_model(cfg, in_channels or train[0].channels)
    history, _ = _train(model, list(model.parameters()), train, cfg.steps_pretrain, cfg.lr_pretrain, cfg.seed)
    return model, history


def finetune(model: FCARAC, train: list, K: int, cfg: Config | None = None, fusion: str | None = None):
    """Attach K-slot fusion and train with retrieved kernels; the store is re-encoded every epoch.

    Returns (model, store). With K = 0 this is plain continued training.
    """
    cfg = cfg or model.cfg
    seed_everything(cfg.seed + 1)
    model.enable_tka(K, fusion or cfg.fusion)
    store = build_store(model.encoder, train, model.k)
    frozen = cfg.freeze_encoder
    for p in model.encoder.parameters():
        p.requires_grad_(not frozen)
    params = [p for p in model.parameters() if p.requires_grad]

    def on_epoch(epoch):
        nonlocal store
        store = refresh(store, model.encoder, train, model.k)
        return store

    _, store = _train(model, params, train, cfg.steps_finetune, cfg.lr_finetune, cfg.seed + 1, store, K, on_epoch)
    for p in model.encoder.parameters():
        p.requires_grad_(True)
    store = refresh(store, model.encoder, train, model.k)
    return model, store


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(path, model, store: EmbeddingStore | None = None) -> None:
    cfg = model.cfg
    tensors = {f"param/{name}": p for name, p in model.state_dict().items()}
    tensors["meta/in_channels"] = torch.tensor(float(model.in_channels))
    tensors["meta/k"] = torch.tensor(float(cfg.k))
    tensors["meta/K"] = torch.tensor(float(getattr(model, "K", 0)))
    tensors["meta/width"] = torch.tensor(float(cfg.width))
    tensors["meta/hidden"] = torch.tensor(float(cfg.hidden))
    tensors["meta/scales"] = torch.tensor([float(s) for s in cfg.scales])
    tensors["meta/fusion"] = torch.tensor(float(_FUSION_CODES[cfg.fusion]))
    tensors["meta/baseline"] = torch.tensor(float(_BASELINE_CODES[cfg.baseline]))
    tensors["meta/normalize_mtgc"] = torch.tensor(float(cfg.normalize_mtgc))
    if store is not None:
        tensors.update(store.to_tensors())
    write_container(path, tensors)


def load_checkpoint(path, cfg: Config | None = None):
    """Rebuild (model, store-or-None); architecture keys come from the file."""
    t = read_container(path)
    inv = lambda codes, v: {c: n for n, c in codes.items()}[int(v.item())]
    arch = {
        "k": int(t["meta/k"].item()),
        "width": int(t["meta/width"].item()),
        "hidden": int(t["meta/hidden"].item()),
        "scales": tuple(int(s) for s in t["meta/scales"].tolist()),
        "fusion": inv(_FUSION_CODES, t["meta/fusion"]),
        "baseline": inv(_BASELINE_CODES, t["meta/baseline"]),
        "normalize_mtgc": bool(t["meta/normalize_mtgc"].item()),
    }
    cfg = (cfg or Config()).with_(**arch)
    model = build_model(cfg, int(t["meta/in_channels"].item()))
    K = int(t["meta/K"].item())
    if K > 0:
        model.enable_tka(K, cfg.fusion)
    state = {name[len("param/") :]: v for name, v in t.items() if name.startswith("param/")}
    model.load_state_dict(state)
    return model, EmbeddingStore.from_tensors(t)
