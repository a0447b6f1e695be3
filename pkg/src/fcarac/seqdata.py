"""Annotated repetitive sequences: data model, synthetic generator, file I/O.

On disk a dataset is a directory holding ``annotations.jsonl`` (a header line
followed by one JSON record per sequence) and ``frames/<id>.f64`` blobs of
little-endian float64 values, row-major L x D.
"""

import hashlib
import json
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WAVEFORMS = ("pulse", "sine", "sawtooth")
FORMAT_NAME = "fcarac-dataset"
FORMAT_VERSION = 1
DEFAULT_CHANNELS = 8
DEFAULT_MAX_LENGTH = 4096


class GenerationError(ValueError):
    pass


class DatasetParseError(ValueError):
    pass


@dataclass
class RawSequence:
    frames: np.ndarray  # L x D_in
    first_cycle_end: int
    count: int
    id: str
    type: str = "unknown"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"{self.id}: frames must be 2-D, got shape {self.frames.shape}")
        L = self.frames.shape[0]
        if not 1 <= self.first_cycle_end <= L:
            raise ValueError(f"{self.id}: first_cycle_end={self.first_cycle_end} outside [1, {L}]")
        if self.count < 1:
            raise ValueError(f"{self.id}: count must be >= 1")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RawSequence):
            return NotImplemented
        return (
            self.id == other.id
            and self.type == other.type
            and self.count == other.count
            and self.first_cycle_end == other.first_cycle_end
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


@dataclass
class SynthSpec:
    base_period: int
    count: int
    speed_drift: float = 1.0
    noise_std: float = 0.0
    waveform: str = "sine"
    channels: int = DEFAULT_CHANNELS
    seed: int = 0
    max_length: int = DEFAULT_MAX_LENGTH

    def validate(self):
        if self.base_period < 4:
            raise GenerationError(f"base_period must be >= 4, got {self.base_period}")
        if self.count < 1:
            raise GenerationError(f"count must be >= 1, got {self.count}")
        if not 0.5 <= self.speed_drift <= 2.0:
            raise GenerationError(f"speed_drift must be in [0.5, 2.0], got {self.speed_drift}")
        if self.noise_std < 0:
            raise GenerationError("noise_std must be >= 0")
        if self.waveform not in WAVEFORMS:
            raise GenerationError(f"unknown waveform {self.waveform!r}")
        if self.channels < 1:
            raise GenerationError("channels must be >= 1")


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    disjoint: bool = False

    def __post_init__(self):
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise ValueError("splits overlap")

    def ids(self, name: str) -> list:
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, name)

    def to_json(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test, "disjoint": self.disjoint}

    @classmethod
    def from_json(cls, obj) -> "DatasetSplit":
        return cls(list(obj["train"]), list(obj["val"]), list(obj["test"]), bool(obj.get("disjoint", False)))


# -- generator ------------------------------------------------------------


def cycle_lengths(base_period: int, count: int, speed_drift: float) -> list:
    """Integer frame length of each cycle; cycle 0 is exactly ``base_period``."""
    return [max(1, int(math.floor(base_period * speed_drift**c + 0.5))) for c in range(count)]


def waveform_value(kind: str, phase: np.ndarray) -> np.ndarray:
    """One period of ``kind`` evaluated at phase in [0, 1)."""
    if kind == "sine":
        return np.sin(2 * np.pi * phase)
    if kind == "sawtooth":
        return 2.0 * phase - 1.0
    if kind == "pulse":
        return np.where(phase < 0.25, 1.0, 0.0)
    raise GenerationError(f"unknown waveform {kind!r}")


def generate(spec: SynthSpec, id: str | None = None) -> RawSequence:
    """Render ``spec.count`` cycles of the waveform with geometric period drift.

    Each channel carries the waveform at its own random phase offset and gain,
    so channels are correlated but not identical.
    """
    spec.validate()
    lengths = cycle_lengths(spec.base_period, spec.count, spec.speed_drift)
    L = sum(lengths)
    if L > spec.max_length:
        raise GenerationError(f"sequence length {L} exceeds max_length {spec.max_length}")
    rng = np.random.default_rng(spec.seed)
    offsets = rng.uniform(0.0, 1.0, size=spec.channels)
    gains = rng.uniform(0.5, 1.5, size=spec.channels)
    phase = np.concatenate([np.arange(n) / n for n in lengths])
    frames = gains * waveform_value(spec.waveform, (phase[:, None] + offsets) % 1.0)
    if spec.noise_std > 0:
        frames = frames + rng.normal(0.0, spec.noise_std, size=frames.shape)
    return RawSequence(
        frames=frames,
        first_cycle_end=lengths[0],
        count=spec.count,
        id=id if id is not None else f"synth-{spec.seed}",
        type=spec.waveform,
    )


@dataclass
class GeneratorConfig:
    """Ranges a synthetic dataset is drawn from (inclusive bounds)."""

    period_min: int = 8
    period_max: int = 20
    count_min: int = 2
    count_max: int = 15
    drift_min: float = 0.9
    drift_max: float = 1.15
    noise_std: float = 0.05
    waveforms: tuple = WAVEFORMS
    channels: int = DEFAULT_CHANNELS
    max_length: int = DEFAULT_MAX_LENGTH

    def validate(self):
        if not 4 <= self.period_min <= self.period_max:
            raise GenerationError("need 4 <= period_min <= period_max")
        if not 1 <= self.count_min <= self.count_max:
            raise GenerationError("need 1 <= count_min <= count_max")
        if not 0.5 <= self.drift_min <= self.drift_max <= 2.0:
            raise GenerationError("need 0.5 <= drift_min <= drift_max <= 2.0")
        if not self.waveforms or any(w not in WAVEFORMS for w in self.waveforms):
            raise GenerationError(f"waveforms must be a nonempty subset of {WAVEFORMS}")

    @classmethod
    def from_mapping(cls, kv: dict) -> "GeneratorConfig":
        cfg = cls()
        for key, raw in kv.items():
            if not hasattr(cfg, key):
                raise GenerationError(f"unknown generator key {key!r}")
            if key == "waveforms":
                value = tuple(w.strip() for w in str(raw).split(",") if w.strip())
            else:
                try:
                    value = type(getattr(cfg, key))(raw)
                except ValueError as exc:
                    raise GenerationError(f"bad value for {key}: {raw!r}") from exc
            setattr(cfg, key, value)
        cfg.validate()
        return cfg


def generate_dataset(n: int, cfg: GeneratorConfig, seed: int, prefix: str = "seq") -> list:
    cfg.validate()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        spec = SynthSpec(
            base_period=int(rng.integers(cfg.period_min, cfg.period_max + 1)),
            count=int(rng.integers(cfg.count_min, cfg.count_max + 1)),
            speed_drift=float(rng.uniform(cfg.drift_min, cfg.drift_max)),
            noise_std=cfg.noise_std,
            waveform=str(cfg.waveforms[int(rng.integers(len(cfg.waveforms)))]),
            channels=cfg.channels,
            seed=int(rng.integers(2**31)),
            max_length=cfg.max_length,
        )
        out.append(generate(spec, id=f"{prefix}-{i:05d}"))
    return out


# -- file I/O -------------------------------------------------------------


def _header(channels, n_records) -> dict:
    return {"format": FORMAT_NAME, "version": FORMAT_VERSION, "channels": channels, "records": n_records}


def save(path, dataset: list) -> None:
    """Write ``dataset`` under directory ``path`` (created if needed)."""
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    channels = dataset[0].channels if dataset else None
    lines = [json.dumps(_header(channels, len(dataset)), sort_keys=True)]
    for seq in dataset:
        rec = {
            "id": seq.id,
            "length": seq.length,
            "first_cycle_end": seq.first_cycle_end,
            "count": seq.count,
            "type": seq.type,
            "channels": seq.channels,
        }
        lines.append(json.dumps(rec, sort_keys=True))
        (root / "frames" / f"{seq.id}.f64").write_bytes(np.ascontiguousarray(seq.frames, dtype="<f8").tobytes())
    tmp = root / "annotations.jsonl.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, root / "annotations.jsonl")


def _parse_record(line: str, index: int, root: Path) -> RawSequence:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"record {index}: invalid JSON ({exc.msg})") from exc
    missing = [k for k in ("id", "length", "first_cycle_end", "count", "type") if k not in rec]
    if missing:
        raise DatasetParseError(f"record {index}: missing fields {missing}")
    blob = root / "frames" / f"{rec['id']}.f64"
    npy = root / "frames" / f"{rec['id']}.npy"
    length = int(rec["length"])
    try:
        if blob.exists():
            raw = np.frombuffer(blob.read_bytes(), dtype="<f8")
            channels = int(rec.get("channels", 0)) or (raw.size // length if length else 0)
            if length * channels != raw.size or channels == 0:
                raise DatasetParseError(
                    f"record {index} ({rec['id']}): frames blob has {raw.size} values, expected {length}x{channels}"
                )
            frames = raw.reshape(length, channels)
        elif npy.exists():
            frames = np.load(npy, allow_pickle=False)
            if frames.ndim != 2 or frames.shape[0] != length:
                raise DatasetParseError(f"record {index} ({rec['id']}): npy features have shape {frames.shape}")
        else:
            raise DatasetParseError(f"record {index} ({rec['id']}): no frames blob at {blob}")
        return RawSequence(
            frames=frames.astype(np.float64),
            first_cycle_end=int(rec["first_cycle_end"]),
            count=int(rec["count"]),
            id=str(rec["id"]),
            type=str(rec["type"]),
        )
    except DatasetParseError:
        raise
    except (ValueError, TypeError) as exc:
        raise DatasetParseError(f"record {index}: {exc}") from exc


def load(path) -> list:
    """Read a dataset directory written by :func:`save` (or ingested features)."""
    root = Path(path)
    ann = root / "annotations.jsonl" if root.is_dir() else root
    root = ann.parent
    text = ann.read_text()
    if not text.endswith("\n"):
        raise DatasetParseError(f"{ann}: file truncated (no trailing newline)")
    lines = text.splitlines()
    if not lines:
        raise DatasetParseError(f"{ann}: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{ann}: invalid header") from exc
    if header.get("format") != FORMAT_NAME:
        raise DatasetParseError(f"{ann}: not a {FORMAT_NAME} file")
    body = [line for line in lines[1:] if line.strip()]
    expected = header.get("records")
    if expected is not None and expected != len(body):
        raise DatasetParseError(f"{ann}: header declares {expected} records, found {len(body)} (record {len(body)} missing)")
    out = [_parse_record(line, i, root) for i, line in enumerate(body)]
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise DatasetParseError(f"{ann}: duplicate sequence ids")
    return out


def ingest(src, dst) -> list:
    """Validate externally extracted features in dataset layout and copy them to ``dst``."""
    dataset = load(src)
    if Path(dst).resolve() != Path(src).resolve():
        if Path(dst).exists():
            shutil.rmtree(dst)
        save(dst, dataset)
    return dataset


def save_split(path, split: DatasetSplit) -> None:
    Path(path).write_text(json.dumps(split.to_json(), indent=1, sort_keys=True) + "\n")


def load_split(path) -> DatasetSplit:
    return DatasetSplit.from_json(json.loads(Path(path).read_text()))


# -- splits ---------------------------------------------------------------


def _id_key(seed: int, id: str) -> str:
    return hashlib.sha256(f"{seed}:{id}".encode()).hexdigest()


def resplit(dataset: list, mode: str = "regular", seed: int = 0, fractions=(0.7, 0.1, 0.2)) -> DatasetSplit:
    if not dataset:
        raise ValueError("cannot split an empty dataset")
    if mode == "regular":
        ids = sorted((s.id for s in dataset), key=lambda i: _id_key(seed, i))
        n = len(ids)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        return DatasetSplit(ids[:n_train], ids[n_train : n_train + n_val], ids[n_train + n_val :])
    if mode != "disjoint_types":
        raise ValueError(f"unknown split mode {mode!r}")

    groups = {}
    for s in dataset:
        groups.setdefault(s.type, []).append(s.id)
    if len(groups) < 3:
        raise ValueError(f"disjoint_types split needs >= 3 types, got {len(groups)}")
    types = sorted(groups, key=lambda t: _id_key(seed, t))
    # every split gets one type, the rest go greedily to whichever split is furthest below target
    parts = {"test": [types[0]], "val": [types[1]], "train": [types[2]]}
    total = len(dataset)
    for t in types[3:]:
        deficit = {
            name: frac * total - sum(len(groups[x]) for x in parts[name])
            for name, frac in zip(("train", "val", "test"), fractions)
        }
        parts[max(deficit, key=lambda k: (deficit[k], k))].append(t)
    pick = lambda name: sorted(i for t in parts[name] for i in groups[t])
    return DatasetSplit(pick("train"), pick("val"), pick("test"), disjoint=True)


def content_hash(path) -> str:
    """Git-style hash of a dataset directory: sha1 over sorted (relpath, blob sha1)."""
    root = Path(path)
    entries = []
    for p in sorted(root.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
            entries.append(f"{blob} {p.relative_to(root).as_posix()}\n")
    return hashlib.sha1("".join(entries).encode()).hexdigest()
