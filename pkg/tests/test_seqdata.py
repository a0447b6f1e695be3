import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcarac import seqdata
from fcarac.seqdata import (
    DatasetParseError,
    GenerationError,
    GeneratorConfig,
    RawSequence,
    SynthSpec,
    cycle_lengths,
    generate,
    generate_dataset,
    resplit,
    waveform_value,
)

from oracles import autocorr


def test_pulse_train_autocorrelation_peaks():
    seq = generate(SynthSpec(base_period=10, count=3, speed_drift=1.0, noise_std=0.0, waveform="pulse", seed=1))
    assert seq.length == 30
    assert seq.first_cycle_end == 10
    ac = autocorr(seq.frames)
    assert 5 + int(np.argmax(ac[5:16])) == 10
    assert 15 + int(np.argmax(ac[15:26])) == 20


def test_single_cycle_sequence():
    seq = generate(SynthSpec(base_period=12, count=1, seed=3))
    assert seq.length == seq.first_cycle_end == 12


def test_generation_is_deterministic():
    spec = SynthSpec(base_period=9, count=5, speed_drift=1.1, noise_std=0.2, waveform="sawtooth", seed=42)
    a, b = generate(spec), generate(spec)
    assert a.frames.tobytes() == b.frames.tobytes()


def test_generation_length_limit():
    with pytest.raises(GenerationError):
        generate(SynthSpec(base_period=100, count=50, max_length=1000))


@pytest.mark.parametrize(
    "kw", [dict(base_period=3), dict(speed_drift=2.5), dict(noise_std=-1.0), dict(waveform="square"), dict(count=0)]
)
def test_invalid_specs(kw):
    base = dict(base_period=8, count=3)
    base.update(kw)
    with pytest.raises(GenerationError):
        generate(SynthSpec(**base))


@settings(max_examples=60, deadline=None)
@given(
    period=st.integers(4, 30),
    count=st.integers(1, 15),
    drift=st.floats(0.5, 2.0),
    wave=st.sampled_from(seqdata.WAVEFORMS),
    seed=st.integers(0, 1000),
)
def test_cycle_bookkeeping(period, count, drift, wave, seed):
    spec = SynthSpec(period, count, drift, 0.0, wave, channels=3, seed=seed, max_length=10**6)
    seq = generate(spec)
    lengths = cycle_lengths(period, count, drift)
    assert sum(lengths) == seq.length
    assert seq.first_cycle_end == lengths[0] == period
    # noise-free cycles are the waveform resampled onto each cycle's own length
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(0, 1, 3)
    gains = rng.uniform(0.5, 1.5, 3)
    start = 0
    for n in lengths:
        phase = np.arange(n) / n
        expected = gains * waveform_value(wave, (phase[:, None] + offsets) % 1.0)
        np.testing.assert_array_equal(seq.frames[start : start + n], expected)
        start += n


def test_constant_speed_is_exactly_periodic():
    seq = generate(SynthSpec(base_period=7, count=4, waveform="sine", seed=2))
    for c in range(1, 4):
        np.testing.assert_allclose(seq.frames[7 * c : 7 * c + 7], seq.frames[:7], atol=1e-12)


# -- I/O ----------------------------------------------------------------------


def test_empty_dataset_round_trip(tmp_path):
    seqdata.save(tmp_path, [])
    header = json.loads((tmp_path / "annotations.jsonl").read_text().splitlines()[0])
    assert header["format"] == "fcarac-dataset"
    assert seqdata.load(tmp_path) == []


def test_round_trip(tmp_path):
    data = generate_dataset(3, GeneratorConfig(), seed=5)
    seqdata.save(tmp_path, data)
    assert seqdata.load(tmp_path) == data
    rec = json.loads((tmp_path / "annotations.jsonl").read_text().splitlines()[1])
    assert set(rec) >= {"id", "length", "first_cycle_end", "count", "type"}


def test_truncated_file_is_rejected(tmp_path):
    data = generate_dataset(3, GeneratorConfig(), seed=5)
    seqdata.save(tmp_path, data)
    ann = tmp_path / "annotations.jsonl"
    text = ann.read_text()
    ann.write_text(text[: len(text) - 20])
    with pytest.raises(DatasetParseError, match="record 2|truncated"):
        seqdata.load(tmp_path)
    # cut exactly at a line boundary
    ann.write_text("".join(text.splitlines(keepends=True)[:3]))
    with pytest.raises(DatasetParseError, match="record 2"):
        seqdata.load(tmp_path)


def test_malformed_record_names_index(tmp_path):
    data = generate_dataset(3, GeneratorConfig(), seed=5)
    seqdata.save(tmp_path, data)
    ann = tmp_path / "annotations.jsonl"
    lines = ann.read_text().splitlines()
    lines[2] = '{"id": "x"'
    ann.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetParseError, match="record 1"):
        seqdata.load(tmp_path)


def test_short_frames_blob(tmp_path):
    data = generate_dataset(2, GeneratorConfig(), seed=5)
    seqdata.save(tmp_path, data)
    blob = tmp_path / "frames" / f"{data[1].id}.f64"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(DatasetParseError, match="record 1"):
        seqdata.load(tmp_path)


def test_ingest_external_npy_features(tmp_path):
    src = tmp_path / "src"
    (src / "frames").mkdir(parents=True)
    feats = np.random.default_rng(0).normal(size=(40, 16))
    np.save(src / "frames" / "clip-a.npy", feats)
    header = {"format": "fcarac-dataset", "version": 1, "channels": 16, "records": 1}
    rec = {"id": "clip-a", "length": 40, "first_cycle_end": 8, "count": 5, "type": "squat"}
    (src / "annotations.jsonl").write_text(json.dumps(header) + "\n" + json.dumps(rec) + "\n")
    out = seqdata.ingest(src, tmp_path / "dst")
    assert out[0].channels == 16
    back = seqdata.load(tmp_path / "dst")
    np.testing.assert_array_equal(back[0].frames, feats)
    assert back[0].type == "squat"


def test_raw_sequence_invariants():
    with pytest.raises(ValueError):
        RawSequence(np.zeros((5, 2)), first_cycle_end=6, count=1, id="a")
    with pytest.raises(ValueError):
        RawSequence(np.zeros((5, 2)), first_cycle_end=2, count=0, id="a")


# -- splits ---------------------------------------------------------------------


def test_regular_split_single_type():
    data = generate_dataset(20, GeneratorConfig(waveforms=("sine",)), seed=1)
    sp = resplit(data, "regular", seed=3)
    assert sorted(sp.train + sp.val + sp.test) == sorted(s.id for s in data)
    assert (len(sp.train), len(sp.val), len(sp.test)) == (14, 2, 4)


def test_disjoint_split_separates_types():
    data = generate_dataset(60, GeneratorConfig(), seed=1)
    sp = resplit(data, "disjoint_types", seed=0)
    types = {s.id: s.type for s in data}
    train_t = {types[i] for i in sp.train}
    test_t = {types[i] for i in sp.test}
    assert not train_t & test_t
    assert sp.disjoint


def test_disjoint_split_needs_three_types():
    data = generate_dataset(10, GeneratorConfig(waveforms=("sine", "pulse")), seed=1)
    with pytest.raises(ValueError):
        resplit(data, "disjoint_types", seed=0)


@pytest.mark.parametrize("mode", ["regular", "disjoint_types"])
def test_split_is_deterministic(mode):
    data = generate_dataset(30, GeneratorConfig(), seed=2)
    assert resplit(data, mode, seed=9) == resplit(data, mode, seed=9)


def test_generator_config_parsing():
    cfg = GeneratorConfig.from_mapping({"count_max": "6", "waveforms": "sine, pulse", "drift_max": "1.0"})
    assert cfg.count_max == 6 and cfg.waveforms == ("sine", "pulse")
    with pytest.raises(GenerationError):
        GeneratorConfig.from_mapping({"bogus": "1"})


def test_dataset_counts_within_range():
    cfg = GeneratorConfig(count_min=3, count_max=7)
    data = generate_dataset(50, cfg, seed=4)
    assert all(3 <= s.count <= 7 for s in data)
