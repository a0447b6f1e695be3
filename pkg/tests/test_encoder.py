from fractions import Fraction

import numpy as np
import pytest
import torch

from fcarac.encoder import FeatureMap, PrecomputedEncoder, TemporalEncoder, first_cycle
from fcarac.sampling import SampledSequence


def sseq(frames, id="x"):
    return SampledSequence(np.asarray(frames, dtype=float), 4, Fraction(1), id)


@pytest.fixture
def enc():
    torch.manual_seed(0)
    return TemporalEncoder(in_channels=3, width=6, hidden=5, k=4)


def test_zero_input_zero_bias(enc):
    with torch.no_grad():
        enc.conv1.bias.zero_()
        enc.conv2.bias.zero_()
    fm = enc(sseq(np.zeros((10, 3))))
    assert torch.equal(fm.X, torch.zeros(10, 6))


def test_deterministic(enc, rng):
    frames = rng.normal(size=(13, 3))
    assert torch.equal(enc(sseq(frames)).X, enc(sseq(frames.copy())).X)


def test_window_enumeration_f8(enc, rng):
    frames = rng.normal(size=(8, 3))
    X = enc(sseq(frames)).X.detach()
    assert X.shape == (8, 6)
    # enumerate windows 0, 2, 4 by hand, each producing 2 frames
    rows = []
    for start in (0, 2, 4):
        clip = torch.as_tensor(frames[start : start + 4].T).unsqueeze(0)
        out = torch.tanh(enc.conv2(torch.tanh(enc.conv1(clip))))[0].T
        rows.append(out.detach())
    manual = torch.cat(rows)
    assert manual.shape == (6, 6)
    assert torch.equal(X[:6], manual)
    assert torch.equal(X[6], X[5]) and torch.equal(X[7], X[5])


def test_too_short(enc):
    with pytest.raises(ValueError):
        enc(sseq(np.zeros((3, 3))))


def test_first_cycle_slices(rng):
    X = torch.as_tensor(rng.normal(size=(9, 2)))
    assert torch.equal(first_cycle(FeatureMap(X), 4).Xp, X[:4])
    assert torch.equal(first_cycle(FeatureMap(X[:4]), 4).Xp, X[:4])


def test_first_cycle_equals_reencoding_when_f_equals_k(enc, rng):
    frames = rng.normal(size=(4, 3))
    fm = enc(sseq(frames))
    alone = enc.encode_many([sseq(frames)])[0]
    assert torch.equal(first_cycle(fm, 4).Xp, alone)


def test_translation_consistency(enc, rng):
    frames = rng.normal(size=(20, 3))
    shifted = np.concatenate([rng.normal(size=(2, 3)), frames])
    a = enc(sseq(frames)).X.detach()
    b = enc(sseq(shifted)).X.detach()
    # interior rows move by k/2 = 2; the repeated tail is excluded
    torch.testing.assert_close(b[2:18], a[0:16], rtol=0, atol=0)


def test_encode_many_matches_single(enc, rng):
    seqs = [sseq(rng.normal(size=(n, 3)), str(n)) for n in (4, 9, 15)]
    many = enc.encode_many(seqs)
    for s, m in zip(seqs, many):
        assert torch.equal(enc(s).X, m)


def test_gradients_reach_encoder(enc, rng):
    fm = enc(sseq(rng.normal(size=(12, 3))))
    (fm.X.sin() * torch.as_tensor(rng.normal(size=(12, 6)))).sum().backward()
    for p in enc.parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0


def test_precomputed_encoder_passthrough(rng):
    frames = rng.normal(size=(7, 5))
    fm = PrecomputedEncoder(5)(sseq(frames))
    np.testing.assert_array_equal(fm.X.numpy(), frames)
