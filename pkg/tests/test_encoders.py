import numpy as np
import pytest

from mmground.autodiff import Tensor
from mmground.encoders import (
    BadDim,
    EmptyAudio,
    EmptyVideo,
    EncoderConfig,
    EncoderOutput,
    FrozenFeaturizer,
    MediaPayload,
    QFormer,
    ShapeMismatch,
    encode_audio,
    encode_image,
    encode_video,
    sample_frame_indices,
    sample_frames,
    temporal_encoding,
)
from mmground.nn import ParamStore


@pytest.fixture(scope="module")
def cfg():
    return EncoderConfig()


@pytest.fixture(scope="module")
def frozen(cfg):
    return FrozenFeaturizer(cfg, seed=42)


def _rand_image(rng, size=32):
    return rng.uniform(0, 1, size=(size, size, 3))


def _qformer(cfg, prefix="qf", k=8, d=64, layers=2, seed=0):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    return QFormer(store, prefix, k, d, layers, cfg.qformer_heads, cfg.qformer_ff_mult, rng)


def test_encode_image_shape_and_determinism(cfg, frozen):
    rng = np.random.default_rng(0)
    img = MediaPayload.image(_rand_image(rng))
    out1 = encode_image(img, frozen)
    out2 = encode_image(img, FrozenFeaturizer(cfg, seed=42))
    assert out1.tokens.shape == (cfg.K_I, cfg.d_I)
    assert np.array_equal(out1.tokens, out2.tokens)
    other = encode_image(img, FrozenFeaturizer(cfg, seed=43))
    assert not np.array_equal(out1.tokens, other.tokens)


def test_encode_image_patch_locality(cfg, frozen):
    rng = np.random.default_rng(1)
    a = _rand_image(rng)
    b = a.copy()
    b[8:16, 24:32] = rng.uniform(0, 1, size=(8, 8, 3))  # patch row 1, col 3 -> index 7
    ta = encode_image(MediaPayload.image(a), frozen).tokens
    tb = encode_image(MediaPayload.image(b), frozen).tokens
    diff_rows = np.nonzero(np.abs(ta - tb).sum(axis=1) > 1e-12)[0]
    assert list(diff_rows) == [7]


def test_encode_image_shape_mismatch(frozen):
    with pytest.raises(ShapeMismatch):
        encode_image(MediaPayload.image(np.zeros((30, 32, 3))), frozen)


def test_sample_frame_indices_examples():
    assert list(sample_frame_indices(64, 8)) == [0, 9, 18, 27, 36, 45, 54, 63]
    assert list(sample_frame_indices(8, 8)) == list(range(8))
    assert list(sample_frame_indices(1, 4)) == [0, 0, 0, 0]
    frames = np.arange(5 * 2 * 2 * 3).reshape(5, 2, 2, 3)
    picked = sample_frames(frames, 3)
    assert np.array_equal(picked, frames[[0, 2, 4]])
    with pytest.raises(EmptyVideo):
        sample_frame_indices(0, 4)


def test_temporal_encoding_contract():
    pe0 = temporal_encoding(0, 8, 64)
    assert np.allclose(pe0[:32], 0.0) and np.allclose(pe0[32:], 1.0)
    assert np.array_equal(temporal_encoding(3, 8, 64), temporal_encoding(3, 8, 64))
    d = np.linalg.norm(temporal_encoding(1, 8, 64) - temporal_encoding(2, 8, 64))
    assert d > 0
    with pytest.raises(BadDim):
        temporal_encoding(0, 8, 63)
    with pytest.raises(ValueError):
        temporal_encoding(9, 8, 64)


def test_qformer_shape_and_zero_layers(cfg):
    qf = _qformer(cfg)
    seq = Tensor(np.random.default_rng(2).normal(size=(1, 128, 64)))
    out = qf(seq)
    assert out.shape == (1, 8, 64)
    qf0 = _qformer(cfg, prefix="qf0", layers=0)
    out0 = qf0(seq)
    assert np.allclose(out0.data[0], qf0.store["qf0/queries"].data)


def test_qformer_permutation_invariance_over_rows(cfg):
    qf = _qformer(cfg)
    rng = np.random.default_rng(3)
    seq = rng.normal(size=(1, 50, 64))
    perm = rng.permutation(50)
    out1 = qf(Tensor(seq)).data
    out2 = qf(Tensor(seq[:, perm])).data
    assert np.max(np.abs(out1 - out2)) < 1e-5


def test_encode_video_shapes_and_pe_sensitivity(cfg, frozen):
    rng = np.random.default_rng(4)
    frames = rng.uniform(0, 1, size=(32, 32, 32, 3))
    qf = _qformer(cfg, prefix="vqf")
    out = encode_video(MediaPayload.video(frames), frozen, qf)
    assert out.tokens.shape == (cfg.k_V, cfg.d_V)
    assert out.modality == "video"

    # T == M so that a frame permutation permutes the sampled set itself
    short = rng.uniform(0, 1, size=(cfg.M, 32, 32, 3))
    perm = rng.permutation(cfg.M)
    while np.all(perm == np.arange(cfg.M)):
        perm = rng.permutation(cfg.M)
    out_a = encode_video(MediaPayload.video(short), frozen, qf)
    out_b = encode_video(MediaPayload.video(short[perm]), frozen, qf)
    assert np.linalg.norm(out_a.tokens - out_b.tokens) > 1e-6

    nope = EncoderConfig(temporal_pe_kind="none")
    fr_nope = FrozenFeaturizer(nope, seed=42)
    a = encode_video(MediaPayload.video(short), fr_nope, qf)
    b = encode_video(MediaPayload.video(short[perm]), fr_nope, qf)
    assert np.max(np.abs(a.tokens - b.tokens)) < 1e-5


def test_encode_audio_shapes_and_content_sensitivity(cfg, frozen):
    qf = _qformer(cfg, prefix="aqf", k=4, d=64)
    t = np.arange(32000) / 8000.0
    tone = MediaPayload.audio(0.5 * np.sin(2 * np.pi * 900 * t), 8000)
    silence = MediaPayload.audio(np.zeros(32000), 8000)
    out_tone = encode_audio(tone, frozen, qf)
    out_sil = encode_audio(silence, frozen, qf)
    assert out_tone.tokens.shape == (cfg.k_A, cfg.d_A)
    assert np.linalg.norm(out_tone.tokens - out_sil.tokens) > 1e-6


def test_encode_audio_segment_order_matters_with_pe(cfg, frozen):
    qf = _qformer(cfg, prefix="aqf2", k=4, d=64)
    rng = np.random.default_rng(5)
    a = rng.normal(0, 0.3, size=32000)
    flipped = a[::-1].copy()
    o1 = encode_audio(MediaPayload.audio(a, 8000), frozen, qf)
    o2 = encode_audio(MediaPayload.audio(flipped, 8000), frozen, qf)
    assert np.linalg.norm(o1.tokens - o2.tokens) > 1e-6


def test_encode_audio_short_waveform_zero_pads(cfg, frozen):
    qf = _qformer(cfg, prefix="aqf3", k=4, d=64)
    out = encode_audio(MediaPayload.audio(np.ones(100), 8000), frozen, qf)
    assert out.tokens.shape == (cfg.k_A, cfg.d_A)
    with pytest.raises(EmptyAudio):
        MediaPayload.audio(np.array([]), 8000)


def test_outputs_finite_on_fuzz(cfg, frozen):
    rng = np.random.default_rng(6)
    qfv = _qformer(cfg, prefix="fz_v")
    qfa = _qformer(cfg, prefix="fz_a", k=4, d=64)
    for i in range(60):
        img = encode_image(MediaPayload.image(rng.uniform(-2, 2, (32, 32, 3))), frozen)
        assert np.all(np.isfinite(img.tokens))
        t = int(rng.integers(1, 40))
        vid = encode_video(MediaPayload.video(rng.uniform(0, 1, (t, 32, 32, 3))), frozen, qfv)
        assert np.all(np.isfinite(vid.tokens))
        n = int(rng.integers(1, 40000))
        aud = encode_audio(MediaPayload.audio(rng.normal(0, 1, n), 8000), frozen, qfa)
        assert np.all(np.isfinite(aud.tokens))


def test_media_payload_validation():
    with pytest.raises(ValueError):
        MediaPayload.image(np.full((32, 32, 3), np.nan))
    with pytest.raises(EmptyVideo):
        MediaPayload.video(np.zeros((0, 32, 32, 3)))
    with pytest.raises(ShapeMismatch):
        MediaPayload.image(np.zeros((32, 32)))


def test_encoder_output_validation():
    with pytest.raises(ShapeMismatch):
        EncoderOutput(np.zeros(3), "image")
    with pytest.raises(ValueError):
        EncoderOutput(np.full((2, 2), np.inf), "image")


def test_config_validation():
    with pytest.raises(BadDim):
        EncoderConfig(d_I=63)
    with pytest.raises(ShapeMismatch):
        EncoderConfig(K_I=15)
    with pytest.raises(BadDim):
        EncoderConfig(d_f=64, d_V=32)
