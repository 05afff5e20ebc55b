"""Modality branches: frozen featurizers, temporal encoding, Q-Formers.

The image branch is a frozen seeded patch embedding. The video branch
samples frames, reuses the image featurizer per frame, adds a temporal
position code to every frame token and compresses the stack with a
Q-Former. The audio branch windows the waveform, featurizes magnitude
spectra per window and compresses with its own Q-Former. Featurizer
weights are frozen stand-ins for pretrained encoders: they are a pure
function of (seed, shape) and never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .autodiff import Tensor, add, no_grad
from .nn import (
    ParamStore,
    feed_forward,
    init_attention,
    init_feed_forward,
    init_layer_norm,
    layer_norm_named,
    multihead_attention,
    normal_init,
)
from .util import derived_rng, round_half_away


class ShapeMismatch(ValueError):
    pass


class EmptyVideo(ValueError):
    pass


class EmptyAudio(ValueError):
    pass


class BadDim(ValueError):
    pass


# Full-scale audio front-end constants, kept for documentation; the toy
# profile runs at 8 kHz with spectrum pooling instead of 128 mel bins.
FULL_SCALE_AUDIO_REFERENCE = {"sample_rate": 16000, "segment_seconds": 2.0, "mel_bins": 128}


@dataclass
class EncoderConfig:
    image_size: int = 32
    K_I: int = 16
    d_I: int = 64
    K_f: int = 16
    d_f: int = 64
    M: int = 8
    k_V: int = 8
    d_V: int = 64
    N: int = 3
    K_s: int = 16
    d_s: int = 64
    k_A: int = 4
    d_A: int = 64
    qformer_layers: int = 2
    qformer_heads: int = 4
    qformer_ff_mult: int = 2
    temporal_pe_kind: str = "sinusoidal"  # or "none"
    sample_rate: int = 8000
    segment_seconds: float = 2.0
    full_scale_reference: Dict = field(default_factory=lambda: dict(FULL_SCALE_AUDIO_REFERENCE))

    def __post_init__(self):
        counts = (self.K_I, self.K_f, self.M, self.k_V, self.N, self.K_s, self.k_A)
        if any(c < 1 for c in counts):
            raise ValueError("all token/frame/segment counts must be >= 1")
        for d in (self.d_I, self.d_f, self.d_V, self.d_s, self.d_A):
            if d % 2:
                raise BadDim(f"dims must be even for sinusoidal codes, got {d}")
        if self.d_f != self.d_V or self.d_s != self.d_A:
            raise BadDim("Q-Former operates in the featurizer dim: need d_f == d_V and d_s == d_A")
        for k in (self.K_I, self.K_f):
            g = int(np.sqrt(k))
            if g * g != k:
                raise ShapeMismatch(f"patch counts must be square grids, got {k}")

    def to_dict(self) -> Dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class MediaPayload:
    kind: str  # "image" | "video" | "audio"
    data: np.ndarray
    sample_rate: Optional[int] = None

    @staticmethod
    def image(array: np.ndarray) -> "MediaPayload":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3 or array.shape[-1] != 3 or array.size == 0:
            raise ShapeMismatch(f"image must be HxWx3, got {array.shape}")
        _check_finite(array)
        return MediaPayload("image", array)

    @staticmethod
    def video(frames: np.ndarray) -> "MediaPayload":
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[-1] != 3 or frames.shape[0] == 0:
            raise EmptyVideo(f"video must be TxHxWx3 with T >= 1, got {frames.shape}")
        _check_finite(frames)
        return MediaPayload("video", frames)

    @staticmethod
    def audio(waveform: np.ndarray, sample_rate: int) -> "MediaPayload":
        waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
        if waveform.size == 0:
            raise EmptyAudio("waveform must have at least one sample")
        _check_finite(waveform)
        return MediaPayload("audio", waveform, sample_rate=sample_rate)


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError("media payload contains non-finite values")


@dataclass
class EncoderOutput:
    tokens: np.ndarray  # (count, dim)
    modality: str

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2:
            raise ShapeMismatch(f"encoder output must be 2-D, got {self.tokens.shape}")
        _check_finite(self.tokens)


def sample_frame_indices(t: int, m: int) -> np.ndarray:
    """Uniform sampling rule: round(i*(T-1)/(M-1)); repeats when T < M."""
    if t < 1:
        raise EmptyVideo("cannot sample from an empty video")
    if m == 1:
        return np.zeros(1, dtype=np.int64)
    return round_half_away(np.arange(m) * (t - 1) / (m - 1))


def sample_frames(frames: np.ndarray, m: int) -> np.ndarray:
    """Uniformly sample m frames, order preserved."""
    return np.asarray(frames)[sample_frame_indices(len(frames), m)]


def temporal_encoding(index: int, total: int, dim: int) -> np.ndarray:
    """Sinusoidal code of the normalized position index/total.

    First half sines, second half cosines, over harmonics pi*(1..dim/2) so
    nearby positions stay distinguishable at small totals.
    """
    if dim % 2:
        raise BadDim(f"temporal encoding needs an even dim, got {dim}")
    if not (0 <= index < total):
        raise ValueError(f"index {index} outside [0, {total})")
    p = index / total
    freqs = np.pi * np.arange(1, dim // 2 + 1)
    return np.concatenate([np.sin(p * freqs), np.cos(p * freqs)])


class FrozenFeaturizer:
    """Seeded random projections standing in for pretrained encoders.

    Weight matrices are deterministic functions of (seed, tag, shape),
    materialized lazily and cached; they are registered with the model as
    non-trainable parameters.
    """

    def __init__(self, cfg: EncoderConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.matrices: Dict[str, np.ndarray] = {}

    def _matrix(self, tag: str, in_dim: int, out_dim: int) -> np.ndarray:
        name = f"{tag}_{in_dim}x{out_dim}"
        if name not in self.matrices:
            rng = derived_rng(self.seed, "frozen", tag, in_dim, out_dim)
            self.matrices[name] = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, out_dim))
        return self.matrices[name]

    def image_tokens(self, image: np.ndarray) -> np.ndarray:
        """Patchify into the configured grid and project each patch to d_I."""
        g = int(np.sqrt(self.cfg.K_I))
        h, w, _ = image.shape
        if h % g or w % g:
            raise ShapeMismatch(f"image {h}x{w} not divisible into a {g}x{g} patch grid")
        ph, pw = h // g, w // g
        patches = image.reshape(g, ph, g, pw, 3).transpose(0, 2, 1, 3, 4).reshape(self.cfg.K_I, ph * pw * 3)
        return patches @ self._matrix("patch", ph * pw * 3, self.cfg.d_I)

    def frame_stack(self, frames: np.ndarray) -> np.ndarray:
        """Sample M frames, featurize each, add temporal codes -> (M*K_f, d_f)."""
        cfg = self.cfg
        idx = sample_frame_indices(len(frames), cfg.M)
        toks = np.stack([self.image_tokens(frames[i]) for i in idx])  # (M, K_f, d_f)
        if cfg.temporal_pe_kind == "sinusoidal":
            pe = np.stack([temporal_encoding(i, cfg.M, cfg.d_f) for i in range(cfg.M)])
            toks = toks + pe[:, None, :]
        return toks.reshape(cfg.M * cfg.K_f, cfg.d_f)

    def audio_stack(self, waveform: np.ndarray, sample_rate: int) -> np.ndarray:
        """Window into N segments, featurize spectra, add temporal codes."""
        cfg = self.cfg
        if waveform.size == 0:
            raise EmptyAudio("empty waveform")
        win = int(round(cfg.segment_seconds * sample_rate))
        padded = waveform
        if padded.size < win:
            padded = np.concatenate([padded, np.zeros(win - padded.size)])
        if cfg.N == 1:
            starts = np.zeros(1, dtype=np.int64)
        else:
            starts = round_half_away(np.arange(cfg.N) * (padded.size - win) / (cfg.N - 1))
        segs = []
        for i, s in enumerate(starts):
            seg = padded[s:s + win]
            if seg.size < win:
                seg = np.concatenate([seg, np.zeros(win - seg.size)])
            toks = self._segment_tokens(seg)
            if cfg.temporal_pe_kind == "sinusoidal":
                toks = toks + temporal_encoding(i, cfg.N, cfg.d_s)
            segs.append(toks)
        return np.concatenate(segs, axis=0)  # (N*K_s, d_s)

    def _segment_tokens(self, segment: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        frame_len = segment.size // cfg.K_s
        framed = segment[: frame_len * cfg.K_s].reshape(cfg.K_s, frame_len)
        spectrum = np.abs(np.fft.rfft(framed, axis=-1))
        feats = np.log1p(spectrum)
        return feats @ self._matrix("spectral", feats.shape[-1], cfg.d_s)


class QFormer:
    """Learnable queries attending over a token sequence, BLIP-2 style.

    Per layer: self-attention over the queries, cross-attention from
    queries to the input sequence, then a feed-forward block, each wrapped
    in residual + layer norm. No positional information is injected here,
    so the map is permutation-invariant over input rows.
    """

    def __init__(self, store: ParamStore, prefix: str, k: int, d: int,
                 layers: int, heads: int, ff_mult: int, rng: np.random.Generator):
        self.store = store
        self.prefix = prefix
        self.k = k
        self.d = d
        self.layers = layers
        self.heads = heads
        store.create(f"{prefix}/queries", normal_init(rng, (k, d), 0.02))
        for i in range(layers):
            lp = f"{prefix}/layer{i}"
            init_attention(store, f"{lp}/self", d, rng, 0.02)
            init_attention(store, f"{lp}/cross", d, rng, 0.02)
            init_feed_forward(store, f"{lp}/ff", d, ff_mult * d, rng, 0.02)
            for ln in ("ln1", "ln2", "ln3"):
                init_layer_norm(store, f"{lp}/{ln}", d)

    def __call__(self, sequence: Tensor) -> Tensor:
        """(B, n, d) -> (B, k, d); zero layers return the queries unchanged."""
        b = sequence.shape[0]
        queries = self.store[f"{self.prefix}/queries"]
        x = add(queries, Tensor(np.zeros((b, self.k, self.d))))
        for i in range(self.layers):
            lp = f"{self.prefix}/layer{i}"
            x = layer_norm_named(self.store, f"{lp}/ln1",
                                 add(x, multihead_attention(self.store, f"{lp}/self", x, x, self.heads)))
            x = layer_norm_named(self.store, f"{lp}/ln2",
                                 add(x, multihead_attention(self.store, f"{lp}/cross", x, sequence, self.heads)))
            x = layer_norm_named(self.store, f"{lp}/ln3", add(x, feed_forward(self.store, f"{lp}/ff", x)))
        return x


def encode_image(payload: MediaPayload, frozen: FrozenFeaturizer) -> EncoderOutput:
    """Frozen patch embedding; (K_I, d_I), deterministic per (image, seed)."""
    if payload.kind != "image":
        raise ShapeMismatch(f"expected image payload, got {payload.kind}")
    return EncoderOutput(frozen.image_tokens(payload.data), "image")


def encode_video(payload: MediaPayload, frozen: FrozenFeaturizer, qformer: QFormer) -> EncoderOutput:
    """Frame sampling + featurizer + temporal codes + Q-Former; (k_V, d_V)."""
    if payload.kind != "video":
        raise ShapeMismatch(f"expected video payload, got {payload.kind}")
    stack = frozen.frame_stack(payload.data)
    with no_grad():
        out = qformer(Tensor(stack[None]))
    return EncoderOutput(out.data[0], "video")


def encode_audio(payload: MediaPayload, frozen: FrozenFeaturizer, qformer: QFormer) -> EncoderOutput:
    """Segment windows + spectral featurizer + temporal codes + Q-Former; (k_A, d_A)."""
    if payload.kind != "audio":
        raise ShapeMismatch(f"expected audio payload, got {payload.kind}")
    if payload.sample_rate is None:
        raise EmptyAudio("audio payload is missing its sample rate")
    stack = frozen.audio_stack(payload.data, payload.sample_rate)
    with no_grad():
        out = qformer(Tensor(stack[None]))
    return EncoderOutput(out.data[0], "audio")
