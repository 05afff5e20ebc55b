"""Fusion model: modality adapters, a small causal character LM, sequence
assembly, the training loss and greedy generation.

Parameters are partitioned into three named sets. "encoders" holds the
frozen featurizer matrices and never trains. "adapters" holds the
per-modality projectors plus both Q-Formers and their query vectors: the
Q-Formers aggregate frames/segments on the way into the LM, so they freeze
and thaw together with the projectors. "llm" is everything in the language
model. The partition is total and disjoint, and checkpoints re-validate it
on load.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tokenizer as tok
from .autodiff import Tensor, add, concat, embedding, index0, masked_sequence_nll, no_grad, tsum
from .encoders import EncoderConfig, EncoderOutput, FrozenFeaturizer, MediaPayload, QFormer, encode_audio, encode_image, encode_video
from .nn import (
    ParamStore,
    causal_mask,
    feed_forward,
    init_attention,
    init_feed_forward,
    init_layer_norm,
    key_padding_mask,
    layer_norm_named,
    linear,
    multihead_attention,
    normal_init,
)
from .util import derived_rng, load_arrays, save_arrays

CHECKPOINT_FORMAT_VERSION = 1

PARAM_SET_NAMES = ("encoders", "adapters", "llm")


class SlotMismatch(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class EmptyMask(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_llm: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 384
    context: int = 512
    adapter_kind: str = "mlp"  # or "linear"
    adapter_hidden: int = 128
    init_std: float = 0.02
    embed_std: float = 0.1
    pos_scale: float = 0.1
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def to_dict(self) -> Dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "encoder"}
        d["encoder"] = self.encoder.to_dict()
        return d

    @staticmethod
    def from_dict(d: Dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d.get("encoder", {}))
        return ModelConfig(**d)


@dataclass
class MultimodalSequence:
    """One assembled training/eval sequence.

    ``token_ids`` carries media sentinel ids at media positions;
    ``loss_mask`` is 1 exactly on supervised positions (answer characters
    plus the closing EOS); ``embeddings`` is the (L, d_llm) content matrix
    before positional codes.
    """

    token_ids: np.ndarray
    loss_mask: np.ndarray
    embeddings: Tensor

    def __len__(self):
        return len(self.token_ids)


def _positional_table(context: int, d: int, scale: float) -> np.ndarray:
    pos = np.arange(context)[:, None]
    half = d // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = pos * freqs[None, :]
    return scale * np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class GroundingModel:
    """Tri-modal grounding model over the character tokenizer."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.tokenizer = tok.CharTokenizer()
        self.store = ParamStore()
        self.frozen = FrozenFeaturizer(config.encoder, config.seed)
        enc = config.encoder
        rng = derived_rng(config.seed, "model-init")

        self.qformers = {
            "video": QFormer(self.store, "adapters/video_qformer", enc.k_V, enc.d_V,
                             enc.qformer_layers, enc.qformer_heads, enc.qformer_ff_mult, rng),
            "audio": QFormer(self.store, "adapters/audio_qformer", enc.k_A, enc.d_A,
                             enc.qformer_layers, enc.qformer_heads, enc.qformer_ff_mult, rng),
        }
        for kind, d_in in (("image", enc.d_I), ("video", enc.d_V), ("audio", enc.d_A)):
            self._init_adapter(kind, d_in, rng)

        d = config.d_llm
        v = self.tokenizer.vocab_size
        self.store.create("llm/tok_embed", normal_init(rng, (v, d), config.embed_std))
        for i in range(config.n_layers):
            bp = f"llm/block{i}"
            init_layer_norm(self.store, f"{bp}/ln1", d)
            init_attention(self.store, f"{bp}/attn", d, rng, config.init_std)
            init_layer_norm(self.store, f"{bp}/ln2", d)
            init_feed_forward(self.store, f"{bp}/ff", d, config.d_ff, rng, config.init_std)
        init_layer_norm(self.store, "llm/final_ln", d)
        self.store.create("llm/out/w", normal_init(rng, (d, v), config.init_std))
        self.store.create("llm/out/b", np.zeros(v))

        self.posenc = _positional_table(config.context, d, config.pos_scale)
        # Materialize the frozen matrices for the configured media geometry
        # so checkpoints and checksums cover them from the start.
        patch = enc.image_size // int(np.sqrt(enc.K_I))
        self.frozen._matrix("patch", patch * patch * 3, enc.d_I)
        win = int(round(enc.segment_seconds * enc.sample_rate))
        self.frozen._matrix("spectral", (win // enc.K_s) // 2 + 1, enc.d_s)

    def _init_adapter(self, kind: str, d_in: int, rng: np.random.Generator) -> None:
        cfg = self.config
        if cfg.adapter_kind == "mlp":
            self.store.create(f"adapters/{kind}/w1", normal_init(rng, (d_in, cfg.adapter_hidden), 1.0 / np.sqrt(d_in)))
            self.store.create(f"adapters/{kind}/b1", np.zeros(cfg.adapter_hidden))
            self.store.create(f"adapters/{kind}/w2", normal_init(rng, (cfg.adapter_hidden, cfg.d_llm), 1.0 / np.sqrt(cfg.adapter_hidden)))
            self.store.create(f"adapters/{kind}/b2", np.zeros(cfg.d_llm))
        elif cfg.adapter_kind == "linear":
            self.store.create(f"adapters/{kind}/w", normal_init(rng, (d_in, cfg.d_llm), 1.0 / np.sqrt(d_in)))
            self.store.create(f"adapters/{kind}/b", np.zeros(cfg.d_llm))
        else:
            raise ValueError(f"unknown adapter kind {cfg.adapter_kind}")

    # ---------------- parameter bookkeeping ----------------

    def parameter_sets(self) -> Dict[str, List[str]]:
        """Named, disjoint, total partition of every parameter."""
        sets = {
            "encoders": sorted(f"encoders/{n}" for n in self.frozen.matrices),
            "adapters": sorted(self.store.names_with_prefix("adapters/")),
            "llm": sorted(self.store.names_with_prefix("llm/")),
        }
        assert len(sets["adapters"]) + len(sets["llm"]) == len(self.store.params)
        return sets

    def parameter_array(self, name: str) -> np.ndarray:
        if name.startswith("encoders/"):
            return self.frozen.matrices[name[len("encoders/"):]]
        return self.store[name].data

    def trainable_tensors(self, set_names: Sequence[str]) -> List[Tensor]:
        out: List[Tensor] = []
        for s in set_names:
            if s == "encoders":
                raise ValueError("encoder featurizers are frozen by contract")
            if s not in PARAM_SET_NAMES:
                raise KeyError(s)
            out.extend(self.store[n] for n in self.parameter_sets()[s])
        return out

    def set_checksums(self) -> Dict[str, str]:
        sums = {}
        for set_name, names in self.parameter_sets().items():
            h = hashlib.sha256()
            for n in names:
                h.update(n.encode())
                h.update(np.ascontiguousarray(self.parameter_array(n)).tobytes())
            sums[set_name] = h.hexdigest()
        return sums

    def n_parameters(self) -> int:
        return sum(self.parameter_array(n).size for names in self.parameter_sets().values() for n in names)

    # ---------------- media paths ----------------

    def encode(self, payload: MediaPayload) -> EncoderOutput:
        """Forward-only encoding of one media payload to modality tokens."""
        if payload.kind == "image":
            return encode_image(payload, self.frozen)
        if payload.kind == "video":
            return encode_video(payload, self.frozen, self.qformers["video"])
        if payload.kind == "audio":
            return encode_audio(payload, self.frozen, self.qformers["audio"])
        raise ValueError(f"unknown media kind {payload.kind}")

    def adapt(self, kind: str, tokens: Union[Tensor, np.ndarray]) -> Tensor:
        """Project modality tokens into the LM embedding space."""
        x = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens))
        cfg = self.config
        expected = {"image": cfg.encoder.d_I, "video": cfg.encoder.d_V, "audio": cfg.encoder.d_A}[kind]
        if x.shape[-1] != expected:
            raise DimMismatch(f"{kind} adapter expects dim {expected}, got {x.shape[-1]}")
        if cfg.adapter_kind == "mlp":
            return feed_forward(self.store, f"adapters/{kind}", x)
        return linear(x, self.store[f"adapters/{kind}/w"], self.store[f"adapters/{kind}/b"])

    # ---------------- sequence assembly ----------------

    def assemble_segments(self, segments: Sequence[Tuple[str, object]]) -> MultimodalSequence:
        """Build a sequence from ("prompt", text) / ("target", text) /
        ("media", (kind, rows Tensor|EncoderOutput)) segments.

        Prompt and target text embed through the token table; media rows are
        adapter outputs spliced in place; the loss mask covers target
        characters and the closing EOS.
        """
        ids: List[np.ndarray] = [np.array([tok.BOS], dtype=np.int64)]
        mask: List[np.ndarray] = [np.zeros(1)]
        parts: List[Tensor] = []
        text_ids_buffer: List[np.ndarray] = []

        def flush_text():
            if text_ids_buffer:
                joined = np.concatenate(text_ids_buffer)
                parts.append(embedding(self.store["llm/tok_embed"], joined))
                text_ids_buffer.clear()

        text_ids_buffer.append(ids[0])
        for kind, payload in segments:
            if kind in ("prompt", "target"):
                t_ids = self.tokenizer.tokenize(payload)
                if t_ids.size == 0:
                    continue
                ids.append(t_ids)
                mask.append(np.full(t_ids.size, 1.0 if kind == "target" else 0.0))
                text_ids_buffer.append(t_ids)
            elif kind == "media":
                media_kind, rows = payload
                if isinstance(rows, EncoderOutput):
                    if rows.modality != media_kind:
                        raise SlotMismatch(f"slot {media_kind} filled with {rows.modality} output")
                    rows = self.adapt(media_kind, rows.tokens)
                if rows.shape[-1] != self.config.d_llm:
                    raise DimMismatch(f"media rows must be d_llm={self.config.d_llm}, got {rows.shape[-1]}")
                flush_text()
                parts.append(rows)
                ids.append(np.full(rows.shape[0], tok.MEDIA_TOKEN_BY_KIND[media_kind], dtype=np.int64))
                mask.append(np.zeros(rows.shape[0]))
            else:
                raise ValueError(f"unknown segment kind {kind}")
        eos = np.array([tok.EOS], dtype=np.int64)
        ids.append(eos)
        mask.append(np.ones(1))
        text_ids_buffer.append(eos)
        flush_text()

        token_ids = np.concatenate(ids)
        loss_mask = np.concatenate(mask)
        if len(token_ids) > self.config.context:
            raise ValueError(f"sequence length {len(token_ids)} exceeds context {self.config.context}")
        embeddings = parts[0] if len(parts) == 1 else concat(parts, axis=0)
        return MultimodalSequence(token_ids, loss_mask, embeddings)

    def assemble(self, prompt: str, encoder_outputs: Sequence[EncoderOutput],
                 target_text: str = "") -> MultimodalSequence:
        """Splice encoder outputs into the prompt's media slots, append target."""
        parts = tok.split_media_markers(prompt)
        slots = [p for p in parts if p[0] == "media"]
        if len(slots) != len(encoder_outputs):
            raise SlotMismatch(f"{len(slots)} media slots but {len(encoder_outputs)} encoder outputs")
        outputs = list(encoder_outputs)
        segments: List[Tuple[str, object]] = []
        for kind, value in parts:
            if kind == "text":
                segments.append(("prompt", value))
            else:
                segments.append(("media", (value, outputs.pop(0))))
        if target_text:
            segments.append(("target", target_text))
        return self.assemble_segments(segments)

    # ---------------- LM forward / loss / generation ----------------

    def lm_forward(self, emb: Tensor, key_valid: Optional[np.ndarray] = None) -> Tensor:
        """Causal decoder over content embeddings; returns (B, L, vocab) logits."""
        single = emb.data.ndim == 2
        if single:
            emb = add(emb, Tensor(np.zeros((1,) + emb.shape)))
        b, length, d = emb.shape
        if length > self.config.context:
            raise ValueError(f"sequence length {length} exceeds context {self.config.context}")
        x = add(emb, Tensor(self.posenc[:length]))
        mask = causal_mask(length)[None, None]
        if key_valid is not None:
            mask = mask + key_padding_mask(key_valid)
        for i in range(self.config.n_layers):
            bp = f"llm/block{i}"
            h = layer_norm_named(self.store, f"{bp}/ln1", x)
            x = add(x, multihead_attention(self.store, f"{bp}/attn", h, h, self.config.n_heads, mask))
            h = layer_norm_named(self.store, f"{bp}/ln2", x)
            x = add(x, feed_forward(self.store, f"{bp}/ff", h))
        x = layer_norm_named(self.store, "llm/final_ln", x)
        return linear(x, self.store["llm/out/w"], self.store["llm/out/b"])

    def sequence_nll(self, logits: Tensor, token_ids: np.ndarray, loss_mask: np.ndarray) -> Tensor:
        """Per-sample next-token NLL means; ids/mask shaped (B, L)."""
        token_ids = np.atleast_2d(token_ids)
        loss_mask = np.atleast_2d(loss_mask)
        shifted_targets = np.concatenate([token_ids[:, 1:], np.zeros((token_ids.shape[0], 1), dtype=np.int64)], axis=1)
        shifted_mask = np.concatenate([loss_mask[:, 1:], np.zeros((loss_mask.shape[0], 1))], axis=1)
        if np.any(shifted_mask.sum(axis=1) == 0):
            raise EmptyMask("sequence has no supervised positions")
        return masked_sequence_nll(logits, shifted_targets, shifted_mask)

    def lm_loss(self, sequence: MultimodalSequence) -> Tensor:
        """Mean NLL of the supervised positions of one sequence (scalar)."""
        if sequence.loss_mask.sum() == 0:
            raise EmptyMask("loss mask is all zeros")
        logits = self.lm_forward(sequence.embeddings)
        per_sample = self.sequence_nll(logits, sequence.token_ids[None], sequence.loss_mask[None])
        return tsum(per_sample)

    def generate(self, prompt: str, encoder_outputs: Sequence[EncoderOutput],
                 max_new_tokens: int = 48, mode: str = "greedy") -> str:
        """Greedy continuation of the assembled prompt; stops at EOS."""
        if mode != "greedy":
            raise ValueError("only greedy decoding is supported")
        with no_grad():
            seq = self.assemble(prompt, encoder_outputs)
            # drop the trailing EOS that assemble_segments appends: generation
            # continues from the bare prompt.
            emb = Tensor(seq.embeddings.data[:-1])
            out_ids: List[int] = []
            for _ in range(max_new_tokens):
                logits = self.lm_forward(emb)
                next_id = int(np.argmax(logits.data[0, -1]))
                if next_id == tok.EOS:
                    break
                out_ids.append(next_id)
                row = self.store["llm/tok_embed"].data[next_id][None]
                emb = Tensor(np.concatenate([emb.data, row], axis=0))
                if emb.shape[0] >= self.config.context:
                    break
        return self.tokenizer.detokenize(out_ids)

    def generate_batch(self, assembled: Sequence[MultimodalSequence], max_new_tokens: int = 48) -> List[str]:
        """Batched greedy decoding over right-padded prompts."""
        if not assembled:
            return []
        with no_grad():
            embs = [s.embeddings.data[:-1] for s in assembled]
            lengths = np.array([e.shape[0] for e in embs])
            b = len(embs)
            width = int(lengths.max()) + max_new_tokens
            d = self.config.d_llm
            canvas = np.zeros((b, width, d))
            for r, e in enumerate(embs):
                canvas[r, : e.shape[0]] = e
            valid = np.arange(width)[None, :] < lengths[:, None]
            done = np.zeros(b, dtype=bool)
            out_ids: List[List[int]] = [[] for _ in range(b)]
            table = self.store["llm/tok_embed"].data
            cursor = lengths.copy()
            for _ in range(max_new_tokens):
                if done.all() or cursor.max() >= min(width, self.config.context):
                    break
                span = int(cursor.max())
                logits = self.lm_forward(Tensor(canvas[:, :span]), key_valid=valid[:, :span]).data
                last = logits[np.arange(b), cursor - 1]
                next_ids = last.argmax(axis=1)
                for r in range(b):
                    if done[r]:
                        continue
                    nid = int(next_ids[r])
                    if nid == tok.EOS:
                        done[r] = True
                        continue
                    out_ids[r].append(nid)
                    canvas[r, cursor[r]] = table[nid]
                    valid[r, cursor[r]] = True
                    cursor[r] += 1
        return [self.tokenizer.detokenize(ids) for ids in out_ids]


# ---------------- checkpoints ----------------


def save_checkpoint(model: GroundingModel, path, extra: Optional[Dict] = None) -> None:
    """Single-archive checkpoint: config echo, set manifest, named arrays."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "parameter_sets": model.parameter_sets(),
        "extra": extra or {},
    }
    arrays = {name: model.parameter_array(name)
              for names in model.parameter_sets().values() for name in names}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    save_arrays(path, arrays)


def load_checkpoint(path) -> Tuple[GroundingModel, Dict]:
    """Rebuild a model from a checkpoint; validates the set partition."""
    arrays = load_arrays(path)
    if "__meta__" not in arrays:
        raise CheckpointError("missing checkpoint metadata")
    meta = json.loads(bytes(arrays.pop("__meta__")).decode("utf-8"))
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format_version')}")
    model = GroundingModel(ModelConfig.from_dict(meta["model_config"]))

    manifest = meta["parameter_sets"]
    names = [n for ns in manifest.values() for n in ns]
    if len(names) != len(set(names)):
        raise CheckpointError("parameter sets overlap")
    if set(names) != set(arrays):
        raise CheckpointError("checkpoint arrays do not match the set manifest")
    live = model.parameter_sets()
    for set_name in PARAM_SET_NAMES:
        if set_name not in manifest:
            raise CheckpointError(f"missing parameter set {set_name}")
        if set_name != "encoders" and sorted(manifest[set_name]) != live[set_name]:
            raise CheckpointError(f"parameter set {set_name} does not match the configured model")
    for name, arr in arrays.items():
        if name.startswith("encoders/"):
            model.frozen.matrices[name[len("encoders/"):]] = np.asarray(arr, dtype=np.float64)
        else:
            tensor = model.store[name]
            if tensor.data.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {name}")
            tensor.data = np.asarray(arr, dtype=np.float64)
    return model, meta.get("extra", {})
