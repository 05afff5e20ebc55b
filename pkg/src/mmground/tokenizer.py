"""Character-level tokenizer.

Coordinates and timestamps are ordinary characters here: digits, dot,
brackets and braces are all first-class vocabulary, so grounding targets
need no dedicated coordinate tokens. Input is case-folded before lookup.
"""

from __future__ import annotations

from typing import List

import numpy as np

# '<' and '>' are plain characters; media placeholders like "<image>" are
# split out by sequence assembly before tokenization, never tokenized.
CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789 .,[]{}?<>:-'"

PAD, BOS, EOS, MEDIA_IMAGE, MEDIA_VIDEO, MEDIA_AUDIO = range(6)
SPECIAL_NAMES = {PAD: "<pad>", BOS: "<bos>", EOS: "<eos>",
                 MEDIA_IMAGE: "<image>", MEDIA_VIDEO: "<video>", MEDIA_AUDIO: "<audio>"}
N_SPECIAL = len(SPECIAL_NAMES)

MEDIA_TOKEN_BY_KIND = {"image": MEDIA_IMAGE, "video": MEDIA_VIDEO, "audio": MEDIA_AUDIO}
MEDIA_MARKERS = {"<image>": "image", "<video>": "video", "<audio>": "audio"}


class UnknownChar(ValueError):
    def __init__(self, char: str, offset: int):
        super().__init__(f"character {char!r} at offset {offset} is not in the charset")
        self.char = char
        self.offset = offset


class CharTokenizer:
    """Bijective char<->id tables over a fixed charset plus special symbols."""

    def __init__(self):
        self.char_to_id = {c: N_SPECIAL + i for i, c in enumerate(CHARSET)}
        self.id_to_char = {i: c for c, i in self.char_to_id.items()}
        self.vocab_size = N_SPECIAL + len(CHARSET)

    def tokenize(self, text: str, add_bos: bool = False, add_eos: bool = False) -> np.ndarray:
        folded = text.lower()
        ids: List[int] = [BOS] if add_bos else []
        for offset, ch in enumerate(folded):
            try:
                ids.append(self.char_to_id[ch])
            except KeyError:
                raise UnknownChar(ch, offset) from None
        if add_eos:
            ids.append(EOS)
        return np.asarray(ids, dtype=np.int64)

    def detokenize(self, ids) -> str:
        return "".join(self.id_to_char.get(int(i), "") for i in ids)


def split_media_markers(text: str) -> List[tuple]:
    """Split text into ("text", s) and ("media", kind) parts, in order."""
    parts: List[tuple] = []
    rest = text
    while rest:
        hits = [(rest.find(marker), marker) for marker in MEDIA_MARKERS]
        hits = [(pos, marker) for pos, marker in hits if pos >= 0]
        if not hits:
            parts.append(("text", rest))
            break
        pos, marker = min(hits)
        if pos > 0:
            parts.append(("text", rest[:pos]))
        parts.append(("media", MEDIA_MARKERS[marker]))
        rest = rest[pos + len(marker):]
    return parts
