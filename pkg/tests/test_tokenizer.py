import numpy as np
import pytest

from mmground import tokenizer as tok
from mmground.tokenizer import CharTokenizer, UnknownChar, split_media_markers


@pytest.fixture(scope="module")
def tk():
    return CharTokenizer()


def test_codec_output_tokenizes_losslessly(tk):
    s = "[0.100,0.200,0.300,0.400]"
    ids = tk.tokenize(s)
    assert len(ids) == len(s) == 25
    assert tk.detokenize(ids) == s


def test_empty_and_bos_eos(tk):
    assert tk.tokenize("").size == 0
    ids = tk.tokenize("", add_bos=True, add_eos=True)
    assert list(ids) == [tok.BOS, tok.EOS]


def test_unknown_char_reports_offset(tk):
    with pytest.raises(UnknownChar) as ei:
        tk.tokenize("abécd")
    assert ei.value.char == "é" and ei.value.offset == 2


def test_case_folding(tk):
    assert tk.detokenize(tk.tokenize("USER: Hello")) == "user: hello"


def test_roundtrip_random_incharset_strings(tk):
    rng = np.random.default_rng(0)
    chars = list(tok.CHARSET)
    for _ in range(1000):
        n = int(rng.integers(0, 60))
        s = "".join(rng.choice(chars) for _ in range(n))
        assert tk.detokenize(tk.tokenize(s)) == s


def test_bijective_tables(tk):
    assert len(tk.char_to_id) == len(set(tk.char_to_id.values()))
    for c, i in tk.char_to_id.items():
        assert tk.id_to_char[i] == c
    assert tk.vocab_size == len(tok.CHARSET) + tok.N_SPECIAL


def test_braces_and_question_marks_covered(tk):
    s = "{0.25,0.75}? <exp> is here: it's a box [0.1,0.2,0.3,0.4] - yes."
    assert tk.detokenize(tk.tokenize(s)) == s


def test_split_media_markers():
    parts = split_media_markers("user: <image> where is it? assistant:")
    assert parts == [("text", "user: "), ("media", "image"), ("text", " where is it? assistant:")]
    parts = split_media_markers("<audio> <image> what makes the sound?")
    assert parts[0] == ("media", "audio") and parts[2] == ("media", "image")
    assert split_media_markers("no media") == [("text", "no media")]
