"""Small shared helpers: rounding, seeding, deterministic file I/O."""

from __future__ import annotations

import io
import json
import zipfile
import zlib
from pathlib import Path
from typing import Dict, Union

import numpy as np


def round_half_away(x):
    """Round half away from zero (repo-wide convention; numpy rounds half-even)."""
    x = np.asarray(x)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def derived_rng(seed: int, *key: Union[int, str]) -> np.random.Generator:
    """Independent generator for (seed, key); stable across runs."""
    parts = [seed & 0xFFFFFFFF]
    for k in key:
        if isinstance(k, str):
            parts.append(zlib.crc32(k.encode("utf-8")))
        else:
            parts.append(int(k) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(parts)))


def dump_json(obj, path: Union[str, Path]) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def load_json(path: Union[str, Path]):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# A fixed zip timestamp keeps archive bytes identical across runs; np.savez
# stamps entries with wall time, which breaks byte-level reproducibility.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> None:
    """Write named arrays as a deterministic compressed .npz-style archive."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED, compresslevel=6) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_arrays(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path, "r") as zf:
        for name in zf.namelist():
            with zf.open(name) as fh:
                out[name[:-4]] = np.lib.format.read_array(io.BytesIO(fh.read()))
    return out
