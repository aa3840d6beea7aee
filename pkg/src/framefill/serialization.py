"""Flat little-endian float32 payload with a JSON descriptor.

Shared on-disk format for latent grids and model checkpoints: ``<base>.json``
describes named arrays (name, shape, offset into the payload) plus free-form
metadata; ``<base>.bin`` holds the concatenated float32 values.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_TAG = "flat-f32-le-v1"


class PayloadError(Exception):
    pass


def write_payload(base: str | Path, arrays: Mapping[str, np.ndarray],
                  meta: Mapping[str, Any] | None = None) -> None:
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(base.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays.items():
            flat = np.ascontiguousarray(arr, dtype="<f4")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                            "size": int(flat.size)})
            fh.write(flat.tobytes())
            offset += int(flat.size)
    header = {"format": FORMAT_TAG, "arrays": entries, "meta": dict(meta or {})}
    base.with_suffix(".json").write_text(json.dumps(header, indent=2))


def read_payload(base: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    base = Path(base)
    try:
        header = json.loads(base.with_suffix(".json").read_text())
    except OSError as e:
        raise PayloadError(f"cannot read descriptor {base.with_suffix('.json')}: {e}") from e
    except json.JSONDecodeError as e:
        raise PayloadError(f"malformed descriptor {base.with_suffix('.json')}: {e}") from e
    if header.get("format") != FORMAT_TAG:
        raise PayloadError(f"unknown payload format {header.get('format')!r}")
    try:
        raw = base.with_suffix(".bin").read_bytes()
    except OSError as e:
        raise PayloadError(f"cannot read payload {base.with_suffix('.bin')}: {e}") from e

    values = np.frombuffer(raw, dtype="<f4")
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        lo, n = entry["offset"], entry["size"]
        if lo + n > values.size:
            raise PayloadError(f"payload truncated: array {entry['name']!r} out of range")
        arrays[entry["name"]] = values[lo : lo + n].reshape(entry["shape"]).copy()
    return arrays, header.get("meta", {})
