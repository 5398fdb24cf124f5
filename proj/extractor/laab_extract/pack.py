"""Raw-schema pack writer, byte-compatible with the C++ reader."""

import json
import os
from dataclasses import dataclass, field

import numpy as np

PACK_VERSION = 1
RAW_TENSORS = ("hidden_r", "hidden_j", "logits_r", "yes_j", "no_j", "seg_attn_r", "seg_attn_j")


def derive_lj(l_r: int, o_j: str) -> int:
    if l_r not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {l_r}")
    if o_j == "yes":
        return l_r
    if o_j == "no":
        return 1 - l_r
    raise ValueError(f"verdict must be 'yes' or 'no', got {o_j!r}")


@dataclass
class RawRecord:
    id: str
    l_r: int
    o_j: str
    n_tokens_r: int
    tensors: dict = field(default_factory=dict)


class RawPackWriter:
    def __init__(self, out_dir, llm_name, layer_count, head_count, hidden_dim):
        self.dir = out_dir
        self.manifest = {
            "version": PACK_VERSION,
            "llm_name": llm_name,
            "layer_count": layer_count,
            "head_count": head_count,
            "hidden_dim": hidden_dim,
            "schema": "raw",
            "dtype": "f32le",
            "seg_r": 4,
            "seg_j": 6,
            "sample_count": 0,
            "extra": {},
        }
        os.makedirs(out_dir, exist_ok=True)
        self._blob = open(os.path.join(out_dir, "tensors.bin"), "wb")
        self._recs = open(os.path.join(out_dir, "records.jsonl"), "w", encoding="utf-8")
        self._offset = 0
        self._ids = set()

    def add(self, rec: RawRecord):
        if rec.id in self._ids:
            raise ValueError(f"duplicate record id {rec.id!r}")
        missing = [n for n in RAW_TENSORS if n not in rec.tensors]
        if missing:
            raise ValueError(f"record {rec.id!r} lacks {missing}")
        self._ids.add(rec.id)
        entry = {
            "id": rec.id,
            "l_r": rec.l_r,
            "o_j": rec.o_j,
            "l_j": derive_lj(rec.l_r, rec.o_j),
            "n_tokens_r": rec.n_tokens_r,
            "tensors": {},
        }
        for name in RAW_TENSORS:
            arr = np.ascontiguousarray(rec.tensors[name], dtype="<f4")
            data = arr.tobytes(order="C")
            entry["tensors"][name] = {"offset": self._offset, "nbytes": len(data), "shape": list(arr.shape)}
            self._blob.write(data)
            self._offset += len(data)
        self._recs.write(json.dumps(entry, separators=(",", ":")) + "\n")
        self.manifest["sample_count"] += 1

    def close(self, extra=None):
        if extra:
            self.manifest["extra"].update(extra)
        self._blob.close()
        self._recs.close()
        with open(os.path.join(self.dir, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(self.manifest, f, indent=2)
            f.write("\n")


def quantile_layers(layer_count: int):
    if layer_count < 8:
        raise ValueError("need at least 8 blocks")
    return [-(-q * layer_count // 8) for q in range(1, 9)]
