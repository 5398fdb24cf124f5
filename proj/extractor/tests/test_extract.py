import json
import os
import subprocess

import numpy as np
import pytest
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, processors
from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast

from laab_extract import Job, collapse_verdict, derive_lj, quantile_layers, run, segment_boundaries, synonym_ids
from laab_extract.prompts import SegmentationError, judgment_pieces, response_pieces

LAAB = os.environ.get("LAAB_BIN")
VERDICT_CHARS = "YyNn"


def char_tokenizer():
    chars = ["<s>", "</s>", "\n"] + [chr(c) for c in range(32, 127)]
    vocab = {c: i for i, c in enumerate(chars)}
    tok = Tokenizer(models.WordLevel(vocab, unk_token=" "))
    tok.pre_tokenizer = pre_tokenizers.Split("", "isolated")
    tok.post_processor = processors.TemplateProcessing(single="<s> $A", special_tokens=[("<s>", 0)])
    tok.decoder = decoders.Fuse()
    return PreTrainedTokenizerFast(tokenizer_object=tok, bos_token="<s>", eos_token="</s>")


def tiny_model(tok, layers=8):
    torch.manual_seed(0)
    cfg = LlamaConfig(
        vocab_size=len(tok), hidden_size=32, intermediate_size=64, num_hidden_layers=layers,
        num_attention_heads=2, num_key_value_heads=2, max_position_embeddings=512,
        tie_word_embeddings=False, bos_token_id=0, eos_token_id=1,
    )
    model = LlamaForCausalLM(cfg)
    model.config._attn_implementation = "eager"
    # only verdict characters get nonzero logits, so greedy tokens always collapse
    with torch.no_grad():
        w = model.lm_head.weight
        keep = w[[tok.convert_tokens_to_ids(c) for c in VERDICT_CHARS]].clone()
        w.zero_()
        w[[tok.convert_tokens_to_ids(c) for c in VERDICT_CHARS]] = keep
    return model


def records():
    return [
        {"id": "a", "query": "Capital of France?", "l_r": 1},
        {"id": "b", "query": "Who wrote Hamlet?", "l_r": 0, "response": "Marlowe"},
        {"id": "c", "query": "2+2?", "l_r": 1},
    ]


def test_verdict_collapse():
    for t in ("Yes", "▁yes", "ĠTrue", "_CORRECT", "y"):
        assert collapse_verdict(t) == "yes"
    for t in ("No", "▁no", "ĠFalse", "incorrect", "N"):
        assert collapse_verdict(t) == "no"
    for t in ("Maybe", "▁Ye", "nope", ""):
        assert collapse_verdict(t) is None
    yes, no = synonym_ids({"▁Yes": 3, "No": 5, "the": 7, "ĠFALSE": 9})
    assert yes == [3] and no == [5, 9]


def test_lj_and_layers():
    assert [derive_lj(l, o) for l in (0, 1) for o in ("yes", "no")] == [0, 1, 1, 0]
    with pytest.raises(ValueError):
        derive_lj(1, "maybe")
    assert quantile_layers(8) == list(range(1, 9))
    assert quantile_layers(32) == [4, 8, 12, 16, 20, 24, 28, 32]
    assert quantile_layers(12) == [2, 3, 5, 6, 8, 9, 11, 12]


def test_segments_partition():
    tok = char_tokenizer()
    enc = lambda s: tok(s)["input_ids"]
    r = segment_boundaries(enc, response_pieces("Why?"))
    j = segment_boundaries(enc, judgment_pieces("Why?", "Because."))
    # the fourth response segment is the generated span, appended per anchor
    assert len(r) == 3 and len(j) == 6
    for ranges, text in ((r, "".join(response_pieces("Why?"))), (j, "".join(judgment_pieces("Why?", "Because.")))):
        assert ranges[0][0] == 0 and ranges[-1][1] == len(enc(text))
        assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))

    # a tokenizer that merges across the piece boundary
    merge = lambda s: [hash(w) for w in s.split(" ")]
    with pytest.raises(SegmentationError):
        segment_boundaries(merge, ["ab", "cd"])


def test_extract_pack(tmp_path):
    tok = char_tokenizer()
    model = tiny_model(tok)
    job = Job(model, tok, "tiny-llama", max_new_tokens=5)
    kept, dropped = run(job, records(), tmp_path / "p1")
    assert kept == 3 and dropped == []

    man = json.loads((tmp_path / "p1" / "manifest.json").read_text())
    assert man["schema"] == "raw" and man["layer_count"] == 8 and man["sample_count"] == 3
    blob = (tmp_path / "p1" / "tensors.bin").read_bytes()
    L, H = 8, 2
    for line in (tmp_path / "p1" / "records.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert rec["l_j"] == derive_lj(rec["l_r"], rec["o_j"])
        t = {k: np.frombuffer(blob, "<f4", int(np.prod(v["shape"])), v["offset"]).reshape(v["shape"])
             for k, v in rec["tensors"].items()}
        n = rec["n_tokens_r"]
        assert t["hidden_r"].shape == (8, 32) and t["logits_r"].shape == (n, L)
        assert t["seg_attn_r"].shape == (L * H, n, 4) and t["seg_attn_j"].shape == (L * H, 1, 6)
        assert (t["seg_attn_r"] >= 0).all() and (t["seg_attn_r"].sum(axis=2) > 0).all()
        assert (t["seg_attn_j"] > 0).all()
        assert (t["yes_j"] >= 0).all() and (t["yes_j"] + t["no_j"] <= 1 + 1e-6).all()
        # first response anchor has no preceding response tokens
        assert (t["seg_attn_r"][:, 0, 3] == 0).all()
        assert ((t["logits_r"] >= 0) & (t["logits_r"] <= 1)).all()

    run(job, records(), tmp_path / "p2")
    for f in ("records.jsonl", "tensors.bin", "manifest.json"):
        assert (tmp_path / "p1" / f).read_bytes() == (tmp_path / "p2" / f).read_bytes()

    if LAAB:
        out = subprocess.run([LAAB, "validate-pack", str(tmp_path / "p1")], capture_output=True, text=True)
        assert out.returncode == 0, out.stdout + out.stderr
        out = subprocess.run([LAAB, "derive", "--raw", str(tmp_path / "p1"), "--out", str(tmp_path / "d"),
                              "--feature", "attn"], capture_output=True, text=True)
        assert out.returncode == 0, out.stdout + out.stderr


def test_judgment_only(tmp_path):
    tok = char_tokenizer()
    job = Job(tiny_model(tok), tok, "tiny-llama", max_new_tokens=5, judgment_only=True)
    kept, dropped = run(job, records(), tmp_path / "p")
    assert kept == 1 and {d[0] for d in dropped} == {"a", "c"}
    man = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert len(man["extra"]["extractor"]["dropped"]) == 2
