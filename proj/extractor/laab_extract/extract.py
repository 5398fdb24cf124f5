"""Gather raw per-sample tensors from a causal language model."""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .pack import RawPackWriter, RawRecord, quantile_layers
from .prompts import (
    SegmentationError,
    collapse_verdict,
    judgment_pieces,
    response_pieces,
    segment_boundaries,
    synonym_ids,
)

log = logging.getLogger("laab_extract")


class DroppedRecord(Exception):
    pass


@dataclass
class Job:
    model: object
    tokenizer: object
    llm_name: str
    max_new_tokens: int = 64
    judgment_only: bool = False


def final_norm(model):
    for path in ("model.norm", "model.final_layernorm", "transformer.ln_f", "gpt_neox.final_layer_norm"):
        mod = model
        for part in path.split("."):
            mod = getattr(mod, part, None)
            if mod is None:
                break
        if mod is not None:
            return mod
    raise ValueError("cannot locate the final normalization layer")


class Lens:
    """Projects intermediate hidden states through the final norm and unembedding."""

    def __init__(self, model):
        self.norm = final_norm(model)
        self.head = model.get_output_embeddings()

    @torch.no_grad()
    def probs(self, hidden_states, logits, layer, positions):
        # the last entry of hidden_states is already normed, so use the real logits
        if layer == len(hidden_states) - 1:
            z = logits[0, positions]
        else:
            z = self.head(self.norm(hidden_states[layer][0, positions]))
        return torch.softmax(z.float(), dim=-1)


def ach2seg(attn, anchors, ranges):
    """attn: [L*H, S, S]. Mean attention from each anchor to each key range (0 for empty ranges)."""
    out = np.zeros((attn.shape[0], len(anchors), len(ranges[0])), dtype=np.float32)
    for a, (pos, segs) in enumerate(zip(anchors, ranges)):
        for s, (lo, hi) in enumerate(segs):
            if hi > lo:
                out[:, a, s] = attn[:, pos, lo:hi].mean(axis=1)
    return out


def stack_attn(attentions):
    # tuple of [1, H, S, S] per block -> [L*H, S, S]
    return torch.cat([a[0].float() for a in attentions], dim=0).cpu().numpy()


class Extractor:
    def __init__(self, job: Job):
        self.job = job
        self.model = job.model.eval()
        cfg = self.model.config
        self.layer_count = cfg.num_hidden_layers
        self.head_count = cfg.num_attention_heads
        self.hidden_dim = cfg.hidden_size
        self.layers = quantile_layers(self.layer_count)
        self.lens = Lens(self.model)
        self.yes_ids, self.no_ids = synonym_ids(job.tokenizer.get_vocab())
        if not self.yes_ids or not self.no_ids:
            raise ValueError("tokenizer vocabulary lacks yes or no synonyms")
        self.device = next(self.model.parameters()).device

    def encode(self, text, special=True):
        return self.job.tokenizer(text, add_special_tokens=special)["input_ids"]

    def forward(self, ids):
        x = torch.tensor([ids], device=self.device)
        with torch.no_grad():
            return self.model(input_ids=x, output_hidden_states=True, output_attentions=True)

    def response_ids(self, prompt_ids, response):
        if response is not None:
            return self.encode(response, special=False)
        if self.job.judgment_only:
            raise DroppedRecord("no response to reuse")
        x = torch.tensor([prompt_ids], device=self.device)
        with torch.no_grad():
            out = self.model.generate(
                input_ids=x,
                attention_mask=torch.ones_like(x),
                do_sample=False,
                max_new_tokens=self.job.max_new_tokens,
                pad_token_id=self.job.tokenizer.pad_token_id or self.job.tokenizer.eos_token_id,
            )
        ids = out[0, len(prompt_ids):].tolist()
        eos = self.job.tokenizer.eos_token_id
        if eos is not None and eos in ids:
            ids = ids[: ids.index(eos)]
        return ids

    def respond(self, query, response):
        pieces = response_pieces(query)
        ranges = segment_boundaries(self.encode, pieces)
        prompt = self.encode("".join(pieces))
        gen = self.response_ids(prompt, response)
        if not gen:
            raise DroppedRecord("empty response")
        p, n = len(prompt), len(gen)
        out = self.forward(prompt + gen)
        hs = out.hidden_states

        hidden = np.stack([hs[l][0, -1].float().cpu().numpy() for l in self.layers])
        logits = np.zeros((n, self.layer_count), dtype=np.float32)
        pos = list(range(p - 1, p + n - 1))
        tgt = torch.tensor(gen, device=self.device)
        for l in range(1, self.layer_count + 1):
            probs = self.lens.probs(hs, out.logits, l, pos)
            logits[:, l - 1] = probs[torch.arange(n), tgt].cpu().numpy()

        anchors = list(range(p, p + n))
        segs = [ranges + [(p, p + t)] for t in range(n)]
        attn = ach2seg(stack_attn(out.attentions), anchors, segs)
        text = response if response is not None else self.job.tokenizer.decode(gen, skip_special_tokens=True)
        return text, n, {"hidden_r": hidden, "logits_r": logits, "seg_attn_r": attn}

    def judge(self, query, response_text):
        pieces = judgment_pieces(query, response_text)
        ranges = segment_boundaries(self.encode, pieces)
        ids = self.encode("".join(pieces))
        out = self.forward(ids)
        hs, last = out.hidden_states, len(ids) - 1
        tok_id = int(out.logits[0, last].argmax())
        tok = self.job.tokenizer.convert_ids_to_tokens(tok_id)
        verdict = collapse_verdict(tok)
        if verdict is None:
            raise DroppedRecord(f"judgment token {tok!r} outside both synonym sets")

        hidden = np.stack([hs[l][0, last].float().cpu().numpy() for l in self.layers])
        yes = np.zeros(self.layer_count, dtype=np.float32)
        no = np.zeros(self.layer_count, dtype=np.float32)
        for l in range(1, self.layer_count + 1):
            probs = self.lens.probs(hs, out.logits, l, [last])[0]
            yes[l - 1] = probs[self.yes_ids].sum().item()
            no[l - 1] = probs[self.no_ids].sum().item()
        attn = ach2seg(stack_attn(out.attentions), [last], [ranges])
        return verdict, {"hidden_j": hidden, "yes_j": yes, "no_j": no, "seg_attn_j": attn}

    def sample(self, rec):
        text, n, tr = self.respond(rec["query"], rec.get("response"))
        verdict, tj = self.judge(rec["query"], text)
        return RawRecord(id=str(rec["id"]), l_r=int(rec["l_r"]), o_j=verdict, n_tokens_r=n, tensors={**tr, **tj})


def run(job: Job, records, out_dir):
    """Writes a raw pack; returns (kept, dropped) where dropped is [(id, reason)]."""
    if not records:
        raise ValueError("no input records")
    ex = Extractor(job)
    writer = RawPackWriter(out_dir, job.llm_name, ex.layer_count, ex.head_count, ex.hidden_dim)
    kept, dropped = 0, []
    for rec in records:
        try:
            writer.add(ex.sample(rec))
            kept += 1
        except (DroppedRecord, SegmentationError) as e:
            log.warning("dropping record %s: %s", rec.get("id"), e)
            dropped.append((str(rec.get("id")), str(e)))
    writer.close(
        {
            "extractor": {
                "quantile_layers": ex.layers,
                "max_new_tokens": job.max_new_tokens,
                "judgment_only": job.judgment_only,
                "dropped": [{"id": i, "reason": r} for i, r in dropped],
            }
        }
    )
    return kept, dropped
