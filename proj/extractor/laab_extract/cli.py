import argparse
import json
import logging
import sys


def read_records(path):
    records = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("id", "query", "l_r"):
                if key not in rec:
                    raise ValueError(f"line {n}: missing {key!r}")
            if rec["l_r"] not in (0, 1):
                raise ValueError(f"line {n}: l_r must be 0 or 1")
            records.append(rec)
    return records


def main(argv=None):
    ap = argparse.ArgumentParser(prog="laab-extract", description="Dump raw detector tensors from a causal LM.")
    ap.add_argument("--model", required=True, help="model id or local path")
    ap.add_argument("--records", required=True, help="JSONL with id, query, l_r and optional response")
    ap.add_argument("--out", required=True, help="output pack directory")
    ap.add_argument("--judgment-only", action="store_true", help="reuse the given responses, never generate")
    ap.add_argument("--max-new-tokens", type=int, default=64)
    ap.add_argument("--device", default="cpu")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    try:
        records = read_records(args.records)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    from transformers import AutoModelForCausalLM, AutoTokenizer

    from .extract import Job, run

    tok = AutoTokenizer.from_pretrained(args.model)
    model = AutoModelForCausalLM.from_pretrained(args.model, attn_implementation="eager", dtype="float32")
    model.to(args.device)
    job = Job(model, tok, args.model, args.max_new_tokens, args.judgment_only)
    try:
        kept, dropped = run(job, records, args.out)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {kept} samples to {args.out}, dropped {len(dropped)}")
    return 0 if kept else 2
