"""Prompt templates, context segmentation and verdict synonyms."""

RESPONSE_PIECES = ("Answer the question concisely:\n", "Q: {query}\n", "A: ")

JUDGMENT_PIECES = (
    "Given the following QA pair:\n",
    "Q: {query}\n",
    "A: {response}\n",
    "Does the answer above reflect the facts?\n",
    'Please respond with one of the following labels: "Yes" or "No".\n',
    "Answer: ",
)

_STEMS_YES = ("Yes", "yes", "YES", "Y", "y", "True", "true", "TRUE", "Correct", "correct", "CORRECT")
_STEMS_NO = ("No", "no", "NO", "N", "n", "False", "false", "FALSE", "Incorrect", "incorrect", "INCORRECT")

# "_" stands for the word-boundary marker of the tokenizer
YES_TOKENS = frozenset(_STEMS_YES + tuple("_" + s for s in _STEMS_YES))
NO_TOKENS = frozenset(_STEMS_NO + tuple("_" + s for s in _STEMS_NO))

_BOUNDARY_MARKERS = ("▁", "Ġ")  # sentencepiece, byte-level BPE


class SegmentationError(ValueError):
    pass


def normalize_token(tok: str) -> str:
    for m in _BOUNDARY_MARKERS:
        if tok.startswith(m):
            return "_" + tok[len(m):]
    if tok.startswith(" "):
        return "_" + tok[1:]
    return tok


def collapse_verdict(tok: str):
    t = normalize_token(tok)
    if t in YES_TOKENS:
        return "yes"
    if t in NO_TOKENS:
        return "no"
    return None


def synonym_ids(vocab: dict):
    """Token ids of the yes and no lists present in a {token: id} vocabulary."""
    yes, no = [], []
    for tok, idx in vocab.items():
        t = normalize_token(tok)
        if t in YES_TOKENS:
            yes.append(idx)
        elif t in NO_TOKENS:
            no.append(idx)
    return sorted(yes), sorted(no)


def response_pieces(query: str):
    return [RESPONSE_PIECES[0], RESPONSE_PIECES[1].format(query=query), RESPONSE_PIECES[2]]


def judgment_pieces(query: str, response: str):
    return [
        JUDGMENT_PIECES[0],
        JUDGMENT_PIECES[1].format(query=query),
        JUDGMENT_PIECES[2].format(response=response),
        *JUDGMENT_PIECES[3:],
    ]


def segment_boundaries(encode, pieces):
    """Token ranges of each piece inside encode("".join(pieces)).

    encode maps text to a list of ids (special tokens included). Boundaries
    come from tokenizing growing prefixes; a prefix whose ids are not a prefix
    of the next one means the tokenizer merged across a piece boundary.
    """
    if not pieces:
        raise SegmentationError("no pieces")
    full = encode("".join(pieces))
    ranges, start, text = [], 0, ""
    for i, piece in enumerate(pieces):
        text += piece
        ids = encode(text)
        if ids != full[: len(ids)]:
            raise SegmentationError(f"piece {i} does not end on a token boundary")
        if len(ids) <= start:
            raise SegmentationError(f"piece {i} is empty after tokenization")
        ranges.append((start, len(ids)))
        start = len(ids)
    if start != len(full):
        raise SegmentationError("ranges do not cover the context")
    return ranges
