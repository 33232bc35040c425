"""Temporal prompt rendering and tokenization.

Prompts are templated sentences carrying modality, organ, and the
normalized slice position i/N. Numerals inside a fraction are quantized
into 17 timestamp bins (t_0 .. t_16) so a small trainable encoder sees
a closed, recurring token set instead of unbounded integers.
"""

import json
import re
import time
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

PAD_ID = 0
UNK_ID = 1
N_TIME_BINS = 17  # q = round(16 * i/N), q in 0..16

MODALITIES = ("MRI", "CT")

_TOKEN_RE = re.compile(r"[a-z0-9_]+|[^\sa-z0-9_]")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptSpec:
    modality: str
    organ: str
    slice_index: int
    slice_total: int
    include_time: bool = True

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise PromptError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if not self.organ or self.organ != self.organ.lower():
            raise PromptError(f"organ must be a non-empty lowercase string, got {self.organ!r}")
        if self.slice_total < 1:
            raise PromptError(f"slice_total must be >= 1, got {self.slice_total}")
        if not 1 <= self.slice_index <= self.slice_total:
            raise PromptError(
                f"slice_index must satisfy 1 <= i <= N, got i={self.slice_index} N={self.slice_total}"
            )


def render_prompt(spec: PromptSpec) -> str:
    """Render the prompt sentence for one slice."""
    article = "an" if spec.modality == "MRI" else "a"
    head = f"This is {article} {spec.modality} of the {spec.organ}"
    if spec.include_time:
        return f"{head} with a segmentation period of {spec.slice_index}/{spec.slice_total}."
    return f"{head}."


def render_batch(modality: str, organ: str, N: int,
                 include_time: bool = True) -> Tuple[List[str], List[float]]:
    """Render prompts for slices 1..N.

    Returns (prompts, per_prompt_seconds); the timings back the
    sub-millisecond generation claim.
    """
    if N < 1:
        raise PromptError(f"N must be >= 1, got {N}")
    prompts = []
    times = []
    for i in range(1, N + 1):
        t0 = time.perf_counter()
        prompts.append(render_prompt(PromptSpec(modality, organ, i, N, include_time)))
        times.append(time.perf_counter() - t0)
    return prompts, times


def quantize_timestamp(i: int, N: int) -> int:
    """Map i/N in (0, 1] to bin q = round(16 * i/N), half away from zero."""
    import math
    return int(math.floor(16.0 * i / N + 0.5))


class Vocabulary:
    """Dense token -> id map with reserved PAD=0 and UNK=1."""

    def __init__(self, tokens: Sequence[str]):
        self._ids: Dict[str, int] = {}
        for tok in tokens:
            if tok not in self._ids:
                self._ids[tok] = 2 + len(self._ids)

    def __len__(self):
        return 2 + len(self._ids)

    def __contains__(self, tok):
        return tok in self._ids

    def id_of(self, tok: str) -> int:
        return self._ids.get(tok, UNK_ID)

    @property
    def tokens(self) -> List[str]:
        return list(self._ids)

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens, "pad": PAD_ID, "unk": UNK_ID})

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        payload = json.loads(text)
        return cls(payload["tokens"])


def split_text(text: str) -> List[str]:
    """Lowercase and split on whitespace and punctuation, then replace
    numerals inside an i/N fraction with quantized timestamp tokens."""
    raw = _TOKEN_RE.findall(text.lower())
    out = []
    k = 0
    while k < len(raw):
        if (k + 2 < len(raw) and raw[k].isdigit() and raw[k + 1] == "/"
                and raw[k + 2].isdigit()):
            i, N = int(raw[k]), int(raw[k + 2])
            if 1 <= i <= N:
                out += [f"t_{quantize_timestamp(i, N)}", "/", f"t_{quantize_timestamp(N, N)}"]
                k += 3
                continue
        out.append(raw[k])
        k += 1
    return out


def build_vocabulary(corpus: Sequence[str]) -> Vocabulary:
    """Collect every token of the corpus; sorted insertion keeps ids
    stable across runs regardless of corpus ordering."""
    if not corpus:
        raise PromptError("corpus must be non-empty")
    seen = set()
    for text in corpus:
        seen.update(split_text(text))
    return Vocabulary(sorted(seen))


def default_corpus(organs: Sequence[str], modalities: Sequence[str] = MODALITIES) -> List[str]:
    """Both prompt templates over the given organs, with fractions
    chosen so every timestamp bin t_0 .. t_16 occurs."""
    corpus = []
    for m in modalities:
        for organ in organs:
            corpus.append(render_prompt(PromptSpec(m, organ, 1, 1, include_time=False)))
            corpus.append(render_prompt(PromptSpec(m, organ, 1, 64)))  # bin 0
            for i in range(1, 17):
                corpus.append(render_prompt(PromptSpec(m, organ, i, 16)))  # bins 1..16
    return corpus


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]

    def __len__(self):
        return len(self.ids)


def tokenize(text: str, vocab: Vocabulary, L: int) -> TokenSequence:
    """Token ids padded or truncated to exactly L."""
    if L < 1:
        raise PromptError(f"L must be >= 1, got {L}")
    ids = [vocab.id_of(tok) for tok in split_text(text)][:L]
    ids += [PAD_ID] * (L - len(ids))
    return TokenSequence(tuple(ids))
