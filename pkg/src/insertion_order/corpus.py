"""Vocabulary construction, parallel text loading and synthetic toy tasks."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

PAD, UNK, START, END, EOS = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<unk>", "<start>", "<end>", "<eos>")
NUM_SPECIALS = len(SPECIAL_TOKENS)

TASK_KINDS = ("copy", "reverse", "sort", "lexicon-translate")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Token/id bijection. Specials occupy ids 0..4, content tokens follow in id order."""

    tokens: tuple[str, ...]
    frequency: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.tokens[:NUM_SPECIALS] != SPECIAL_TOKENS:
            raise CorpusError("vocabulary must start with the special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("duplicate token in vocabulary")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_counts(cls, counts: Sequence[tuple[str, int]]) -> "Vocabulary":
        tokens = SPECIAL_TOKENS + tuple(t for t, _ in counts)
        freq = {t: 0 for t in SPECIAL_TOKENS}
        freq.update({t: int(c) for t, c in counts})
        return cls(tokens, freq)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def ids(self) -> dict[str, int]:
        return dict(self._ids)

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def freq(self, token: str) -> int:
        return self.frequency.get(token, 0)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._ids.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str | Path) -> None:
        lines = [f"{t}\t{self.freq(t)}\n" for t in self.tokens[NUM_SPECIALS:]]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        counts = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            token, sep, count = line.rpartition("\t")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: expected 'token<TAB>frequency'")
            counts.append((token, int(count)))
        return cls.from_counts(counts)


def build_vocabulary(corpus: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """Count tokens and order them by descending frequency.

    Ties keep first-occurrence order (``Counter`` preserves insertion order and
    ``sorted`` is stable). ``max_size`` bounds the number of content tokens; the
    five specials come on top of it.
    """
    counts: Counter[str] = Counter()
    seen_any = False
    for sentence in corpus:
        seen_any = True
        counts.update(sentence)
    if not seen_any or not counts:
        raise CorpusError("empty corpus")
    for tok in SPECIAL_TOKENS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: -kv[1])
    return Vocabulary.from_counts(ranked[:max_size])


@dataclass(frozen=True)
class ParallelExample:
    source: tuple[int, ...]
    target: tuple[int, ...]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str
    vocab_size: int
    min_len: int
    max_len: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise CorpusError(f"unknown task kind {self.kind!r}; expected one of {', '.join(TASK_KINDS)}")
        if not 1 <= self.min_len <= self.max_len:
            raise CorpusError("need 1 <= min_len <= max_len")
        if self.vocab_size < 2:
            raise CorpusError("vocab_size must be at least 2")


_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def synthetic_symbols(spec: SyntheticTaskSpec) -> list[str]:
    """Pronounceable, distinct token strings for the task's symbols.

    Symbol ``k`` stands for value ``k``; lengths (1-7 characters) and case vary so
    that length and alphabetical orders disagree with the value order.
    """
    rng = random.Random(f"symbols:{spec.seed}")
    out: list[str] = []
    seen: set[str] = set()
    while len(out) < spec.vocab_size:
        n = rng.randint(1, 7)
        word = "".join(rng.choice(_CONSONANTS if i % 2 == 0 else _VOWELS) for i in range(n))
        if rng.random() < 0.25:
            word = word.capitalize()
        if word not in seen:
            seen.add(word)
            out.append(word)
    return out


def synthetic_vocabulary(spec: SyntheticTaskSpec) -> Vocabulary:
    """Vocabulary in which symbol ``k`` has id ``NUM_SPECIALS + k`` (frequencies unset)."""
    return Vocabulary.from_counts([(s, 0) for s in synthetic_symbols(spec)])


def lexicon_permutation(spec: SyntheticTaskSpec) -> list[int]:
    perm = list(range(spec.vocab_size))
    random.Random(spec.seed).shuffle(perm)
    return perm


def generate_synthetic(spec: SyntheticTaskSpec, n: int) -> list[ParallelExample]:
    """Draw ``n`` examples; ids are in ``synthetic_vocabulary(spec)`` numbering."""
    if n < 1:
        raise CorpusError("n must be >= 1")
    rng = random.Random(spec.seed)
    perm = lexicon_permutation(spec) if spec.kind == "lexicon-translate" else None
    examples = []
    for _ in range(n):
        length = rng.randint(spec.min_len, spec.max_len)
        values = [rng.randrange(spec.vocab_size) for _ in range(length)]
        if spec.kind == "copy":
            out = list(values)
        elif spec.kind == "reverse":
            out = values[::-1]
        elif spec.kind == "sort":
            out = sorted(values)
        else:
            out = [perm[v] for v in values]
        examples.append(ParallelExample(
            tuple(v + NUM_SPECIALS for v in values),
            tuple(v + NUM_SPECIALS for v in out),
        ))
    return examples


def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc


def iter_tokenized(path: str | Path) -> Iterator[list[str]]:
    for line in _read_lines(path):
        yield line.split()


def load_parallel(src_path: str | Path, tgt_path: str | Path, vocab: Vocabulary) -> list[ParallelExample]:
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"line count mismatch: {src_path} has {len(src_lines)}, {tgt_path} has {len(tgt_lines)}"
        )
    examples = []
    for lineno, (s, t) in enumerate(zip(src_lines, tgt_lines), 1):
        src, tgt = s.split(), t.split()
        if not src or not tgt:
            raise CorpusError(f"empty sentence at line {lineno}")
        examples.append(ParallelExample(tuple(vocab.encode(src)), tuple(vocab.encode(tgt))))
    return examples


def write_parallel(examples: Sequence[ParallelExample], vocab: Vocabulary,
                   src_path: str | Path, tgt_path: str | Path) -> None:
    Path(src_path).write_text(
        "".join(" ".join(vocab.decode(ex.source)) + "\n" for ex in examples), encoding="utf-8")
    Path(tgt_path).write_text(
        "".join(" ".join(vocab.decode(ex.target)) + "\n" for ex in examples), encoding="utf-8")
