"""Character-level BPE with language-tag tokens.

Text is romanized, NFC-normalised and lowercased; every word is prefixed with
``WORD_MARK`` so whitespace survives a decode.
"""
from __future__ import annotations

import heapq
import unicodedata
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..errors import ArgumentError, FormatError
from .romanize import DEFAULT_FALLBACK, LANGUAGES, check_language, romanize

WORD_MARK = "▁"
PAD, BOS_TEXT, EOS_TEXT, UNK = "[PAD]", "[BOS_TEXT]", "[EOS_TEXT]", "[UNK]"
SPECIAL_TOKENS = (PAD, BOS_TEXT, EOS_TEXT, UNK) + tuple(f"[{lang}]" for lang in LANGUAGES)
FORMAT_VERSION = 1


def lang_token(lang: str) -> str:
    return f"[{check_language(lang)}]"


def normalize_words(text: str, lang: str, fallback: str = DEFAULT_FALLBACK) -> list[str]:
    text = unicodedata.normalize("NFC", romanize(text, lang, fallback)).lower()
    return [WORD_MARK + w for w in text.split()]


@dataclass
class TokenSequence:
    ids: list[int]
    language: str

    def __len__(self):
        return len(self.ids)


@dataclass
class BpeVocab:
    tokens: list[str]
    merges: list[tuple[str, str]]
    n_base: int
    fallback: str = DEFAULT_FALLBACK
    truncated: bool = False
    _index: dict = field(default=None, init=False, repr=False, compare=False)
    _ranks: dict = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise FormatError("duplicate token strings in vocab")
        if tuple(self.tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise FormatError("special tokens must occupy the lowest ids")
        for a, b in self.merges:
            if a + b not in self._index:
                raise FormatError(f"merge output {a + b!r} missing from tokens")
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}

    def __len__(self):
        return len(self.tokens)

    @property
    def n_special(self) -> int:
        return len(SPECIAL_TOKENS)

    def id(self, token: str) -> int:
        return self._index[token]

    @property
    def bos_id(self) -> int:
        return self._index[BOS_TEXT]

    @property
    def eos_id(self) -> int:
        return self._index[EOS_TEXT]

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    def _bpe_word(self, word: str) -> list[str]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        syms = list(word)
        while len(syms) > 1:
            best = None
            for i in range(len(syms) - 1):
                r = self._ranks.get((syms[i], syms[i + 1]))
                if r is not None and (best is None or r < best):
                    best = r
            if best is None:
                break
            a, b = self.merges[best]
            merged = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == a and syms[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            syms = merged
        self._cache[word] = syms
        return syms

    # ------------------------------------------------------------ file format

    def dumps(self) -> str:
        header = (f"#polyvox-bpe v{FORMAT_VERSION} tokens={len(self.tokens)} merges={len(self.merges)} "
                  f"specials={self.n_special} base={self.n_base} fallback={self.fallback}")
        lines = [header, *self.tokens, *(f"{a} {b}" for a, b in self.merges)]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeVocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"), str(path))

    @classmethod
    def loads(cls, text: str, path: str = "<vocab>") -> "BpeVocab":
        lines = text.split("\n")
        head = lines[0].split(" ")
        if len(head) < 2 or head[0] != "#polyvox-bpe" or head[1] != f"v{FORMAT_VERSION}":
            raise FormatError(f"{path}: not a polyvox BPE vocab (v{FORMAT_VERSION})")
        try:
            meta = dict(kv.split("=", 1) for kv in head[2:])
            n_tok, n_merge = int(meta["tokens"]), int(meta["merges"])
            n_base = int(meta["base"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad header") from exc
        body = lines[1:]
        if len(body) < n_tok + n_merge:
            raise FormatError(f"{path}: truncated vocab file")
        tokens = body[:n_tok]
        merges = []
        for line in body[n_tok:n_tok + n_merge]:
            a, sep, b = line.partition(" ")
            if not sep:
                raise FormatError(f"{path}: bad merge line {line!r}")
            merges.append((a, b))
        return cls(tokens, merges, n_base, fallback=meta.get("fallback", DEFAULT_FALLBACK))


def train_bpe(corpus: Iterable[tuple[str, str]], target_size: int,
              fallback: str = DEFAULT_FALLBACK) -> BpeVocab:
    """Classic merge loop: most frequent adjacent pair, ties by lexicographic pair."""
    word_freq: Counter = Counter()
    for text, lang in corpus:
        word_freq.update(normalize_words(text, lang, fallback))
    if not word_freq:
        raise ArgumentError("empty BPE training corpus")

    base = sorted({ch for w in word_freq for ch in w})
    tokens = list(SPECIAL_TOKENS) + base
    if target_size < len(tokens):
        raise ArgumentError(f"target size {target_size} below specials+base characters ({len(tokens)})")
    known = set(tokens)

    words = [list(w) for w in word_freq]
    freqs = [word_freq[w] for w in word_freq]
    pair_count: dict = defaultdict(int)
    pair_where: dict = defaultdict(set)
    for wi, syms in enumerate(words):
        for p in zip(syms, syms[1:]):
            pair_count[p] += freqs[wi]
            pair_where[p].add(wi)
    heap = [(-c, p) for p, c in pair_count.items()]
    heapq.heapify(heap)
    blocked = set()

    merges: list[tuple[str, str]] = []
    while len(tokens) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        if pair in blocked or pair_count.get(pair, 0) != -neg or neg == 0:
            continue
        new = pair[0] + pair[1]
        if new in known:
            # another merge path already produced this string
            blocked.add(pair)
            continue
        merges.append(pair)
        tokens.append(new)
        known.add(new)
        touched = set()
        for wi in sorted(pair_where.pop(pair)):
            syms = words[wi]
            f = freqs[wi]
            for p in zip(syms, syms[1:]):
                pair_count[p] -= f
                touched.add(p)
            merged = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == pair[0] and syms[i + 1] == pair[1]:
                    merged.append(new)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            words[wi] = merged
            for p in zip(merged, merged[1:]):
                pair_count[p] += f
                pair_where[p].add(wi)
                touched.add(p)
        for p in touched:
            c = pair_count[p]
            if c <= 0:
                pair_count.pop(p, None)
                pair_where.pop(p, None)
            elif p != pair:
                heapq.heappush(heap, (-c, p))
        pair_count.pop(pair, None)

    vocab = BpeVocab(tokens, merges, n_base=len(base), fallback=fallback)
    if len(tokens) < target_size:
        vocab.truncated = True
        warnings.warn(f"BPE corpus exhausted at {len(tokens)} tokens (target {target_size})")
    return vocab


def encode(text: str, lang: str, vocab: BpeVocab) -> TokenSequence:
    words = normalize_words(text, lang, vocab.fallback)
    if not words:
        raise ArgumentError("text is empty after normalisation")
    unk = vocab.id(UNK)
    ids = [vocab.id(lang_token(lang))]
    for w in words:
        ids.extend(vocab._index.get(s, unk) for s in vocab._bpe_word(w))
    return TokenSequence(ids, lang)


def decode(ids, vocab: BpeVocab) -> str:
    seq = ids.ids if isinstance(ids, TokenSequence) else list(ids)
    n = len(vocab)
    parts = []
    for i in seq:
        if not 0 <= i < n:
            raise ArgumentError(f"token id {i} outside vocab of size {n}")
        if i >= vocab.n_special:
            parts.append(vocab.tokens[i])
    return "".join(parts).replace(WORD_MARK, " ").strip()


