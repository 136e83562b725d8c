"""Language-balanced batch sampling."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from ..errors import ArgumentError, ConfigError


class LanguageBalancer:
    """Draws each batch slot's language by weight, then the next record of that
    language from a per-language permutation that is reshuffled when exhausted.
    """

    def __init__(self, languages: list[str], seed: int = 0, weights: Optional[dict] = None):
        if not languages:
            raise ArgumentError("empty manifest")
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.pools: dict[str, list[int]] = {}
        for i, lang in enumerate(languages):
            self.pools.setdefault(lang, []).append(i)
        self.langs = sorted(self.pools)
        if weights:
            for lang, w in weights.items():
                if w > 0 and lang not in self.pools:
                    raise ConfigError(f"language {lang!r} has weight {w} but no samples")
            w = np.array([float(weights.get(lang, 0.0)) for lang in self.langs])
            if (w < 0).any() or w.sum() <= 0:
                raise ConfigError("language weights must be non-negative with a positive total")
        else:
            w = np.ones(len(self.langs))
        self.weights = w / w.sum()
        self._order = {lang: self.rng.permutation(self.pools[lang]) for lang in self.langs}
        self._pos = {lang: 0 for lang in self.langs}

    def _next_of(self, lang: str) -> int:
        if self._pos[lang] >= len(self._order[lang]):
            self._order[lang] = self.rng.permutation(self.pools[lang])
            self._pos[lang] = 0
        idx = int(self._order[lang][self._pos[lang]])
        self._pos[lang] += 1
        return idx

    def next_batch(self, batch_size: int) -> list[int]:
        picks = self.rng.choice(len(self.langs), size=batch_size, p=self.weights)
        return [self._next_of(self.langs[k]) for k in picks]


def balanced_batches(manifest, batch_size: int, seed: int = 0, weights: Optional[dict] = None) -> Iterator[list]:
    """Endless deterministic stream of record batches."""
    records = manifest.records if hasattr(manifest, "records") else list(manifest)
    if not records:
        raise ArgumentError("empty manifest")
    bal = LanguageBalancer([r.language for r in records], seed, weights)
    while True:
        yield [records[i] for i in bal.next_batch(batch_size)]
