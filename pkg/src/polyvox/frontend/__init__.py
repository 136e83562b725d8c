"""Multilingual text frontend: romanization and BPE tokenization."""
from .bpe import (BOS_TEXT, EOS_TEXT, PAD, SPECIAL_TOKENS, UNK, WORD_MARK, BpeVocab, TokenSequence, decode, encode,
                  lang_token, normalize_words, train_bpe)
from .romanize import LANGUAGES, ROMANIZED, check_language, is_latin_only, romanize, romanize_counted

__all__ = [
    "BOS_TEXT", "EOS_TEXT", "PAD", "UNK", "SPECIAL_TOKENS", "WORD_MARK", "BpeVocab", "TokenSequence", "decode",
    "encode", "lang_token", "normalize_words", "train_bpe", "LANGUAGES", "ROMANIZED", "check_language",
    "is_latin_only", "romanize", "romanize_counted",
]
