"""Table-driven romanization for Korean, Japanese and Chinese.

Hangul is covered completely (algorithmic syllable decomposition, Revised
Romanization without sound-change rules). Japanese covers all kana plus a
small kanji list, Chinese a curated hanzi list; anything else in those three
languages becomes the fallback marker and is counted.
"""
from __future__ import annotations

import re
import unicodedata

LANGUAGES = ("en", "es", "fr", "de", "it", "pt", "pl", "tr", "ru", "nl", "cs", "ar", "zh-cn", "hu", "ko", "ja")
ROMANIZED = ("ko", "ja", "zh-cn")
DEFAULT_FALLBACK = "_"


def check_language(lang: str) -> str:
    from ..errors import ArgumentError

    if lang not in LANGUAGES:
        raise ArgumentError(f"unsupported language {lang!r}")
    return lang


# --------------------------------------------------------------------- Korean

_RR_INITIAL = ["g", "kk", "n", "d", "tt", "r", "m", "b", "pp", "s", "ss", "", "j", "jj", "ch", "k", "t", "p", "h"]
_RR_VOWEL = ["a", "ae", "ya", "yae", "eo", "e", "yeo", "ye", "o", "wa", "wae", "oe", "yo", "u", "wo", "we", "wi",
             "yu", "eu", "ui", "i"]
_RR_FINAL = ["", "k", "k", "k", "n", "n", "n", "t", "l", "k", "m", "l", "l", "l", "p", "l", "m", "p", "p", "t", "t",
             "ng", "t", "t", "k", "t", "p", "t"]


def _hangul_syllable(ch: str):
    code = ord(ch) - 0xAC00
    if not 0 <= code < 11172:
        return None
    return _RR_INITIAL[code // 588] + _RR_VOWEL[(code % 588) // 28] + _RR_FINAL[code % 28]


# ------------------------------------------------------------------- Japanese

_KANA_ROWS = {
    "あいうえお": ["a", "i", "u", "e", "o"],
    "かきくけこ": ["ka", "ki", "ku", "ke", "ko"],
    "がぎぐげご": ["ga", "gi", "gu", "ge", "go"],
    "さしすせそ": ["sa", "shi", "su", "se", "so"],
    "ざじずぜぞ": ["za", "ji", "zu", "ze", "zo"],
    "たちつてと": ["ta", "chi", "tsu", "te", "to"],
    "だぢづでど": ["da", "ji", "zu", "de", "do"],
    "なにぬねの": ["na", "ni", "nu", "ne", "no"],
    "はひふへほ": ["ha", "hi", "fu", "he", "ho"],
    "ばびぶべぼ": ["ba", "bi", "bu", "be", "bo"],
    "ぱぴぷぺぽ": ["pa", "pi", "pu", "pe", "po"],
    "まみむめも": ["ma", "mi", "mu", "me", "mo"],
    "らりるれろ": ["ra", "ri", "ru", "re", "ro"],
    "やゆよ": ["ya", "yu", "yo"],
    "わをん": ["wa", "o", "n"],
    "ぁぃぅぇぉ": ["a", "i", "u", "e", "o"],
    "ゔ": ["vu"],
}
_KANA = {}
for _row, _vals in _KANA_ROWS.items():
    for _k, _v in zip(_row, _vals):
        _KANA[_k] = _v
        _KANA[chr(ord(_k) + 0x60)] = _v  # katakana twin
_KANA["ヴ"] = "vu"

_YOON = {"ゃ": "a", "ゅ": "u", "ょ": "o"}
for _small in list(_YOON):
    _YOON[chr(ord(_small) + 0x60)] = _YOON[_small]
_YOON_STEM = {"shi": "sh", "chi": "ch", "ji": "j"}

# curated compound and single-character kanji readings, longest match first
_KANJI = {
    "今日は": "konnichiwa", "日本語": "nihongo", "日本": "nihon", "東京": "toukyou", "大学": "daigaku",
    "先生": "sensei", "学生": "gakusei", "今日": "kyou", "明日": "ashita", "時間": "jikan", "電話": "denwa",
    "世界": "sekai", "音楽": "ongaku", "言葉": "kotoba", "天気": "tenki", "元気": "genki",
    "私": "watashi", "人": "hito", "日": "hi", "本": "hon", "水": "mizu", "山": "yama", "川": "kawa",
    "大": "oo", "小": "chii", "中": "naka", "上": "ue", "下": "shita", "何": "nani", "猫": "neko", "犬": "inu",
    "車": "kuruma", "花": "hana", "雨": "ame", "月": "tsuki", "火": "hi", "木": "ki", "金": "kane", "土": "tsuchi",
    "語": "go", "話": "hanashi", "声": "koe", "音": "oto", "名": "na", "前": "mae", "後": "ato", "朝": "asa",
    "夜": "yoru", "年": "toshi", "一": "ichi", "二": "ni", "三": "san",
}
_KANJI_MAXLEN = max(len(k) for k in _KANJI)

# --------------------------------------------------------------------- Chinese

_PINYIN = {
    "你": "ni", "好": "hao", "我": "wo", "他": "ta", "她": "ta", "们": "men", "是": "shi", "的": "de",
    "不": "bu", "了": "le", "在": "zai", "有": "you", "人": "ren", "这": "zhe", "中": "zhong", "国": "guo",
    "大": "da", "小": "xiao", "上": "shang", "下": "xia", "来": "lai", "去": "qu", "说": "shuo", "会": "hui",
    "就": "jiu", "和": "he", "要": "yao", "也": "ye", "对": "dui", "很": "hen", "学": "xue", "生": "sheng",
    "时": "shi", "天": "tian", "年": "nian", "月": "yue", "日": "ri", "地": "di", "方": "fang", "家": "jia",
    "看": "kan", "听": "ting", "问": "wen", "语": "yu", "言": "yan", "文": "wen", "字": "zi", "音": "yin",
    "声": "sheng", "世": "shi", "界": "jie", "谢": "xie", "再": "zai", "见": "jian", "朋": "peng", "友": "you",
    "吃": "chi", "饭": "fan", "水": "shui", "喝": "he", "茶": "cha", "一": "yi", "二": "er", "三": "san",
    "四": "si", "五": "wu", "六": "liu", "七": "qi", "八": "ba", "九": "jiu", "十": "shi", "什": "shen",
    "么": "me", "名": "ming", "叫": "jiao", "早": "zao", "晚": "wan", "今": "jin", "明": "ming", "北": "bei",
    "京": "jing", "爱": "ai", "想": "xiang", "知": "zhi", "道": "dao", "能": "neng", "可": "ke", "以": "yi",
    "多": "duo", "少": "shao", "气": "qi", "雨": "yu", "电": "dian", "话": "hua", "车": "che", "猫": "mao",
}

_CJK_PUNCT = {"，": ", ", "。": ". ", "、": ", ", "！": "! ", "？": "? ", "：": ": ", "；": "; ", "「": '"', "」": '"',
              "『": '"', "』": '"', "（": "(", "）": ")", "～": "~", "・": " ", "　": " "}


def _is_plain(ch: str) -> bool:
    if ch.isspace() or (ch.isascii() and ch.isalnum()):
        return True
    return unicodedata.category(ch).startswith("P")


def is_latin_only(text: str) -> bool:
    return all(_is_plain(ch) for ch in text)


class _Emitter:
    """Collects romanized pieces; syllable pieces are space-separated from each other."""

    def __init__(self, spaced: bool):
        self.parts: list[str] = []
        self.spaced = spaced
        self.last_syllable = False

    def syllable(self, s: str):
        if self.spaced and self.last_syllable:
            self.parts.append(" ")
        self.parts.append(s)
        self.last_syllable = True

    def plain(self, s: str):
        if self.spaced and self.last_syllable and s.isalnum():
            self.parts.append(" ")
        self.parts.append(s)
        self.last_syllable = False

    def text(self) -> str:
        return re.sub(r"\s+", " ", "".join(self.parts)).strip()


def _romanize_ko(text, fallback, counter):
    out = _Emitter(spaced=False)
    for ch in text:
        syl = _hangul_syllable(ch)
        if syl is not None:
            out.syllable(syl)
        elif _is_plain(ch):
            out.plain(ch)
        elif ch in _CJK_PUNCT:
            out.plain(_CJK_PUNCT[ch])
        else:
            counter[0] += 1
            out.plain(fallback)
    return out.text()


def _romanize_zh(text, fallback, counter):
    out = _Emitter(spaced=True)
    for ch in text:
        if ch in _PINYIN:
            out.syllable(_PINYIN[ch])
        elif ch in _CJK_PUNCT:
            out.plain(_CJK_PUNCT[ch])
        elif _is_plain(ch):
            out.plain(ch)
        else:
            counter[0] += 1
            out.syllable(fallback)
    return out.text()


def _romanize_ja(text, fallback, counter):
    parts: list[str] = []
    i = 0
    geminate = False
    while i < len(text):
        ch = text[i]
        piece = None
        for n in range(min(_KANJI_MAXLEN, len(text) - i), 0, -1):
            if text[i:i + n] in _KANJI:
                piece = _KANJI[text[i:i + n]]
                i += n
                break
        if piece is None:
            i += 1
            if ch in ("っ", "ッ"):
                geminate = True
                continue
            if ch == "ー":
                vowel = next((c for c in reversed("".join(parts)) if c in "aeiou"), "")
                parts.append(vowel)
                continue
            if ch in _KANA:
                piece = _KANA[ch]
                if i < len(text) and text[i] in _YOON and len(piece) >= 2:
                    stem = _YOON_STEM.get(piece, piece[:-1] + "y")
                    piece = stem + _YOON[text[i]]
                    i += 1
            elif ch in _CJK_PUNCT:
                piece = _CJK_PUNCT[ch]
            elif _is_plain(ch):
                piece = ch
            else:
                counter[0] += 1
                piece = fallback
        if geminate and piece and piece[0].isalpha() and piece[0] not in "aeiou":
            piece = ("t" if piece.startswith("ch") else piece[0]) + piece
        geminate = False
        parts.append(piece)
    return re.sub(r"\s+", " ", "".join(parts)).strip()


def romanize_counted(text: str, lang: str, fallback: str = DEFAULT_FALLBACK) -> tuple[str, int]:
    """Romanize and report how many characters had no transliteration rule."""
    check_language(lang)
    text = unicodedata.normalize("NFC", text)
    counter = [0]
    if lang == "ko":
        text = _romanize_ko(text, fallback, counter)
    elif lang == "ja":
        text = _romanize_ja(text, fallback, counter)
    elif lang == "zh-cn":
        text = _romanize_zh(text, fallback, counter)
    return text, counter[0]


def romanize(text: str, lang: str, fallback: str = DEFAULT_FALLBACK) -> str:
    return romanize_counted(text, lang, fallback)[0]
