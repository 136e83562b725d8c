"""CER, manifests and per-language report tables."""
from __future__ import annotations

import csv
import io
import json
import math
import unicodedata
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import kernels
from .dsp import Waveform
from .errors import ArgumentError, FormatError
from .frontend.romanize import LANGUAGES
from .speaker import secs


@dataclass
class NormalizerConfig:
    nfc: bool = True
    lowercase: bool = True
    strip_punct: bool = True
    collapse_ws: bool = True


def normalize_text(s: str, norm: NormalizerConfig = NormalizerConfig()) -> str:
    if norm.nfc:
        s = unicodedata.normalize("NFC", s)
    if norm.lowercase:
        s = s.lower()
    if norm.strip_punct:
        s = "".join(ch for ch in s if not unicodedata.category(ch).startswith("P"))
    if norm.collapse_ws:
        s = " ".join(s.split())
    return s


def cer(hypothesis: str, reference: str, norm: NormalizerConfig = NormalizerConfig()) -> float:
    """Character edit distance over reference length, after normalisation. May exceed 1."""
    ref = normalize_text(reference, norm)
    if not ref:
        raise ArgumentError("reference is empty after normalisation")
    hyp = normalize_text(hypothesis, norm)
    return kernels.edit_distance(hyp, ref) / len(ref)


# ------------------------------------------------------------------ manifest


@dataclass
class ManifestRecord:
    audio_path: str
    text: str
    language: str
    speaker_id: str
    duration_s: float
    id: str = ""

    def __post_init__(self):
        if not self.audio_path:
            raise FormatError("record with empty audio_path")
        if self.language not in LANGUAGES:
            raise FormatError(f"unsupported language {self.language!r}")
        if not (isinstance(self.duration_s, (int, float)) and self.duration_s > 0 and math.isfinite(self.duration_s)):
            raise FormatError(f"duration must be positive, got {self.duration_s!r}")
        self.duration_s = float(self.duration_s)
        if not self.id:
            self.id = Path(self.audio_path).stem


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    root: Optional[Path] = None

    def __len__(self):
        return len(self.records)

    def resolve(self, rec: ManifestRecord) -> Path:
        p = Path(rec.audio_path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records})

    def subset(self, keep) -> "Manifest":
        return Manifest([r for r in self.records if keep(r)], self.root)


_FIELDS = ("audio_path", "text", "language", "speaker_id", "duration_s")


def load_manifest(path) -> Manifest:
    path = Path(path)
    records = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{n}: invalid JSON ({e.msg})") from e
        missing = [k for k in _FIELDS if k not in obj]
        if missing:
            raise FormatError(f"{path}:{n}: missing field(s) {', '.join(missing)}")
        try:
            records.append(ManifestRecord(**{k: obj[k] for k in (*_FIELDS, "id") if k in obj}))
        except FormatError as e:
            raise FormatError(f"{path}:{n}: {e}") from e
    return Manifest(records, path.parent)


def save_manifest(m: Manifest, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in m.records:
            f.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")


def manifest_stats(m: Manifest) -> tuple[dict, float]:
    """Per-language hours and their total; exact-rounded sums."""
    per_lang: dict[str, list] = {}
    for r in m.records:
        per_lang.setdefault(r.language, []).append(r.duration_s)
    hours = {lang: math.fsum(v) / 3600 for lang, v in sorted(per_lang.items())}
    total = math.fsum(math.fsum(v) for v in per_lang.values()) / 3600
    return hours, total


def format_hours(x: float) -> str:
    return f"{round(x, 6):g}"


# -------------------------------------------------------------------- report


@dataclass
class ReportRow:
    language: str
    cer: Optional[float]
    secs: float
    n_utts: int


@dataclass
class EvalReport:
    rows: list
    avg_cer: Optional[float]
    avg_secs: float

    @classmethod
    def from_rows(cls, rows: Sequence[ReportRow]) -> "EvalReport":
        if not rows:
            return cls([], None, float("nan"))
        cers = [r.cer for r in rows if r.cer is not None]
        return cls(list(rows), math.fsum(cers) / len(cers) if cers else None,
                   math.fsum(r.secs for r in rows) / len(rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["language", "CER", "SECS", "n_utts"])
        for r in self.rows:
            w.writerow([r.language, "" if r.cer is None else f"{r.cer:.4f}", f"{r.secs:.4f}", r.n_utts])
        w.writerow(["average", "" if self.avg_cer is None else f"{self.avg_cer:.4f}", f"{self.avg_secs:.4f}", ""])
        return buf.getvalue()

    def to_markdown(self) -> str:
        def c(v):
            return "-" if v is None else f"{v:.4f}"
        lines = ["| Language | CER | SECS |", "|---|---|---|"]
        lines += [f"| {r.language} | {c(r.cer)} | {r.secs:.4f} |" for r in self.rows]
        lines.append(f"| Average | {c(self.avg_cer)} | {self.avg_secs:.4f} |")
        return "\n".join(lines) + "\n"


@dataclass
class SynthOutput:
    audio: Waveform
    reference_text: str
    reference_speaker: Waveform
    language: str
    id: str = ""


def load_transcripts(path) -> dict[str, str]:
    """JSON lines of ``{"id": ..., "text": ...}``."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if "id" not in obj or "text" not in obj:
            raise FormatError(f"{path}:{n}: transcript lines need id and text")
        out[str(obj["id"])] = obj["text"]
    return out


def evaluate(outputs: Sequence[SynthOutput], backend, transcripts: Optional[Sequence[str]] = None,
             norm: NormalizerConfig = NormalizerConfig()) -> EvalReport:
    """Per-language mean CER (when transcripts are given) and SECS, languages in canonical order."""
    if transcripts is not None and len(transcripts) != len(outputs):
        raise ArgumentError(f"{len(transcripts)} transcripts for {len(outputs)} outputs")
    by_lang: dict[str, dict] = {}
    for i, o in enumerate(outputs):
        acc = by_lang.setdefault(o.language, {"cer": [], "secs": []})
        acc["secs"].append(secs(o.audio, o.reference_speaker, backend))
        if transcripts is not None:
            acc["cer"].append(cer(transcripts[i], o.reference_text, norm))
    rows = []
    for lang in sorted(by_lang, key=lambda x: LANGUAGES.index(x) if x in LANGUAGES else len(LANGUAGES)):
        acc = by_lang[lang]
        rows.append(ReportRow(lang, math.fsum(acc["cer"]) / len(acc["cer"]) if acc["cer"] else None,
                              math.fsum(acc["secs"]) / len(acc["secs"]), len(acc["secs"])))
    return EvalReport.from_rows(rows)
