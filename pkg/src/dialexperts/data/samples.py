"""Sample types and the JSONL readers/writers for caption and dialog files."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import DataError, SchemaError
from .vocab import split_words

NUM_CANDIDATES = 100


@dataclass
class CaptionSample:
    id: str
    visual_ref: str
    is_video: bool
    caption: str
    base_dir: str = field(default="", repr=False, compare=False)

    def visual_path(self) -> Path:
        return Path(self.base_dir) / self.visual_ref


@dataclass
class DialogSample:
    id: str
    visual_ref: str
    is_video: bool
    caption: str
    history: list[tuple[str, str]]
    question: str
    answer: str
    candidates: list[str] | None = None
    gt_index: int | None = None
    relevance: list[float] | None = None
    base_dir: str = field(default="", repr=False, compare=False)

    def visual_path(self) -> Path:
        return Path(self.base_dir) / self.visual_ref

    def context(self, max_tokens: int | None = None) -> str:
        return build_context(self.history, self.question, max_tokens)


def build_context(history, question: str, max_tokens: int | None = None) -> str:
    """Serialise history rounds and the current question.

    When ``max_tokens`` is set, the oldest rounds are dropped until the
    context fits; the current question is always kept.
    """
    tail = f"question: {question}"
    rounds = [f"question: {q} answer: {a}" for q, a in history]
    if max_tokens is not None:
        budget = max_tokens - len(split_words(tail))
        kept: list[str] = []
        for r in reversed(rounds):
            n = len(split_words(r))
            if n > budget:
                break
            kept.insert(0, r)
            budget -= n
        rounds = kept
    return " ".join(rounds + [tail])


def _require(obj: dict, key: str, kind, lineno: int, path):
    if key not in obj:
        raise SchemaError(f"{path}:{lineno}: missing required field {key!r}")
    value = obj[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise SchemaError(f"{path}:{lineno}: field {key!r} must be {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_caption(obj: dict, lineno: int, path, base: str) -> CaptionSample:
    sample = CaptionSample(
        id=_require(obj, "id", str, lineno, path),
        visual_ref=_require(obj, "visual", str, lineno, path),
        is_video=_require(obj, "is_video", bool, lineno, path),
        caption=_require(obj, "caption", str, lineno, path),
        base_dir=base,
    )
    if not sample.caption.strip():
        raise SchemaError(f"{path}:{lineno}: field 'caption' must be non-empty")
    return sample


def _parse_dialog(obj: dict, lineno: int, path, base: str) -> DialogSample:
    history_raw = _require(obj, "history", list, lineno, path)
    history = []
    for rnd in history_raw:
        if not (isinstance(rnd, list) and len(rnd) == 2 and all(isinstance(s, str) for s in rnd)):
            raise SchemaError(f"{path}:{lineno}: field 'history' must hold [question, answer] string pairs")
        history.append((rnd[0], rnd[1]))
    sample = DialogSample(
        id=_require(obj, "id", str, lineno, path),
        visual_ref=_require(obj, "visual", str, lineno, path),
        is_video=_require(obj, "is_video", bool, lineno, path),
        caption=_require(obj, "caption", str, lineno, path),
        history=history,
        question=_require(obj, "question", str, lineno, path),
        answer=_require(obj, "answer", str, lineno, path),
        base_dir=base,
    )
    if "candidates" in obj and obj["candidates"] is not None:
        cands = _require(obj, "candidates", list, lineno, path)
        if len(cands) != NUM_CANDIDATES or not all(isinstance(c, str) for c in cands):
            raise SchemaError(
                f"{path}:{lineno}: field 'candidates' must hold {NUM_CANDIDATES} strings, got {len(cands)}"
            )
        gt = _require(obj, "gt_index", int, lineno, path)
        if not 0 <= gt < len(cands):
            raise SchemaError(f"{path}:{lineno}: field 'gt_index' {gt} out of range")
        if cands[gt] != sample.answer:
            raise SchemaError(f"{path}:{lineno}: field 'gt_index' does not point at the answer")
        sample.candidates, sample.gt_index = cands, gt
        if obj.get("relevance") is not None:
            rel = _require(obj, "relevance", list, lineno, path)
            if len(rel) != len(cands):
                raise SchemaError(f"{path}:{lineno}: field 'relevance' length {len(rel)} != {len(cands)}")
            if not all(isinstance(r, (int, float)) and not isinstance(r, bool) and 0 <= r <= 1 for r in rel):
                raise SchemaError(f"{path}:{lineno}: field 'relevance' values must lie in [0, 1]")
            sample.relevance = [float(r) for r in rel]
    return sample


def load_jsonl(path, schema: str):
    """Parse a caption or dialog JSONL file into sample objects."""
    if schema not in ("caption", "dialog"):
        raise ValueError(f"unknown schema {schema!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    parse = _parse_caption if schema == "caption" else _parse_dialog
    base = str(path.parent)
    samples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise SchemaError(f"{path}:{lineno}: expected a JSON object")
            samples.append(parse(obj, lineno, path, base))
    return samples


def sample_to_json(sample) -> dict:
    d = asdict(sample)
    d.pop("base_dir")
    d["visual"] = d.pop("visual_ref")
    if isinstance(sample, DialogSample):
        d["history"] = [list(r) for r in sample.history]
        for key in ("candidates", "gt_index", "relevance"):
            if d[key] is None:
                d.pop(key)
    return {k: d[k] for k in _field_order(sample) if k in d}


def _field_order(sample):
    base = ["id", "visual", "is_video", "caption"]
    if isinstance(sample, DialogSample):
        base += ["history", "question", "answer", "candidates", "gt_index", "relevance"]
    return base


def write_jsonl(path, samples) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_json(s), ensure_ascii=False) + "\n")
