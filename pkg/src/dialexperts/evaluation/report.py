"""File-level NLG scoring: prediction and reference JSONL in, JSON and an aligned table out."""
from __future__ import annotations

import json
from pathlib import Path

from ..errors import DataError, SchemaError
from .nlg import nlg_scores


def _read(path, key: str, kind) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    rows = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
            raise SchemaError(f"{path}:{lineno}: missing required field 'id'")
        if not isinstance(obj.get(key), kind):
            raise SchemaError(f"{path}:{lineno}: field {key!r} must be {kind.__name__}")
        rows[obj["id"]] = obj[key]
    return rows


def load_predictions(path) -> dict[str, str]:
    return _read(path, "generated", str)


def load_references(path) -> dict[str, list[str]]:
    refs = _read(path, "references", list)
    for k, v in refs.items():
        if not v or not all(isinstance(r, str) for r in v):
            raise SchemaError(f"{path}: references for {k!r} must be a non-empty list of strings")
    return refs


def nlg_report(pred_path, ref_path) -> dict[str, float]:
    preds = load_predictions(pred_path)
    if not preds:
        raise DataError(f"{pred_path}: no predictions")
    refs = load_references(ref_path)
    missing = sorted(set(preds) - set(refs))
    if missing:
        raise DataError(f"{ref_path}: no references for ids {missing[:5]}")
    ids = sorted(preds)
    return nlg_scores([preds[i] for i in ids], [refs[i] for i in ids])


def format_table(metrics: dict[str, float], title: str = "") -> str:
    width = max(len(k) for k in metrics)
    lines = [title] if title else []
    lines += [f"{k:<{width}}  {v:8.4f}" for k, v in metrics.items()]
    return "\n".join(lines) + "\n"
