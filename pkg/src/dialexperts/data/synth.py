"""Deterministic synthetic corpora: coloured shapes, optionally moving, with true captions and QA.

Each corpus directory holds ``samples.jsonl`` (caption or dialog schema),
``scenes.jsonl`` (the generating parameters, used by :func:`verify_corpus`),
``vocab.json`` and one raw payload per sample under ``visual/``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .samples import NUM_CANDIDATES, CaptionSample, DialogSample, load_jsonl, write_jsonl
from .visual import read_visual, write_visual
from .vocab import Vocabulary, split_words

KINDS = ("stage1", "stage2", "stage3-video", "stage3-image")

PALETTE = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.3, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "purple": (0.6, 0.2, 0.8),
    "white": (0.95, 0.95, 0.95),
}
COLORS = tuple(PALETTE)
SHAPES = ("square", "circle", "triangle")
DIRECTIONS = ("left", "right", "up", "down")
COUNT_WORDS = ("zero", "one", "two", "three")
BACKGROUND = 0.1
CLIP_FRAMES = 8
_STEP = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}


@dataclass
class Obj:
    shape: str
    color: str
    cx: float
    cy: float
    radius: float
    direction: str | None
    speed: float

    def center(self, t: int) -> tuple[float, float]:
        if self.direction is None:
            return self.cx, self.cy
        dx, dy = _STEP[self.direction]
        return self.cx + dx * self.speed * t, self.cy + dy * self.speed * t


def shape_mask(obj: Obj, t: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cx, cy = obj.center(t)
    dx, dy, r = xx - cx, yy - cy, obj.radius
    if obj.shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if obj.shape == "circle":
        return dx * dx + dy * dy <= r * r
    # upward-pointing isosceles triangle
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2)


def render(objects: list[Obj], frames: int, size: int) -> np.ndarray:
    out = np.full((frames, 3, size, size), BACKGROUND, dtype=np.float32)
    for t in range(frames):
        for obj in objects:
            m = shape_mask(obj, t, size)
            for c in range(3):
                out[t, c][m] = PALETTE[obj.color][c]
    return out


# -- text templates -------------------------------------------------------------------

def caption_for(objects: list[Obj], is_video: bool) -> str:
    parts = []
    for o in objects:
        phrase = f"a {o.color} {o.shape}"
        if is_video:
            phrase += f" moves {o.direction}"
        parts.append(phrase)
    return " and ".join(parts) + " ."


def _count_answer(n: int) -> str:
    return "there is one object" if n == 1 else f"there are {COUNT_WORDS[n]} objects"


def questions_for(objects: list[Obj], is_video: bool, rng: np.random.Generator) -> list[tuple[str, str, list[str]]]:
    """All (question, answer, paraphrases) facts true for the scene."""
    qa = []
    for o in objects:
        qa.append((f"what color is the {o.shape}", f"it is {o.color}", [o.color, f"the {o.shape} is {o.color}"]))
        qa.append(
            (f"what shape is the {o.color} object", f"it is a {o.shape}", [f"a {o.shape}", f"it looks like a {o.shape}"])
        )
        if is_video:
            qa.append(
                (f"which way does the {o.shape} move", f"it moves {o.direction}", [o.direction, f"the {o.shape} moves {o.direction}"])
            )
    n = len(objects)
    qa.append(("how many objects are there", _count_answer(n), [COUNT_WORDS[n]]))
    present = {(o.color, o.shape) for o in objects}
    color, shape = COLORS[rng.integers(len(COLORS))], SHAPES[rng.integers(len(SHAPES))]
    if (color, shape) in present:
        qa.append((f"is there a {color} {shape}", "yes", ["yes there is"]))
    else:
        qa.append((f"is there a {color} {shape}", "no", ["no there is not"]))
    return qa


def answer_pool() -> list[str]:
    pool = []
    for c in COLORS:
        pool += [f"it is {c}", c]
    for s, c in itertools.product(SHAPES, COLORS):
        pool += [f"the {s} is {c}", f"a {c} {s}", f"it is a {c} {s}"]
    for s in SHAPES:
        pool += [f"it is a {s}", f"a {s}", f"it looks like a {s}", f"the {s} does not move"]
    for d in DIRECTIONS:
        pool += [f"it moves {d}", d]
        pool += [f"the {s} moves {d}" for s in SHAPES]
    pool += ["there is one object"] + [f"there are {w} objects" for w in COUNT_WORDS[2:]] + list(COUNT_WORDS[1:])
    pool += ["yes", "no", "yes there is", "no there is not", "i do not know", "maybe", "it stays still"]
    return list(dict.fromkeys(pool))


def lexicon() -> list[str]:
    """Every word any template can produce, in a fixed order."""
    words: dict[str, None] = {}
    texts = answer_pool() + ["question : answer :", ". and"]
    for c, s, d in itertools.product(COLORS, SHAPES, DIRECTIONS):
        texts += [
            f"a {c} {s} moves {d}",
            f"what color is the {s}",
            f"what shape is the {c} object",
            f"which way does the {s} move",
            f"is there a {c} {s}",
        ]
    texts += ["how many objects are there"]
    for t in texts:
        for w in split_words(t):
            words.setdefault(w, None)
    return list(words)


def default_vocab() -> Vocabulary:
    return Vocabulary(lexicon())


# -- scenes -----------------------------------------------------------------------------

def make_scene(rng: np.random.Generator, is_video: bool, size: int, frames: int) -> list[Obj]:
    n = 1 + int(rng.integers(2))
    shapes = rng.choice(len(SHAPES), size=n, replace=False)
    colors = rng.choice(len(COLORS), size=n, replace=False)
    band = size / n
    objects = []
    for k in range(n):
        radius = float(rng.uniform(0.08, 0.12) * size)
        direction = DIRECTIONS[rng.integers(len(DIRECTIONS))] if is_video else None
        speed = float(rng.uniform(0.8, 1.2) * size / 56) if is_video else 0.0
        travel = speed * (frames - 1)
        lo_y, hi_y = k * band + radius + 1, (k + 1) * band - radius - 1
        lo_x, hi_x = radius + 1, size - radius - 1
        dx, dy = _STEP[direction] if direction else (0, 0)
        # start so that the whole path stays inside the object's band
        x_range = (lo_x - min(0, dx) * travel, hi_x - max(0, dx) * travel)
        y_range = (lo_y - min(0, dy) * travel, hi_y - max(0, dy) * travel)
        cx = float(rng.uniform(*x_range)) if x_range[0] < x_range[1] else float(sum(x_range) / 2)
        cy = float(rng.uniform(*y_range)) if y_range[0] < y_range[1] else float(sum(y_range) / 2)
        objects.append(Obj(SHAPES[shapes[k]], COLORS[colors[k]], cx, cy, radius, direction, speed))
    return objects


def _candidates(answer: str, paraphrases: list[str], rng: np.random.Generator):
    pool = [a for a in answer_pool() if a != answer and a not in paraphrases]
    fill = NUM_CANDIDATES - 1 - len(paraphrases)
    picks = [pool[i] for i in rng.choice(len(pool), size=fill, replace=False)]
    cands = [answer] + paraphrases + picks
    rel = [1.0] + [0.5] * len(paraphrases) + [0.0] * fill
    order = rng.permutation(NUM_CANDIDATES)
    cands = [cands[i] for i in order]
    rel = [rel[i] for i in order]
    return cands, cands.index(answer), rel


def synth_corpus(seed: int, n: int, kind: str, out_dir, image_size: int = 56, clip_frames: int = CLIP_FRAMES) -> Path:
    """Write a deterministic corpus of ``n`` samples of ``kind`` to ``out_dir``."""
    if kind not in KINDS:
        raise ValueError(f"unknown corpus kind {kind!r}; choose from {KINDS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out_dir)
    try:
        (out / "visual").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: cannot create output directory ({exc.strerror})") from None
    kind_code = KINDS.index(kind)
    samples, scenes = [], []
    for i in range(n):
        rng = np.random.default_rng([seed, kind_code, i])
        if kind == "stage1":
            is_video = i % 2 == 0
        else:
            is_video = kind != "stage3-image"
        frames = clip_frames if is_video else 1
        objects = make_scene(rng, is_video, image_size, frames)
        sid = f"{kind}-{i:05d}"
        ref = f"visual/{sid}.bin"
        write_visual(out / ref, render(objects, frames, image_size))
        caption = caption_for(objects, is_video)
        scenes.append({"id": sid, "is_video": is_video, "objects": [asdict(o) for o in objects]})
        if kind == "stage1":
            samples.append(CaptionSample(sid, ref, is_video, caption))
            continue
        facts = questions_for(objects, is_video, rng)
        order = rng.permutation(len(facts))
        n_hist = min(len(facts) - 1, 2 + int(rng.integers(2)))
        history = [(facts[j][0], facts[j][1]) for j in order[:n_hist]]
        question, answer, paraphrases = facts[order[n_hist]]
        sample = DialogSample(sid, ref, is_video, caption, history, question, answer)
        if kind.startswith("stage3"):
            sample.candidates, sample.gt_index, sample.relevance = _candidates(answer, paraphrases, rng)
        samples.append(sample)
    write_jsonl(out / "samples.jsonl", samples)
    with (out / "scenes.jsonl").open("w", encoding="utf-8") as fh:
        for sc in scenes:
            fh.write(json.dumps(sc) + "\n")
    default_vocab().save(out / "vocab.json")
    return out


# -- verification ------------------------------------------------------------------------

def nearest_color(rgb) -> str:
    rgb = np.asarray(rgb, dtype=np.float64)
    return min(COLORS, key=lambda c: float(np.sum((np.asarray(PALETTE[c]) - rgb) ** 2)))


def _color_pixels(frame: np.ndarray, color: str) -> np.ndarray:
    target = np.asarray(PALETTE[color], dtype=np.float32)[:, None, None]
    return np.all(np.abs(frame - target) < 1e-3, axis=0)


def verify_corpus(out_dir) -> list[str]:
    """Re-derive every colour, direction and count answer from the pixels; return mismatches."""
    out = Path(out_dir)
    scenes = {}
    with (out / "scenes.jsonl").open(encoding="utf-8") as fh:
        for line in fh:
            sc = json.loads(line)
            scenes[sc["id"]] = [Obj(**o) for o in sc["objects"]]
    first = (out / "samples.jsonl").read_text(encoding="utf-8").splitlines()[0]
    schema = "dialog" if "question" in json.loads(first) else "caption"
    problems = []
    for s in load_jsonl(out / "samples.jsonl", schema):
        frames = read_visual(s.visual_path())
        objects = scenes[s.id]
        if schema == "caption":
            rounds = []
        else:
            rounds = list(s.history) + [(s.question, s.answer)]
        for q, a in rounds:
            words = q.split()
            if q.startswith("what color is the"):
                obj = next(o for o in objects if o.shape == words[-1])
                m = shape_mask(obj, 0, frames.shape[-1])
                seen = nearest_color(frames[0][:, m].mean(axis=1))
                if a != f"it is {seen}":
                    problems.append(f"{s.id}: '{q}' answered '{a}', pixels say {seen}")
            elif q.startswith("which way does the"):
                obj = next(o for o in objects if o.shape == words[-2])
                first_px = np.argwhere(_color_pixels(frames[0], obj.color)).mean(axis=0)
                last_px = np.argwhere(_color_pixels(frames[-1], obj.color)).mean(axis=0)
                dy, dx = last_px - first_px
                seen = ("right" if dx > 0 else "left") if abs(dx) > abs(dy) else ("down" if dy > 0 else "up")
                if a != f"it moves {seen}":
                    problems.append(f"{s.id}: '{q}' answered '{a}', pixels say {seen}")
            elif q == "how many objects are there":
                present = sum(bool(_color_pixels(frames[0], c).any()) for c in COLORS)
                if a != _count_answer(present):
                    problems.append(f"{s.id}: '{q}' answered '{a}', pixels show {present}")
    return problems
