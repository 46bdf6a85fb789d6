"""Response parsing, the four verifiable rewards, and group-relative advantages."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .defaults import DEFAULTS, Defaults
from .errors import UsageError
from .geometry import Point2
from .keysteps import PERCEPTION_TYPES, KeyStep

_NUM = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_TAGS = ("<think>", "</think>", "<answer>", "</answer>")
_STRICT = re.compile(r"\A\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*\Z", re.DOTALL)
_STEP = re.compile(r"^\[(?P<type>[A-Za-z]+)\]\s*\[(?P<target>[^\[\]]+)\]\s*:\s*(?P<value>.+?)\s*$")
_STEP_HINT = re.compile(r"\[\s*(?:position|orientation|size)\s*\]", re.IGNORECASE)
_PAIR = rf"\(\s*({_NUM})\s*,\s*({_NUM})\s*\)"
_TRIPLE = rf"({_NUM})\s*,\s*({_NUM})\s*,\s*({_NUM})"
_SCALAR = rf"({_NUM})\s*(?:m|meters?)?"


def _bracketed(core: str) -> re.Pattern:
    """``core`` alone or wrapped in one balanced pair of square brackets."""
    return re.compile(rf"^(?:{core}|\[\s*{core}\s*\])$")


_POSITION = _bracketed(_PAIR)
_ORIENTATION = _bracketed(rf"(?:{_TRIPLE}|\(\s*{_TRIPLE}\s*\))")
_SIZE = _bracketed(_SCALAR)
_POINT = re.compile(rf"[\(\[]\s*({_NUM})\s*,\s*({_NUM})\s*[\)\]]")

UNIT_NORM_TOL = 0.01


@dataclass
class ParsedStep:
    raw: str
    perception_type: str | None = None
    target_text: str | None = None
    value: tuple | None = None

    @property
    def ok(self) -> bool:
        return self.value is not None


@dataclass
class ParsedResponse:
    think_text: str | None
    answer_text: str | None
    steps: list[ParsedStep] = field(default_factory=list)
    final_point: Point2 | None = None
    outcome_format_ok: bool = False
    process_format_ok: bool = False

    @property
    def malformed_steps(self) -> list[ParsedStep]:
        return [s for s in self.steps if not s.ok]


def _groups(m: re.Match) -> tuple[float, ...]:
    return tuple(float(g) for g in m.groups() if g is not None)


def _parse_value(kind: str, text: str) -> tuple | None:
    text = text.strip()
    if kind == "Position":
        m = _POSITION.match(text)
        if not m:
            return None
        x, y = _groups(m)
        return (x, y) if 0 <= x <= 1 and 0 <= y <= 1 else None
    if kind == "Orientation":
        m = _ORIENTATION.match(text)
        if not m:
            return None
        v = _groups(m)
        return v if abs(np.linalg.norm(v) - 1.0) <= UNIT_NORM_TOL else None
    m = _SIZE.match(text)
    if not m:
        return None
    (s,) = _groups(m)
    return (s,) if s > 0 and np.isfinite(s) else None


def parse_step_line(line: str) -> ParsedStep | None:
    """Parse one think line; returns None for prose that is not a step attempt."""
    stripped = line.strip()
    if not stripped or not (stripped.startswith("[") or _STEP_HINT.search(stripped)):
        return None
    step = ParsedStep(raw=stripped)
    m = _STEP.match(stripped)
    if not m or m.group("type") not in PERCEPTION_TYPES:
        return step
    target = m.group("target").strip()
    if not target:
        return step
    value = _parse_value(m.group("type"), m.group("value"))
    if value is None:
        return step
    step.perception_type, step.target_text, step.value = m.group("type"), target, value
    return step


def parse_final_point(answer: str | None) -> Point2 | None:
    if not answer:
        return None
    m = _POINT.search(answer)
    if not m:
        return None
    x, y = float(m.group(1)), float(m.group(2))
    if not (np.isfinite(x) and np.isfinite(y)):
        return None
    if 0 <= x <= 1 and 0 <= y <= 1:
        return Point2(x, y, "normalized")
    return Point2(x, y, "pixels")


def parse_response(text: str) -> ParsedResponse:
    """Total parser: never raises, failures show up in the flags."""
    if not isinstance(text, str):
        text = "" if text is None else str(text)
    outcome_ok = bool(_STRICT.match(text)) and all(text.count(t) == 1 for t in _TAGS)
    m = re.search(r"<think>(.*?)</think>", text, re.DOTALL)
    think = m.group(1) if m else None
    m = re.search(r"<answer>(.*?)</answer>", text, re.DOTALL)
    answer = m.group(1) if m else None
    steps = []
    if think:
        for line in think.splitlines():
            s = parse_step_line(line)
            if s is not None:
                steps.append(s)
    return ParsedResponse(
        think_text=think,
        answer_text=answer,
        steps=steps,
        final_point=parse_final_point(answer),
        outcome_format_ok=outcome_ok,
        process_format_ok=bool(steps) and all(s.ok for s in steps),
    )


@dataclass
class GroundTruthAnnotation:
    final_point: Point2  # pixels
    image_width: int
    image_height: int
    key_steps: list[KeyStep] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthAnnotation":
        u, v = d["point"]
        return cls(Point2(float(u), float(v)), int(d["width"]), int(d["height"]),
                   [KeyStep.from_dict(k) for k in d.get("key_steps", [])])


@dataclass
class RewardBreakdown:
    r_of: int
    r_p: int
    r_pf: int
    r_acc: float
    alpha: float
    total: float

    def to_dict(self) -> dict:
        return {"r_of": self.r_of, "r_p": self.r_p, "r_pf": self.r_pf, "r_acc": self.r_acc,
                "alpha": self.alpha, "total": self.total}


def outcome_format_reward(p: ParsedResponse) -> int:
    return int(p.outcome_format_ok)


def _l1_px(a: Point2, b: Point2, width: int, height: int) -> float:
    pa, pb = a.to_pixels(width, height), b.to_pixels(width, height)
    return abs(pa.x - pb.x) + abs(pa.y - pb.y)


def point_l1_reward(p: ParsedResponse, gt: GroundTruthAnnotation,
                    defaults: Defaults = DEFAULTS) -> int:
    if p.final_point is None:
        return 0
    d = _l1_px(p.final_point, gt.final_point, gt.image_width, gt.image_height)
    return int(d <= defaults.point_l1_max_px)


def process_format_reward(p: ParsedResponse) -> int:
    return int(p.process_format_ok)


def _norm_text(s: str) -> str:
    s = re.sub(r"[^\w\s]", " ", s.lower())
    return " ".join(s.split())


def targets_match(predicted: str, annotated: str) -> bool:
    a, b = _norm_text(predicted), _norm_text(annotated)
    return bool(a) and bool(b) and (a in b or b in a)


def _step_passes(step: ParsedStep, key: KeyStep, gt: GroundTruthAnnotation,
                 d: Defaults) -> bool:
    if key.perception_type == "Position":
        pred = Point2(*step.value, "normalized")
        ref = Point2(*key.value, "normalized")
        return _l1_px(pred, ref, gt.image_width, gt.image_height) < d.point_l1_max_px
    if key.perception_type == "Orientation":
        a, b = np.asarray(step.value), np.asarray(key.value)
        cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        return cos > d.orientation_cos_min
    ref = key.value[0]
    return abs(step.value[0] - ref) <= d.size_rel_tol * ref * (1 + 1e-12)


def accuracy_reward(p: ParsedResponse, gt: GroundTruthAnnotation,
                    defaults: Defaults = DEFAULTS) -> float:
    """Mean over annotated key steps of a per-type metric pass (unmatched steps score 0)."""
    if not gt.key_steps:
        return 0.0
    good = [s for s in p.steps if s.ok]
    hits = 0
    for key in gt.key_steps:
        cands = [s for s in good if s.perception_type == key.perception_type
                 and targets_match(s.target_text, key.target_text)]
        if any(_step_passes(s, key, gt, defaults) for s in cands):
            hits += 1
    return hits / len(gt.key_steps)


def total_reward(p: ParsedResponse, gt: GroundTruthAnnotation, alpha: float | None = None,
                 defaults: Defaults = DEFAULTS) -> RewardBreakdown:
    alpha = defaults.alpha if alpha is None else alpha
    if alpha < 0:
        raise UsageError("alpha must be >= 0")
    r_of = outcome_format_reward(p)
    r_p = point_l1_reward(p, gt, defaults)
    r_pf = process_format_reward(p)
    r_acc = accuracy_reward(p, gt, defaults)
    return RewardBreakdown(r_of, r_p, r_pf, r_acc, alpha, r_of + r_p + alpha * (r_pf + r_acc))


@dataclass
class AdvantageGroup:
    rewards: list[float]
    advantages: list[float]


def group_advantages(rewards: Sequence[float]) -> AdvantageGroup:
    """Standardise rewards against the group mean and population std."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise UsageError("group_advantages needs at least two rewards")
    std = r.std()
    if np.ptp(r) == 0 or std == 0:
        adv = np.zeros_like(r)
    else:
        adv = (r - r.mean()) / std
    return AdvantageGroup(r.tolist(), adv.tolist())
