"""Point-in-mask benchmark scoring and the reasoning-step counter."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .defaults import DEFAULTS
from .errors import ScoringError, ValidationError
from .geometry import Point2, pixel_index
from .io import read_mask

SUBSETS = ("location", "placement", "unseen")
VIEWER = "viewer"
IGNORED_RELATIONS = frozenset({"on"})


@dataclass(frozen=True)
class Constraint:
    anchor: str | None  # expression text, "viewer", or None for intrinsic attributes
    relation: str | None
    intrinsic: bool = False
    anchor_id: str | None = None

    def to_dict(self) -> dict:
        return {"anchor": self.anchor, "anchor_id": self.anchor_id,
                "relation": self.relation, "intrinsic": self.intrinsic}

    @classmethod
    def from_dict(cls, d: dict) -> "Constraint":
        return cls(d.get("anchor"), d.get("relation"), bool(d.get("intrinsic", False)),
                   d.get("anchor_id"))


def _as_constraint(c) -> Constraint:
    return c if isinstance(c, Constraint) else Constraint.from_dict(c)


def count_reasoning_steps(constraints: Iterable, cap: int = DEFAULTS.max_steps) -> int:
    """Distinct non-viewer anchors plus anchor-linked relations, clamped to [1, cap].

    Intrinsic attributes and the supporting relation "on" contribute nothing.
    """
    anchors: set[str] = set()
    relations = 0
    for c in map(_as_constraint, constraints):
        if c.intrinsic:
            continue
        anchored = c.anchor is not None and c.anchor.strip().lower() != VIEWER
        if not anchored:
            continue
        anchors.add(c.anchor_id or c.anchor.strip().lower())
        if c.relation and c.relation.strip().lower() not in IGNORED_RELATIONS:
            relations += 1
    return max(1, min(cap, len(anchors) + relations))


@dataclass(eq=False)
class BenchmarkSample:
    sample_id: str
    image_ref: str | None
    mask_ref: str | None
    instruction_text: str
    structured_constraints: list[Constraint]
    step_count_label: int
    subset: str
    mask: np.ndarray | None = None
    base_dir: Path | None = None

    def __post_init__(self):
        if not 1 <= self.step_count_label <= DEFAULTS.max_steps:
            raise ValidationError(f"sample {self.sample_id}: step must be within 1..5")
        if self.subset not in SUBSETS:
            raise ValidationError(f"sample {self.sample_id}: unknown subset {self.subset!r}")
        self.structured_constraints = [_as_constraint(c) for c in self.structured_constraints]

    def load_mask(self) -> np.ndarray:
        if self.mask is None:
            if self.mask_ref is None:
                raise ValidationError(f"sample {self.sample_id}: no mask")
            path = Path(self.mask_ref)
            if not path.is_absolute() and self.base_dir is not None:
                path = self.base_dir / path
            self.mask = read_mask(path)
        if not self.mask.any():
            raise ValidationError(f"sample {self.sample_id}: empty mask")
        return self.mask

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "image_ref": self.image_ref,
                "mask_ref": self.mask_ref, "instruction": self.instruction_text,
                "constraints": [c.to_dict() for c in self.structured_constraints],
                "step": self.step_count_label, "subset": self.subset}

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "BenchmarkSample":
        try:
            return cls(str(d["sample_id"]), d.get("image_ref"), d.get("mask_ref"),
                       d.get("instruction", ""), list(d.get("constraints", [])),
                       int(d["step"]), d.get("subset", "location"), base_dir=base_dir)
        except KeyError as e:
            raise ValidationError(f"benchmark sample missing field {e.args[0]!r}") from None


@dataclass
class Prediction:
    sample_id: str
    points: list[Point2]

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        space = d.get("space", "normalized")
        try:
            pts = [Point2(float(x), float(y), space) for x, y in d["points"]]
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"prediction {d.get('sample_id')!r}: bad points ({e})") from None
        return cls(str(d["sample_id"]), pts)


def point_in_mask(point: Point2, mask: np.ndarray) -> bool:
    """True iff the (half-up rounded) pixel of ``point`` is set in ``mask``."""
    h, w = mask.shape
    p = point.to_pixels(w, h)
    if not (np.isfinite(p.x) and np.isfinite(p.y)):
        return False
    col, row = pixel_index(p.x, p.y)
    if not (0 <= col < w and 0 <= row < h):
        return False
    return bool(mask[row, col])


def sample_success(pred: Prediction, sample: BenchmarkSample) -> float:
    if not pred.points:
        raise ScoringError(f"prediction for {sample.sample_id} has no points")
    mask = sample.load_mask()
    return sum(point_in_mask(p, mask) for p in pred.points) / len(pred.points)


@dataclass
class EvalReport:
    per_sample: list[tuple[str, float]]
    per_step: dict[int, float]
    per_subset: dict[str, float]
    overall: float
    step_discrepancies: list[tuple[str, int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"overall": self.overall,
                "per_subset": self.per_subset,
                "per_step": {str(k): v for k, v in sorted(self.per_step.items())},
                "per_sample": [{"sample_id": s, "success": r} for s, r in self.per_sample],
                "step_discrepancies": [{"sample_id": s, "label": a, "counted": b}
                                       for s, a, b in self.step_discrepancies]}

    def format_table(self) -> str:
        lines = [f"{'group':<16}{'n':>6}{'success':>10}"]
        lines.append(f"{'overall':<16}{len(self.per_sample):>6}{self.overall:>10.4f}")
        for name, v in sorted(self.per_subset.items()):
            lines.append(f"{'subset:' + name:<16}{self._counts['subset'][name]:>6}{v:>10.4f}")
        for step, v in sorted(self.per_step.items()):
            lines.append(f"{'step:' + str(step):<16}{self._counts['step'][step]:>6}{v:>10.4f}")
        return "\n".join(lines)


def step_discrepancies(samples: Sequence[BenchmarkSample]) -> list[tuple[str, int, int]]:
    """(sample_id, label, counted) for samples whose label differs from the counter."""
    out = []
    for s in samples:
        counted = count_reasoning_steps(s.structured_constraints)
        if counted != s.step_count_label:
            out.append((s.sample_id, s.step_count_label, counted))
    return out


def benchmark_success_rate(preds: Sequence[Prediction],
                           samples: Sequence[BenchmarkSample]) -> EvalReport:
    by_id: dict[str, Prediction] = {}
    dupes = []
    for p in preds:
        if p.sample_id in by_id:
            dupes.append(p.sample_id)
        by_id[p.sample_id] = p
    if dupes:
        raise ScoringError(f"duplicate predictions for: {', '.join(sorted(set(dupes)))}")
    ids = [s.sample_id for s in samples]
    missing = [i for i in ids if i not in by_id]
    extra = sorted(set(by_id) - set(ids))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for: {', '.join(missing)}")
        if extra:
            parts.append(f"predictions for unknown samples: {', '.join(extra)}")
        raise ScoringError("; ".join(parts))
    if not samples:
        raise ScoringError("no benchmark samples")

    rows = [(s.sample_id, sample_success(by_id[s.sample_id], s)) for s in samples]
    by_step: dict[int, list[float]] = defaultdict(list)
    by_subset: dict[str, list[float]] = defaultdict(list)
    for s, (_, r) in zip(samples, rows):
        by_step[s.step_count_label].append(r)
        by_subset[s.subset].append(r)
    report = EvalReport(
        per_sample=rows,
        per_step={k: float(np.mean(v)) for k, v in sorted(by_step.items())},
        per_subset={k: float(np.mean(v)) for k, v in sorted(by_subset.items())},
        overall=float(np.mean([r for _, r in rows])),
        step_discrepancies=step_discrepancies(samples),
    )
    report._counts = {"step": {k: len(v) for k, v in by_step.items()},
                      "subset": {k: len(v) for k, v in by_subset.items()}}
    return report
