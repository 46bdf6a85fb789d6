"""Key-step annotations: ``[Perception Type] [Target Object]: [Value]`` lines."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import ValidationError

PERCEPTION_TYPES = ("Position", "Orientation", "Size")


def round_half_up(x: float, places: int = 3) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class KeyStep:
    perception_type: str
    target_text: str
    value: tuple

    def __post_init__(self):
        t = self.perception_type
        if t not in PERCEPTION_TYPES:
            raise ValidationError(f"unknown perception type {t!r}")
        v = self.value
        if t == "Position":
            v = tuple(float(c) for c in v)
            if len(v) != 2 or not all(0 <= c <= 1 for c in v):
                raise ValidationError("Position value must be a normalized (x, y)")
            if any(round_half_up(c) != c for c in v):
                raise ValidationError("Position value must be rounded to three decimals")
        elif t == "Orientation":
            v = tuple(float(c) for c in np.ravel(v))
            if len(v) != 3 or abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValidationError("Orientation value must be a unit 3-vector")
        else:
            v = (float(v[0] if isinstance(v, (tuple, list)) else v),)
            if not v[0] > 0:
                raise ValidationError("Size value must be positive meters")
        object.__setattr__(self, "value", v)

    @classmethod
    def position(cls, target: str, x: float, y: float) -> "KeyStep":
        return cls("Position", target, (round_half_up(x), round_half_up(y)))

    @classmethod
    def orientation(cls, target: str, vec) -> "KeyStep":
        v = np.asarray(vec, dtype=float)
        return cls("Orientation", target, tuple(v / np.linalg.norm(v)))

    @classmethod
    def size(cls, target: str, meters: float) -> "KeyStep":
        return cls("Size", target, (float(meters),))

    def format(self) -> str:
        t, v = self.perception_type, self.value
        if t == "Position":
            body = f"[({v[0]:.3f}, {v[1]:.3f})]"
        elif t == "Orientation":
            body = f"({v[0]:.3f}, {v[1]:.3f}, {v[2]:.3f})"
        else:
            body = f"{v[0]:.3f}"
        return f"[{t}] [{self.target_text}]: {body}"

    def to_dict(self) -> dict:
        value = list(self.value) if self.perception_type != "Size" else self.value[0]
        return {"perception_type": self.perception_type, "target_text": self.target_text,
                "value": value}

    @classmethod
    def from_dict(cls, d: dict) -> "KeyStep":
        v = d["value"]
        return cls(d["perception_type"], d["target_text"],
                   tuple(v) if isinstance(v, (list, tuple)) else (v,))
