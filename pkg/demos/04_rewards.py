"""Score a group of responses to one question and turn the rewards into advantages."""

from spatialref.geometry import Point2
from spatialref.keysteps import KeyStep
from spatialref.rewards import (GroundTruthAnnotation, group_advantages, parse_response,
                                total_reward)

gt = GroundTruthAnnotation(Point2(400, 300), 640, 480,
                           [KeyStep.position("the red mug", 0.55, 0.60),
                            KeyStep.size("the red mug", 0.12)])

responses = {
    "careful": "<think>[Position] [the red mug]: [(0.560, 0.590)]\n"
               "[Size] [the red mug]: 0.125</think><answer>(0.625, 0.625)</answer>",
    "sloppy steps": "<think>[Position] [the red mug]: [(0.900, 0.100)]\n"
                    "[Size] [the red mug]: 0.3</think><answer>(0.63, 0.62)</answer>",
    "no reasoning": "<think>It is over there.</think><answer>(410, 305)</answer>",
    "bad format": "The mug is at (0.625, 0.625).",
}

totals = []
for name, text in responses.items():
    b = total_reward(parse_response(text), gt)
    totals.append(b.total)
    print(f"{name:13s} format {b.r_of} point {b.r_p} step-format {b.r_pf} "
          f"step-accuracy {b.r_acc:.2f} -> total {b.total:.3f}")

print("\nadvantages:", ", ".join(f"{a:+.3f}" for a in group_advantages(totals).advantages))
