"""Generate a small QA corpus and look at one item from each family."""

from spatialref.qa import QAConfig, generate_scene_qa
from spatialref.synthetic import generate_tabletop_scene

scene = generate_tabletop_scene(seed=6).frame
result = generate_scene_qa(scene, QAConfig(per_family=2), seed=6)
print(f"{len(result.pairs)} QA pairs, skipped families: {result.report or 'none'}\n")

seen = set()
for qa in result.pairs:
    if qa.family in seen:
        continue
    seen.add(qa.family)
    print(f"[{qa.family}] {qa.question}")
    print(f"    answer: {qa.answer}   steps: {qa.step_count}")
    for step in qa.reasoning:
        print(f"    {step.format()}")
