"""Point-in-mask evaluation: generated answers against a naive bounding-box-centre guesser."""

import numpy as np

from spatialref.evaluation import BenchmarkSample, Prediction, benchmark_success_rate
from spatialref.geometry import Point2
from spatialref.qa import QAConfig, generate_scene_qa
from spatialref.synthetic import generate_tabletop_scene

samples, answers, guesses = [], [], []
for seed in range(3):
    scene = generate_tabletop_scene(seed).frame
    res = generate_scene_qa(scene, QAConfig(families=("location", "placement", "reasoning")),
                            seed=seed)
    for qa in res.pairs:
        mask = res.masks[qa.qa_id]
        subset = "location" if qa.meta["mask"]["kind"] == "object" else "placement"
        samples.append(BenchmarkSample(qa.qa_id, None, None, qa.question, qa.constraints,
                                       qa.step_count, subset, mask=mask))
        answers.append(Prediction(qa.qa_id, [Point2(*qa.answer, "normalized")]))
        rows, cols = np.nonzero(mask)
        centre = ((cols.min() + cols.max()) / 2, (rows.min() + rows.max()) / 2)
        guesses.append(Prediction(qa.qa_id, [Point2(*centre)]))

print("generated answers (should be perfect):")
print(benchmark_success_rate(answers, samples).format_table())
print("\nbounding-box centre of the answer mask:")
print(benchmark_success_rate(guesses, samples).format_table())
