"""The 200-case reward decision table: 8 tag layouts x 5 step sets x 5 answer points.

Expected component values are written down by hand per axis of the table.
"""

from itertools import product

from spatialref.geometry import Point2
from spatialref.keysteps import KeyStep
from spatialref.rewards import GroundTruthAnnotation

GT = GroundTruthAnnotation(
    Point2(320.0, 240.0), 640, 480,
    [KeyStep.position("the blue cup", 0.5, 0.5),
     KeyStep.orientation("the handle of the blue cup", [1, 0, 0])])

# name -> (template, r_of, think parsed?, answer parsed?)
TAGS = {
    "strict": ("<think>{T}</think><answer>{A}</answer>", 1, True, True),
    "whitespace": ("  <think>{T}</think>\n\n<answer>{A}</answer>\n", 1, True, True),
    "swapped": ("<answer>{A}</answer><think>{T}</think>", 0, True, True),
    "unclosed_answer": ("<think>{T}</think><answer>{A}", 0, True, False),
    "stray_text": ("Sure! <think>{T}</think><answer>{A}</answer>", 0, True, True),
    "duplicate_tag": ("<think>{T}</think><think></think><answer>{A}</answer>", 0, True, True),
    "no_think": ("<answer>{A}</answer>", 0, False, True),
    "nested": ("<think>{T}\n<answer>{A}</answer></think>", 0, True, True),
}

# name -> (think body, r_pf, r_acc)
STEPS = {
    "all_correct": ("[Position] [the blue cup]: [(0.520, 0.480)]\n"
                    "[Orientation] [the handle of the blue cup]: (0.900, 0.436, 0.000)", 1, 1.0),
    "one_correct": ("[Position] [blue cup]: [(0.500, 0.500)]\n"
                    "[Orientation] [the handle of the blue cup]: (0.000, 1.000, 0.000)", 1, 0.5),
    "one_malformed": ("[Position] [The Blue Cup]: [(0.500, 0.500)]\n"
                      "[Orientation] [the handle]: (2.000, 0.000, 0.000)", 0, 0.5),
    "prose_only": ("The cup is on the left, so I point at it.", 0, 0.0),
    "wrong_target": ("[Position] [the plate]: [(0.500, 0.500)]\n"
                     "[Orientation] [the fork]: (1.000, 0.000, 0.000)", 1, 0.0),
}

# name -> (answer text, r_p)
POINTS = {
    "normalized_exact": ("(0.5, 0.5)", 1),
    "pixels_l1_50": ("(350, 260)", 1),
    "pixels_l1_51": ("(351, 260)", 0),
    "missing": ("the cup", 0),
    "normalized_far": ("(0.9, 0.9)", 0),
}


def cases():
    """(case id, response text, expected (r_of, r_p, r_pf, r_acc))."""
    out = []
    for (tn, (tpl, r_of, has_think, has_answer)), (sn, (body, r_pf, r_acc)), (pn, (ans, r_p)) \
            in product(TAGS.items(), STEPS.items(), POINTS.items()):
        text = tpl.format(T=body, A=ans)
        if tn == "nested":
            # the answer lives inside the think span, its line is prose
            has_answer = True
        exp = (r_of, r_p if has_answer else 0, r_pf if has_think else 0,
               r_acc if has_think else 0.0)
        out.append((f"{tn}-{sn}-{pn}", text, exp))
    return out
