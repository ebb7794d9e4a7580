import numpy as np
import pytest

from bsesolve.filtered_space import FiniteFilteredSpace, TimeGrid


def make_space(children, times=None):
    if times is None:
        times = np.linspace(0.0, 1.0, len(children) + 1)
    return FiniteFilteredSpace(TimeGrid(np.asarray(times, dtype=float)), children)


@pytest.fixture
def three_level_children():
    # non-uniform probabilities, 8 leaves
    return [
        [[0.3, 0.7]],
        [[0.5, 0.5], [0.2, 0.8]],
        [[0.6, 0.4], [0.9, 0.1], [0.25, 0.75], [0.5, 0.5]],
    ]


@pytest.fixture
def three_level_space(three_level_children):
    return make_space(three_level_children, times=[0.0, 0.5, 0.8, 1.0])


def leaf_probabilities(children):
    """Independent recomputation of leaf probabilities from raw child lists."""
    probs = [1.0]
    for level in children:
        nxt = []
        for node_p, vec in zip(probs, level):
            for p in vec:
                nxt.append(node_p * p)
        probs = nxt
    return np.array(probs)


def ancestor_index(children, level, leaf_level):
    """Map each leaf-level node to its ancestor index at ``level``."""
    counts = [1]
    for lv in children:
        counts.append(sum(len(v) for v in lv))
    anc = np.arange(counts[level])
    for lv in range(level, leaf_level):
        widths = [len(v) for v in children[lv]]
        anc = np.repeat(anc, widths)
    return anc
