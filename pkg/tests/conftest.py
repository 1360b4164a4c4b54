import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session", autouse=True)
def warm_numba():
    """Trigger kernel compilation once so individual tests keep honest timings."""
    from vctrees import DecisionTree, propose_grow
    from vctrees.gibbs import ChainState, mh_tree_update, redraw_leaves
    from vctrees.priors import Hyperparameters

    gen = np.random.default_rng(0)
    tree = DecisionTree.stump(2)
    propose_grow(tree, [0.5, 0.5], gen)
    tree.evaluate_batch(np.array([[0.5, 0.5]]))
    hyper = Hyperparameters(m_trees=2, tau0=1.0, noise_scale=1.0, iters=2, burn=0)
    state = ChainState(gen.standard_normal((8, 1)), gen.random((8, 2)),
                       gen.standard_normal(8), hyper)
    mh_tree_update(state, 0, 0, gen)
    redraw_leaves(state, 0, 0, gen)
    state.check_coherence()
    state.eval_grid(gen.random((3, 2)))
    state.split_counts()
    state.ensemble_sums()
