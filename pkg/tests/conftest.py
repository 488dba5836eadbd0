import warnings

import numpy as np
import pytest
from hypothesis import settings

from stochalloc.core import IIDInput, Instance, OptionVector, RequestType
from stochalloc.greedy import AdwordsInstance

settings.register_profile("repo", derandomize=True, deadline=None, print_blob=True)
settings.load_profile("repo")


def make_instance(capacities, types, m, n_profits=1):
    """Build an instance from ``types = [[(a_dict, w_dict), ...], ...]``."""
    rts = tuple(RequestType(j, tuple(OptionVector(a, w) for a, w in opts)) for j, opts in enumerate(types))
    return Instance(len(capacities), n_profits, tuple(capacities), m, rts)


def tiny_adwords(m: int = 1000, budget: float = 400.0) -> AdwordsInstance:
    """Two advertisers, three queries, uniform query law."""
    bids = np.array([[1.0, 0.5, 0.2], [0.3, 0.9, 1.0]])
    return AdwordsInstance(np.array([budget, budget]), bids, m, np.full(3, 1 / 3))


@pytest.fixture
def hand_lp():
    """One resource c=2, one type with weight 2, option a=1, w=1."""
    inst = make_instance([2.0], [[({0: 1.0}, {0: 1.0})]], m=2)
    return inst, IIDInput({0: 1.0})


@pytest.fixture(autouse=True)
def _quiet_gamma_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="gamma .*")
        yield
