import numpy as np
import pytest

from oodspectrum import synth
from oodspectrum.ingest import StudyConfig, build_response_sets, sets_by_condition

CATS3 = ("a", "b", "c")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_table():
    return synth.simulate_observers(synth.small_scenario(), seed=7)


@pytest.fixture(scope="session")
def pipeline_table():
    return synth.simulate_observers(synth.pipeline_scenario(), seed=0)


@pytest.fixture(scope="session")
def pipeline_config():
    return StudyConfig(references=synth.pipeline_references())


@pytest.fixture(scope="session")
def pipeline_sets(pipeline_table):
    return build_response_sets(pipeline_table)


@pytest.fixture(scope="session")
def pipeline_by_condition(pipeline_sets):
    return sets_by_condition(pipeline_sets)


def make_set(truth, pred, categories=CATS3, system_id="sys", **meta):
    return synth.response_set(list(truth), list(pred), categories, system_id=system_id, **meta)
