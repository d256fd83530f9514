import pytest

from admitaudit import synthgen


@pytest.fixture(scope="session")
def small_spec():
    return synthgen.demo_spec(seed=123, n_train=600, n_test=300)


@pytest.fixture(scope="session")
def small_cohort(small_spec):
    return synthgen.generate_cohort(small_spec)


@pytest.fixture(scope="session")
def small_split(small_cohort):
    return synthgen.split_cohort(small_cohort)
