import pytest

from multitune.perf import tune_allocator

tune_allocator()


@pytest.fixture(scope="session")
def qr_setup():
    """Desk-scale QR surrogate: objective plus task/input spaces."""
    from multitune import qr_objective, qr_spaces

    objective = qr_objective()
    task_space, input_space = qr_spaces()
    return objective, task_space, input_space
