import pytest

from sakf import pipeline, synthetic

ACCEPTANCE_LINES = []

# small enough to train in well under a second per run
FAST = dict(k_fg=24, k_bg=24, kmeans_max_iters=30, runs=2)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    return synthetic.make_dataset(root, per_class=6, size=64, seed=11)


@pytest.fixture(scope="session")
def small_dataset(small_dataset_dir):
    return pipeline.load_dataset(small_dataset_dir)


@pytest.fixture(scope="session")
def fast_config():
    return pipeline.PipelineConfig(**FAST)


@pytest.fixture(scope="session")
def small_model(small_dataset, fast_config):
    return pipeline.train_pipeline(small_dataset, fast_config, threads=1)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the terminal summary."""
    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
