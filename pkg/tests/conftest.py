import numpy as np
import pytest
from hypothesis import settings

from ontomatch.ontology import Concept, build_ontology
from ontomatch.synthetic import NONE, gen_synthetic_pair

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def abc():
    """A <- B, A <- C, C disjoint with B."""
    return build_ontology(
        "toy",
        [
            Concept("A", ("alpha",)),
            Concept("B", ("beta",), subclass_of=("A",)),
            Concept("C", ("gamma",), subclass_of=("A",), disjoint_with=("B",)),
        ],
    )


@pytest.fixture
def chain():
    """C subclass_of B subclass_of A; B carries one synonym."""
    return build_ontology(
        "chain",
        [
            Concept("A", ("sarcoma",)),
            Concept("B", ("angiosarcoma", "hemangiosarcoma"), subclass_of=("A",)),
            Concept("C", ("cardiac angiosarcoma",), subclass_of=("B",)),
        ],
    )


@pytest.fixture(scope="session")
def onto100():
    return gen_synthetic_pair(100, NONE, seed=7)[0]


def random_dag(rng: np.random.Generator, n: int, onto_id: str = "rnd"):
    concepts = []
    for i in range(n):
        parents = sorted({f"c{int(j)}" for j in rng.integers(0, i, size=int(rng.integers(1, 3)))}) if i else []
        n_labels = int(rng.integers(1, 4))
        labels = tuple(f"w{i} t{int(rng.integers(50))} v{k}" for k in range(n_labels))
        concepts.append(Concept(f"c{i}", labels, subclass_of=tuple(parents)))
    return build_ontology(onto_id, concepts)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        lines.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
