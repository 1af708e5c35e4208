import numpy as np
import pytest

from mcfqot.dataset import Pattern
from mcfqot.dgcnn import DgcnnConfig, fit_normalizer, init_model, loss_and_gradients
from mcfqot.topology import parse_topology


def make_topology(nodes, links, cores=7, slots=160, span_km=80.0):
    lines = [f"cores {cores}", f"slots {slots}", f"span_km {span_km}"]
    lines += [f"node {n}" for n in nodes]
    lines += [f"link {u} {v} {length}" for u, v, length in links]
    return parse_topology("\n".join(lines))


@pytest.fixture
def two_node():
    return make_topology(["a", "b"], [("a", "b", 100)])


@pytest.fixture
def triangle():
    return make_topology(["a", "b", "c"], [("a", "b", 1), ("b", "c", 1), ("a", "c", 3)])


@pytest.fixture
def line3():
    # a - b - c with 160 km and 90 km links
    return make_topology(["a", "b", "c"], [("a", "b", 160), ("b", "c", 90)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pattern(rng, n, m, label, request=0, edge_prob=0.5):
    """A pattern with ``m`` active rows of plausible feature values."""
    active = np.sort(rng.choice(np.arange(1, n + 1), m, replace=False))
    rows = rng.uniform(0.1, 2.0, (m, 9))
    rows[:, 8] = 10 ** rng.uniform(-9, -3, m)
    rows[0, 8] = 0.0
    edges = [(a, b) for k, a in enumerate(active) for b in active[k + 1 :] if rng.random() < edge_prob]
    return Pattern(request, label, n, active, rows, np.array(edges, dtype=np.int32).reshape(-1, 2))


def relabel(pattern, perm):
    """Rename connection ``i`` to ``perm[i - 1]`` (1-based) and reorder rows to match."""
    perm = np.asarray(perm)
    new_ids = perm[pattern.active - 1]
    order = np.argsort(new_ids)
    edges = perm[pattern.edges - 1] if len(pattern.edges) else pattern.edges
    edges = np.sort(edges, axis=1).astype(np.int32)
    if len(edges):
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return Pattern(pattern.request, pattern.label, pattern.n, new_ids[order], pattern.rows[order], edges)


TINY = DgcnnConfig(
    conv_channels=(4, 2), sortpool_k=4, conv1_filters=3, conv2_filters=3, conv2_kernel=2, dense_width=5, dropout_rate=0.3
)


def tiny_model(rng):
    """Tiny DGCNN (n=6) with perturbed weights and biases, plus four patterns."""
    model = init_model(TINY, 6, seed=1)
    for name, value in model.params.items():
        # nonzero biases so every path carries gradient
        model.params[name] = value + rng.normal(0, 0.3, value.shape)
    patterns = [random_pattern(rng, 6, int(rng.integers(1, 6)), i % 2) for i in range(4)]
    fit_normalizer(model, patterns)
    return model, patterns


@pytest.fixture
def tiny(rng):
    return tiny_model(rng)


def numeric_gradient(model, patterns, make_rng, eps=1e-5):
    grads = {}
    for name, value in model.params.items():
        num = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + eps
            up = loss_and_gradients(model, patterns, rng=make_rng())[0]
            value[idx] = old - eps
            down = loss_and_gradients(model, patterns, rng=make_rng())[0]
            value[idx] = old
            num[idx] = (up - down) / (2 * eps)
        grads[name] = num
    return grads


def gradient_errors(model, patterns, dropout_seed=None):
    """Relative error between analytic and central-difference gradients, per parameter."""

    def make_rng():
        # the same seed reproduces the same dropout mask on every call
        return None if dropout_seed is None else np.random.default_rng(dropout_seed)

    _, analytic, _ = loss_and_gradients(model, patterns, rng=make_rng())
    numeric = numeric_gradient(model, patterns, make_rng)
    errors = {}
    for name in model.params:
        a, b = analytic[name], numeric[name]
        errors[name] = float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))
    return errors


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
