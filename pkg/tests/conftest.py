from __future__ import annotations

import numpy as np
import pytest

from iotriage.dataset import ColumnSpec, LabeledDataset, PreprocessConfig
from iotriage.judging import RubricScore
from iotriage.llm_gateway import TransientTransportError


def dataset_from_arrays(X, labels, source_id: str = "custom") -> LabeledDataset:
    """Build a LabeledDataset directly from a numeric matrix for model tests."""
    X = np.asarray(X, dtype=np.float64)
    cols = tuple(ColumnSpec(f"f{j}", "numeric") for j in range(X.shape[1]))
    return LabeledDataset(
        feature_matrix=X,
        labels=list(labels),
        class_set=tuple(sorted(set(labels))),
        encoders={},
        scaler=None,
        source_id=source_id,
        feature_names=tuple(c.name for c in cols),
        columns=cols,
        cleaned_rows=[[repr(v) for v in row] for row in X.tolist()],
        impute_values={},
        config=PreprocessConfig(label_column="label"),
    )


def separable_blobs(n_per_class: int = 100, seed: int = 0) -> LabeledDataset:
    """Two well-separated 2-D Gaussian blobs, 2 classes."""
    rng = np.random.default_rng(seed)
    a = rng.normal((0.0, 0.0), 0.5, size=(n_per_class, 2))
    b = rng.normal((6.0, 6.0), 0.5, size=(n_per_class, 2))
    X = np.vstack([a, b])
    labels = ["alpha"] * n_per_class + ["beta"] * n_per_class
    return dataset_from_arrays(X, labels)


def half_point_grid(rng: np.random.Generator, maximum: float) -> float:
    return float(rng.integers(0, int(maximum * 2) + 1)) / 2.0


def random_rubric_score(rng: np.random.Generator) -> RubricScore:
    metrics = {
        "attack_analysis": half_point_grid(rng, 3),
        "mitigation": half_point_grid(rng, 3),
        "technical_depth": half_point_grid(rng, 2),
        "clarity": half_point_grid(rng, 2),
    }
    return RubricScore.from_metrics(metrics)


class ScriptedTransport:
    """Fake transport: responds via a callback, optionally failing first."""

    def __init__(self, respond, fail_first: int = 0, fail_when=None):
        self.respond = respond
        self.fail_first = fail_first
        self.fail_when = fail_when
        self.calls: list[tuple[str, str]] = []

    def __call__(self, config, prompt, credential):
        self.calls.append((config.name, prompt))
        if self.fail_first > 0:
            self.fail_first -= 1
            raise TransientTransportError("scripted transient failure")
        if self.fail_when is not None and self.fail_when(config, prompt):
            raise TransientTransportError(f"scripted failure for {config.name}")
        return self.respond(config, prompt)


class PoisonTransport:
    """Fails the test if any network-path call happens."""

    def __init__(self):
        self.calls = 0

    def __call__(self, config, prompt, credential):
        self.calls += 1
        raise AssertionError("transport must not be touched in replay mode")


def structured_judge_reply(seed_text: str) -> str:
    """Deterministic, parseable judge completion for fake endpoints."""
    import hashlib

    rng = np.random.default_rng(int(hashlib.sha256(seed_text.encode()).hexdigest()[:8], 16))
    score_a = random_rubric_score(rng)
    score_b = random_rubric_score(rng)
    from iotriage.judging import format_score_block

    if score_a.total > score_b.total:
        preferred = "A"
    elif score_b.total > score_a.total:
        preferred = "B"
    else:
        preferred = "TIE"
    return (
        "Both responses engage with the scenario; scores follow the rubric.\n\n"
        + format_score_block(score_a, score_b, preferred)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
