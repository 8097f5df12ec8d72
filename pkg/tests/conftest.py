import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from synergy_tta.boxsim import BoxSet
from synergy_tta.config import RunConfig
from synergy_tta.runner import source_model

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("stress", max_examples=1500, deadline=None,
                          suppress_health_check=list(HealthCheck))
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_boxes(rows, labels=None, scores=None):
    rows = np.asarray(rows, dtype=float).reshape(-1, 7)
    n = len(rows)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    scores = np.ones(n) if scores is None else np.asarray(scores, dtype=float)
    return BoxSet(rows, labels, scores)


@pytest.fixture(scope="session")
def source_params():
    """Pretrained source detector (cached on disk after the first session)."""
    return source_model(RunConfig())
