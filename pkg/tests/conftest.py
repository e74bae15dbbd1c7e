import pytest

from fedsched.pool_select import Candidate

# Reference selection instance: 10 candidates, integer costs, 2-decimal scores.
TABLE_SCORES = [6.92, 4.89, 6.80, 6.08, 6.90, 6.08, 3.74, 3.36, 5.26, 3.39]
TABLE_COSTS = [18, 14, 18, 17, 18, 17, 12, 11, 15, 11]
TABLE_BUDGET = 100


def make_reference_candidates():
    return [
        Candidate(id=i, score=s, cost=c)
        for i, (s, c) in enumerate(zip(TABLE_SCORES, TABLE_COSTS))
    ]


@pytest.fixture
def reference_candidates():
    return make_reference_candidates()


def random_histogram(rng, n_classes, max_count=20):
    h = rng.integers(0, max_count, size=n_classes)
    if h.sum() == 0:
        h[int(rng.integers(n_classes))] = 1
    return h


def client_file_payload(scores_list, costs, histograms, n_classes):
    return {
        "n_classes": n_classes,
        "clients": [
            {
                "id": f"c{i:03d}",
                "scores": list(map(float, s)),
                "cost": int(c),
                "histogram": list(map(int, h)),
                "available": True,
            }
            for i, (s, c, h) in enumerate(zip(scores_list, costs, histograms))
        ],
    }
