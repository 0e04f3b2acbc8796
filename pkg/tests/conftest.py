import numpy as np
import pytest

from scanplan import cloudio, segmentation, synthetic

# lines appended by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def box_case():
    cloud, gt = synthetic.noisy_open_box(10000, 0.1, seed=0)
    features = cloudio.compute_features(cloud)
    seg = segmentation.segment(features, segmentation.SegmentationConfig(seed=0))
    return features, gt, seg


def best_match_agreement(gt, labels):
    """Fraction of points whose label agrees with ground truth under the best one-to-one matching."""
    from scipy.optimize import linear_sum_assignment

    n_gt = int(gt.max()) + 1
    n_lab = max(int(labels.max()) + 1, 1)
    M = np.zeros((n_gt, n_lab))
    ok = labels >= 0
    np.add.at(M, (gt[ok], labels[ok]), 1)
    r, c = linear_sum_assignment(-M)
    return M[r, c].sum() / len(gt)
