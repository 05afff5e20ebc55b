"""Independent reference implementations used to pin expected values.

These stay deliberately dumb: Monte-Carlo membership tests for IoU and a
brute-force co-occurrence table for probe construction. They must never
share code with the implementations they check.
"""

import numpy as np


def mc_box_iou(a, b, n_samples=1_000_000, seed=0):
    """Estimate IoU of two boxes by uniform point membership.

    Points are drawn over the bounding rectangle of the union, which keeps
    the count in the union high enough for a tight ratio estimate.
    """
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    lo_x, hi_x = min(ax1, bx1), max(ax2, bx2)
    lo_y, hi_y = min(ay1, by1), max(ay2, by2)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(lo_x, hi_x, n_samples)
    ys = rng.uniform(lo_y, hi_y, n_samples)
    in_a = (xs >= ax1) & (xs <= ax2) & (ys >= ay1) & (ys <= ay2)
    in_b = (xs >= bx1) & (xs <= bx2) & (ys >= by1) & (ys <= by2)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def mc_segment_iou(a, b, n_samples=1_000_000, seed=0):
    """1-D analogue of mc_box_iou."""
    a1, a2 = a
    b1, b2 = b
    lo, hi = min(a1, b1), max(a2, b2)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(lo, hi, n_samples)
    in_a = (xs >= a1) & (xs <= a2)
    in_b = (xs >= b1) & (xs <= b2)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def random_valid_box(rng):
    x1, x2 = np.sort(rng.uniform(0, 1, 2))
    y1, y2 = np.sort(rng.uniform(0, 1, 2))
    return (float(x1), float(y1), float(x2), float(y2))


def random_valid_segment(rng):
    t1, t2 = np.sort(rng.uniform(0, 1, 2))
    return (float(t1), float(t2))
