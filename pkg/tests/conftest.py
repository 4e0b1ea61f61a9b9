"""Shared fixtures"""
import numpy as np
import pytest

from ppp_cpd.domain.models import CoordinateSplit, PointWindow


def _make_windows(point_sets, start=1, dim=3):
    windows = []
    for offset, points in enumerate(point_sets):
        array = np.asarray(points, dtype=float).reshape(-1, dim)
        windows.append(PointWindow(index=start + offset, points=array))
    return windows


def _uniform_windows(rng, n, rate=5.0, dim=3, start=1):
    return [
        PointWindow(index=start + i, points=rng.random((rng.poisson(rate), dim)))
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def split_3d():
    return CoordinateSplit(group_y=(0, 1), group_z=(2,))


@pytest.fixture
def make_windows():
    """Consecutive PointWindows from raw point lists"""
    return _make_windows


@pytest.fixture
def uniform_windows():
    """Homogeneous PPP windows on the unit cube"""
    return _uniform_windows
