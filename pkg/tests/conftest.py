"""Shared world builders for the environment and learning tests."""

import numpy as np
import pytest

from uavcov.channel import EnvConstants, FadingField
from uavcov.clustering import ClusterPlan
from uavcov.env import EnvConfig, FrameWorld


def build_world(ue_xy_m, assignment, uav_xy=None, seed=0, frame=0, **env_kw):
    """FrameWorld over explicit UE positions and cluster assignment.

    UAVs default to cluster centroids at mid altitude; cluster c is served by
    UAV c. Field size is the standard 100x100 grid at 300 m cells.
    """
    pts = np.asarray(ue_xy_m, dtype=float)
    labels = np.asarray(assignment, dtype=np.int64)
    k = int(labels.max()) + 1
    env_kw.setdefault("n_ues", pts.shape[0])
    cfg = EnvConfig(**env_kw)
    constants = EnvConstants()
    centroids = np.array([pts[labels == c].mean(axis=0) for c in range(k)])
    plan = ClusterPlan(k_star=k, assignment=labels, centroids=centroids,
                       silhouette_mean=0.0, active_uavs=list(range(k)))
    mid = (cfg.h_min + cfg.h_max) / 2.0
    xyz = np.zeros((cfg.k_max, 3))
    active = np.zeros(cfg.k_max, dtype=bool)
    for c in range(k):
        xy = centroids[c] if uav_xy is None else np.asarray(uav_xy)[c]
        xyz[c] = [xy[0], xy[1], mid]
        active[c] = True
    fading = FadingField(seed, constants, cfg.n_ues, cfg.k_max)
    return FrameWorld(cfg, constants, pts, plan, xyz, active, fading, frame,
                      field_size_m=(99 * 300.0, 99 * 300.0))


@pytest.fixture
def world_factory():
    return build_world
