"""Learned multi-way kd-tree with exact kNN and radius search."""

from ._unis import (
    CdfModel,
    PivotMethod,
    Tree,
    TreeConfig,
    cdf_train,
    linear_knn,
    linear_radius,
    objective_h,
    select_t,
)

STRATEGIES = ("r_dfs", "r_bfs", "b_dfs", "b_bfs")

__all__ = [
    "CdfModel",
    "PivotMethod",
    "STRATEGIES",
    "Tree",
    "TreeConfig",
    "cdf_train",
    "linear_knn",
    "linear_radius",
    "objective_h",
    "select_t",
]
