"""Last observation carried forward for the time-varying confounders."""

from __future__ import annotations

import numpy as np

from ..data import PanelDataset
from ..errors import MissingBaseline
from ..msm import EffectEstimates, fit_msm, treatment_weights


def locf_impute(data: PanelDataset) -> PanelDataset:
    """Fill each missing L1/L2 cell with the most recent earlier value.

    Observed cells are never changed. Raises :class:`MissingBaseline` when a
    baseline confounder is missing, since nothing precedes it.
    """
    if not (data.obs_L1[:, 0].all() and data.obs_L2[:, 0].all()):
        raise MissingBaseline("LOCF needs observed baseline confounders")
    out = {}
    for name in ("L1", "L2"):
        vals = np.array(getattr(data, name))
        obs = getattr(data, f"obs_{name}")
        for k in (1, 2):
            vals[:, k] = np.where(obs[:, k], vals[:, k], vals[:, k - 1])
        out[name] = vals
        out[f"obs_{name}"] = np.ones_like(obs)
    return data.replace(**out)


def locf_analyze(data: PanelDataset, truncate=None) -> EffectEstimates:
    """MSM on the singly imputed data.

    Subjects that cannot be carried forward (missing baseline confounder) or
    that miss treatment or outcome are dropped. The variance ignores the
    imputation, so intervals are too narrow whenever imputed values are
    uncertain.
    """
    usable = data.obs_L1[:, 0] & data.obs_L2[:, 0] & data.obs_A.all(axis=1) & data.obs_Y
    sub = data if usable.all() else data.subset(usable)
    filled = locf_impute(sub)
    est = fit_msm(filled, treatment_weights(filled, truncate=truncate), method="LOCF")
    est.diagnostics["n_dropped"] = int((~usable).sum())
    est.diagnostics["n_imputed_cells"] = int((~sub.obs_L1).sum() + (~sub.obs_L2).sum())
    return est
