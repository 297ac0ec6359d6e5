"""Complete-case analysis."""

from __future__ import annotations

import numpy as np

from ..data import PanelDataset, complete_case_mask
from ..errors import InsufficientCompleteCases
from ..msm import EffectEstimates, fit_msm, risk_set, treatment_weights

MIN_PER_RISK_SET = 3  # predictors in each denominator model


def cc_analyze(data: PanelDataset, truncate=None) -> EffectEstimates:
    """Treatment weights and the MSM on subjects with every cell observed."""
    mask = complete_case_mask(data)
    sub = data.subset(mask)
    for k in range(3):
        if np.count_nonzero(risk_set(sub.A, k)) < MIN_PER_RISK_SET:
            raise InsufficientCompleteCases(
                f"{int(mask.sum())} complete cases leave fewer than {MIN_PER_RISK_SET} subjects at risk at occasion {k}"
            )
    est = fit_msm(sub, treatment_weights(sub, truncate=truncate), method="CC")
    est.diagnostics["n_complete"] = int(mask.sum())
    return est
