"""Frozen reference fixtures shared across test modules.

The balance-summary fixture is a stored table of per-method balance metrics
from a published substance-abuse-treatment analysis (n = 10152, ATE). Tests
replay the stored numbers; they do not recompute them from raw data.
"""

from balancekit.balance import BalanceSummary

# method ids in fit order
METHOD_IDS = [
    "LR",
    "GBM_ES",
    "GBM_KS",
    "CBPS#1",
    "CBPS#2",
    "CBPS#3",
    "EB#1",
    "EB#2",
    "EB#3",
]

_N = 10152

# columns: mean_smd, max_smd, mean_ks, max_ks, ess
_SUMMARY_TABLE = {
    "unweighted": (0.15, 0.39, 0.07, 0.16, 10152.0),
    "LR": (0.02, 0.13, 0.02, 0.05, 6062.0),
    "GBM_ES": (0.03, 0.07, 0.02, 0.03, 7752.0),
    "GBM_KS": (0.03, 0.07, 0.02, 0.03, 7877.0),
    "CBPS#1": (0.01, 0.02, 0.02, 0.06, 7534.0),
    "CBPS#2": (0.01, 0.05, 0.01, 0.05, 7564.0),
    "CBPS#3": (0.02, 0.06, 0.01, 0.04, 7711.0),
    "EB#1": (0.00, 0.00, 0.01, 0.05, 8071.0),
    "EB#2": (0.00, 0.00, 0.01, 0.04, 7838.0),
    "EB#3": (0.00, 0.00, 0.01, 0.03, 7743.0),
}

SUMMARY_FIXTURE = {
    mid: BalanceSummary(
        method_id=mid,
        mean_smd=mean_smd,
        max_smd=max_smd,
        mean_ks=mean_ks,
        max_ks=max_ks,
        ess=ess,
        ess_pct=100.0 * ess / _N,
    )
    for mid, (mean_smd, max_smd, mean_ks, max_ks, ess) in _SUMMARY_TABLE.items()
}

# stored age row from the same analysis: group means and the SMD the source
# reports for them; the common group sd consistent with both is 4/3
AGE_MEAN_TREATED = 15.42
AGE_MEAN_CONTROL = 15.62
AGE_SD = 4.0 / 3.0
AGE_SMD = 0.15

# stored final-effect record from the same analysis (replay only; the stored
# interval is not symmetric about the stored estimate, so these numbers are
# echoed, never recomputed)
EFFECT_REPLAY = {
    "estimate": 1.23,
    "ci_low": 0.00,
    "ci_high": 2.57,
    "p_value": 0.0498,
    "method_id": "GBM_KS",
}
