import numpy as np


def lse(values: np.ndarray) -> float:
    """log(sum(exp(values))) of a 1-D array; -inf for empty or all -inf input."""
    if values.size == 0:
        return -np.inf
    m = values.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(values - m).sum()))


def lse_rows(values: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a 2-D array."""
    if values.shape[1] == 0:
        return np.full(values.shape[0], -np.inf)
    m = values.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(values - safe[:, None]).sum(axis=1))
