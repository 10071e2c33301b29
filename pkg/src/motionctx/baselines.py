import numpy as np


def zero_velocity_predict(observed, horizon: int) -> np.ndarray:
    """Repeat the last observed frame ``horizon`` times.

    Accepts (T', D) or a batch (B, T', D); the output keeps the batch axis.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim not in (2, 3) or observed.shape[-2] == 0:
        raise ValueError(f"need at least one observed frame, got shape {observed.shape}")
    last = observed[..., -1:, :]
    reps = (1,) * (observed.ndim - 2) + (horizon, 1)
    return np.tile(last, reps)


BASELINES = {"zero-velocity": zero_velocity_predict}
