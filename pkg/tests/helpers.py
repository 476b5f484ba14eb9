"""Shared instance generators for the test suite."""

import numpy as np

from gpdelta import KernelParams


def well_separated_inputs(rng, n, p, length_scale, span=None):
    """n points in [0, span]^p with pairwise distances > 0.05 * length_scale.

    Finite differences of the retrain pipeline blow up when two training
    points nearly coincide (the kernel matrix conditioning degrades), so
    random instances are resampled until comfortably separated.
    """
    if span is None:
        span = 2.0 * length_scale * max(1.0, n ** (1.0 / p))
    X = rng.uniform(0.0, span, (n, p))
    for _ in range(100):
        if n == 1:
            break
        diff = X[:, None, :] - X[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() > 0.05 * length_scale:
            break
        X = rng.uniform(0.0, span, (n, p))
    return X, span


def random_instance(rng, p_choices=(1, 2), n_range=(3, 15), t_range=(1, 20),
                    noise_range=(0.01, 0.1)):
    """Random kernel parameters, training set and queries.

    Draws p from p_choices, n and t uniformly from the inclusive ranges,
    amplitude from U[0.1, 2], length_scale from U[0.1, 1] and noise_std
    from U[noise_range]; inputs are well separated (see above).
    Returns (params, X, y, queries).
    """
    p = int(rng.choice(p_choices))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    t = int(rng.integers(t_range[0], t_range[1] + 1))
    params = KernelParams(
        amplitude=float(rng.uniform(0.1, 2.0)),
        length_scale=float(rng.uniform(0.1, 1.0)),
        noise_std=float(rng.uniform(*noise_range)),
    )
    X, span = well_separated_inputs(rng, n, p, params.length_scale)
    y = rng.normal(size=n)
    queries = rng.uniform(0.0, span, (t, p))
    return params, X, y, queries
