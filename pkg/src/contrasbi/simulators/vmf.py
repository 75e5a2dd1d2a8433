"""Von Mises-Fisher sampling on the circle."""

import numpy as np


def von_mises_angles(kappa: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """Angles with density proportional to ``exp(kappa * cos(theta))``.

    Best & Fisher (1979) wrapped-Cauchy envelope rejection sampler.
    """
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if kappa < 1e-8:
        return rng.uniform(-np.pi, np.pi, size=count)
    a = 1.0 + np.sqrt(1.0 + 4.0 * kappa * kappa)
    b = (a - np.sqrt(2.0 * a)) / (2.0 * kappa)
    r = (1.0 + b * b) / (2.0 * b)
    out = np.empty(count)
    filled = 0
    while filled < count:
        need = count - filled
        n = max(16, int(need * 1.5))
        u1, u2, u3 = rng.uniform(size=(3, n))
        z = np.cos(np.pi * u1)
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        with np.errstate(divide="ignore"):
            accept = (c * (2.0 - c) - u2 > 0) | (np.log(c / u2) + 1.0 - c >= 0)
        theta = np.sign(u3 - 0.5) * np.arccos(np.clip(f, -1.0, 1.0))
        theta = theta[accept][:need]
        out[filled : filled + len(theta)] = theta
        filled += len(theta)
    return out


def sample_vmf_circle(mean_dir, kappa: float, count: int, seed) -> np.ndarray:
    """Unit 2-vectors with density proportional to ``exp(kappa * z . mean_dir)``."""
    mean_dir = np.asarray(mean_dir, dtype=np.float64)
    if mean_dir.shape != (2,) or abs(np.linalg.norm(mean_dir) - 1.0) > 1e-9:
        raise ValueError("mean_dir must be a unit 2-vector")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = von_mises_angles(kappa, count, rng) + np.arctan2(mean_dir[1], mean_dir[0])
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)
