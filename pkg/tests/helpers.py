import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation as ScipyRotation

from swabservo.manifold import exp_so3


def random_rotation(rng):
    v = rng.standard_normal(3)
    v *= rng.uniform(0, np.pi - 1e-3) / np.linalg.norm(v)
    return exp_so3(v)


def random_q(chain, rng, margin=0.2):
    return rng.uniform(chain.lower + margin, chain.upper - margin)


def stochastic_nearest(M, rng, samples=10_000):
    cands = ScipyRotation.random(samples, random_state=rng.integers(1 << 31)).as_matrix()
    d = np.linalg.norm(cands - M, axis=(1, 2))
    best = cands[np.argmin(d)]

    def cost(w):
        return np.linalg.norm(best @ exp_so3(w) - M)

    res = minimize(cost, np.zeros(3), method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-12, maxiter=4000))
    return min(res.fun, d.min())
