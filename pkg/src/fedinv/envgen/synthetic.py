"""Multi-environment binary task with invariant and spurious features.

Labels are balanced coin flips ``y in {0, 1}``; write ``s = 2y - 1``.

* Invariant block (``d_inv`` columns): ``s * inv_mean * u + inv_noise * eps``
  with ``u`` the normalised all-ones direction.  This law is the same in every
  environment, and the Bayes rule ``sign(u . x_inv)`` scores
  ``Phi(inv_mean / inv_noise)`` everywhere.
* Spurious block (``d_spur`` columns): ``c * s * (1 + spur_noise * |eps|)``
  where ``c = +1`` with probability ``(1 + corr) / 2`` and ``-1`` otherwise.
  One ``c`` is drawn per sample and shared by all spurious columns.  The
  expected agreement ``E[c]`` between the spurious sign and the label is
  ``corr``.
"""

import math

import numpy as np

from fedinv.errors import ContractError, DomainError
from fedinv.seeding import stream
from fedinv.tensorcore import Dataset


def bayes_accuracy(inv_mean, inv_noise):
    """Accuracy of the invariant-feature Bayes rule (same in every environment)."""
    return 0.5 * (1.0 + math.erf(inv_mean / (inv_noise * math.sqrt(2.0))))


def invariant_direction(d_inv):
    return np.full(d_inv, 1.0 / math.sqrt(d_inv))


def gen_synthetic_envs(num_envs, n_per_env, d_inv, d_spur, corr_schedule, flip_test=False,
                       seed=0, inv_mean=1.0, inv_noise=1.0, spur_noise=0.1):
    corrs = [float(c) for c in corr_schedule]
    if len(corrs) != num_envs:
        raise ContractError(f"corr_schedule has {len(corrs)} entries for {num_envs} envs")
    if d_inv < 1 or d_spur < 1 or n_per_env < 1:
        raise ContractError("d_inv, d_spur and n_per_env must be >= 1")
    bad = [c for c in corrs if not abs(c) <= 1.0]
    if bad:
        raise DomainError(f"spurious correlation outside [-1, 1]: {bad}")
    if flip_test:
        corrs[-1] = -corrs[-1]

    rng = stream(seed, "datagen")
    u = invariant_direction(d_inv)
    envs = []
    for e, corr in enumerate(corrs):
        y = rng.integers(0, 2, size=n_per_env)
        s = (2 * y - 1).astype(np.float64)
        x_inv = (s * inv_mean)[:, None] * u + inv_noise * rng.standard_normal((n_per_env, d_inv))
        c = np.where(rng.random(n_per_env) < 0.5 * (1.0 + corr), 1.0, -1.0)
        mag = 1.0 + spur_noise * np.abs(rng.standard_normal((n_per_env, d_spur)))
        x_spur = (c * s)[:, None] * mag
        agreement = float(np.mean(c))
        # 6 standard errors: a failure here means the sampler is broken, not unlucky
        if abs(agreement - corr) > 6.0 * math.sqrt(max(1.0 - corr * corr, 0.0) / n_per_env) + 1e-12:
            raise AssertionError(f"env {e}: spurious agreement {agreement} far from {corr}")
        meta = {"spurious_corr": corr, "empirical_corr": agreement, "rotation_deg": 0.0,
                "stain_mode": "none", "palette_size": 0, "d_inv": d_inv, "d_spur": d_spur}
        envs.append(Dataset(np.hstack([x_inv, x_spur]), y, env_id=e, meta=meta))
    return envs
