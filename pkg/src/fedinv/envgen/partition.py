"""Split environments into per-client train / in-distribution test sets."""

from dataclasses import dataclass, field

import numpy as np

from fedinv.errors import PlanError
from fedinv.seeding import stream
from fedinv.tensorcore import Dataset


@dataclass(frozen=True)
class PartitionPlan:
    """``client_env_map`` maps client id to env id.

    Clients that share an environment get disjoint, near-equal shares of it.
    ``holdout_env`` (optional) becomes the out-of-distribution test set.
    """

    client_env_map: dict
    holdout_env: int | None = None
    train_fraction: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise PlanError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.holdout_env is not None and self.holdout_env in self.client_env_map.values():
            clients = sorted(c for c, e in self.client_env_map.items() if e == self.holdout_env)
            raise PlanError(f"clients {clients} are mapped to holdout env {self.holdout_env}")


@dataclass
class Partition:
    train: dict = field(default_factory=dict)
    id_test: dict = field(default_factory=dict)
    ood_test: Dataset | None = None

    def id_test_union(self):
        parts = [self.id_test[c] for c in sorted(self.id_test) if len(self.id_test[c])]
        return Dataset.concat(parts) if parts else None


def partition_clients(envs, plan, seed):
    by_id = {e.env_id: e for e in envs}
    missing = sorted({e for e in plan.client_env_map.values() if e not in by_id})
    if plan.holdout_env is not None and plan.holdout_env not in by_id:
        missing.append(plan.holdout_env)
    if missing:
        raise PlanError(f"plan references unknown envs {missing}")

    out = Partition()
    rng = stream(seed, "partition")
    for env_id in sorted(set(plan.client_env_map.values())):
        env = by_id[env_id]
        clients = sorted(c for c, e in plan.client_env_map.items() if e == env_id)
        order = rng.permutation(len(env))
        for cid, share in zip(clients, np.array_split(order, len(clients))):
            n_train = int(round(plan.train_fraction * len(share)))
            train_idx, test_idx = np.sort(share[:n_train]), np.sort(share[n_train:])
            out.train[cid] = env.subset(train_idx)
            out.id_test[cid] = env.subset(test_idx)
    if plan.holdout_env is not None:
        out.ood_test = by_id[plan.holdout_env]
    return out
