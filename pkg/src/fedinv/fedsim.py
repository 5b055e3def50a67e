"""Round-based federated simulator with stale uploads and a pretraining exit phase.

Timing model.  Every client holds the global model from its last sync.  On a
round where it delivers, it uploads one local step taken from that held
model and then syncs to the new global model.  On any other round the server
reuses the client's buffered upload.  Before round 1 every client delivers an
upload computed from the initial model.

Staleness at round ``t`` is ``t - last_upload_round``, where
``last_upload_round`` is the first round after the client's latest delivery
(or 1 for the initial upload).  ``SlowCompute(3)`` therefore logs 0, 1, 2,
0, 1, 2 over rounds 1..6 and delivers at rounds 3 and 6.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fedinv import evalkit, invobj
from fedinv import tensorcore as tc
from fedinv.errors import (ContractError, DegenerateGradient, EmptyCohortError,
                           NumericalError)
from fedinv.seeding import stream
from fedinv.theory import contribution

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# client behaviours

@dataclass(frozen=True)
class Normal:
    name = "normal"

    def delivers(self, t, rng):
        return True


@dataclass(frozen=True)
class SlowCompute:
    """Delivers only on rounds that are multiples of ``period``."""

    period: int
    name = "slow"

    def __post_init__(self):
        if int(self.period) != self.period or self.period < 1:
            raise ContractError(f"period must be an integer >= 1, got {self.period}")

    def delivers(self, t, rng):
        return t % self.period == 0


@dataclass(frozen=True)
class LossyLink:
    """Each round's upload gets through with probability ``success_prob``."""

    success_prob: float
    name = "lossy"

    def __post_init__(self):
        if not 0.0 <= self.success_prob <= 1.0:
            raise ContractError(f"success_prob must lie in [0, 1], got {self.success_prob}")

    def delivers(self, t, rng):
        return bool(rng.random() < self.success_prob)


@dataclass(frozen=True)
class HeterogeneousEnv:
    """Synchronous client whose data come from a shifted environment."""

    descriptor: str = ""
    name = "hetero"

    def delivers(self, t, rng):
        return True


@dataclass(frozen=True)
class ClientSpec:
    id: int
    weight_n: int
    behavior: object = Normal()

    def __post_init__(self):
        if self.weight_n < 1:
            raise ContractError(f"client {self.id}: weight_n must be >= 1")


@dataclass
class ClientState:
    held: np.ndarray            # model the client is computing from
    last_upload_round: int
    upload: np.ndarray          # buffered parameters the server aggregates
    upload_grad: np.ndarray     # risk gradient at the upload's base model
    rng: np.random.Generator
    staleness: int = 0


@dataclass
class ClientRound:
    id: int
    participated: bool
    staleness: int
    contribution_hat: float
    local_loss: float
    local_penalty: float
    degenerate: bool = False


@dataclass
class RoundRecord:
    t: int
    global_loss: float
    global_penalty_mean: float
    per_client: list = field(default_factory=list)
    id_acc: float = math.nan
    ood_acc: float = math.nan


@dataclass
class Summary:
    """Evaluation of the global model after ``t`` rounds."""

    t: int
    global_loss: float
    global_penalty_mean: float
    id_acc: float
    ood_acc: float


# ---------------------------------------------------------------------------
# pure steps

def _client_terms(params, spec, data, cfg, want_step, round=None, client_id=None):
    """Risk, risk gradient, inner product and (optionally) the objective gradient."""
    with np.errstate(over="ignore", invalid="ignore"):
        _, risk, inner, rgrad, fgrad = invobj.objective_terms(params, spec, data, cfg,
                                                              want_grad=want_step)
    bad = not (math.isfinite(risk) and np.all(np.isfinite(rgrad)))
    if want_step and not bad:
        bad = not np.all(np.isfinite(fgrad))
    if bad:
        raise NumericalError("non-finite loss or gradient", round, client_id)
    return risk, rgrad, inner, fgrad


def local_step(global_params, data, spec, eta, cfg, round=None, client_id=None):
    """One full-batch gradient step on the penalised local objective."""
    if not eta > 0:
        raise ContractError(f"eta must be positive, got {eta}")
    params = np.asarray(global_params, dtype=np.float64)
    fgrad = invobj.local_objective_grad(params, spec, data, cfg)
    if not np.all(np.isfinite(fgrad)):
        raise NumericalError("non-finite objective gradient", round, client_id)
    return params - eta * fgrad


def aggregate(uploads):
    """Weighted average of ``(params, weight)`` pairs, summed in the given order."""
    if not uploads:
        raise ContractError("nothing to aggregate")
    d = np.asarray(uploads[0][0]).shape
    total = math.fsum(w for _, w in uploads)
    if any(not w > 0 for _, w in uploads) or abs(total - 1.0) > 1e-12:
        raise ContractError(f"weights must be positive and sum to 1 (sum={total!r})")
    out = np.zeros(d)
    for params, w in uploads:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != d:
            raise ContractError("uploads differ in dimension")
        out += w * params
    return out


def weights_for(clients):
    """``n_i / n`` over the given clients, keyed by id."""
    n = sum(c.weight_n for c in clients)
    return {c.id: c.weight_n / n for c in clients}


def thread_cap():
    raw = os.environ.get("FEDINV_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# simulator

class Simulation:
    """Server plus clients; ``run_round`` advances by one round."""

    def __init__(self, spec, clients, train, eta, cfg, seed, contribution_L=1.0,
                 id_test=None, ood_test=None, workers=None, stream_prefix="delivery"):
        if not eta > 0:
            raise ContractError(f"eta must be positive, got {eta}")
        self.spec = spec
        self.clients = {c.id: c for c in clients}
        missing = sorted(set(self.clients) - set(train))
        if missing:
            raise ContractError(f"no training data for clients {missing}")
        self.train = train
        self.id_test = id_test or {}
        self.ood_test = ood_test
        self.eta = float(eta)
        self.cfg = cfg
        self.seed = seed
        self.contribution_L = float(contribution_L)
        self.workers = min(workers or thread_cap(), max(1, len(clients)))
        self.stream_prefix = stream_prefix
        self.cohort = sorted(self.clients)
        self.states = {}
        self.w = None
        self.t = 0

    # -- setup ---------------------------------------------------------------

    def set_cohort(self, ids):
        ids = sorted(ids)
        if not ids:
            raise EmptyCohortError("cohort is empty")
        unknown = sorted(set(ids) - set(self.clients))
        if unknown:
            raise ContractError(f"unknown clients {unknown}")
        self.cohort = ids

    @property
    def weights(self):
        return weights_for([self.clients[i] for i in self.cohort])

    def initialize(self, w0):
        """Reset the model, the round counter and every client's buffer."""
        self.w = np.array(w0, dtype=np.float64)
        self.t = 0
        self.states = {}
        results = self._map(lambda cid: self._update_from(self.w, cid, 0), self.cohort)
        for cid, (upload, rgrad) in zip(self.cohort, results):
            self.states[cid] = ClientState(held=self.w.copy(), last_upload_round=1, upload=upload,
                                           upload_grad=rgrad,
                                           rng=stream(self.seed, f"{self.stream_prefix}/{cid}"))

    def _map(self, fn, items):
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def _update_from(self, base, cid, t):
        _, rgrad, _, fgrad = _client_terms(base, self.spec, self.train[cid], self.cfg, True, t, cid)
        return base - self.eta * fgrad, rgrad

    # -- one round -----------------------------------------------------------

    def run_round(self, t=None):
        """Advance one round and return its record (losses are at the broadcast model)."""
        if self.w is None:
            raise ContractError("call initialize() first")
        t = self.t + 1 if t is None else t
        if t != self.t + 1:
            raise ContractError(f"expected round {self.t + 1}, got {t}")
        w = self.w
        # delivery draws happen on the coordinator in ascending id order
        delivers = {cid: self.clients[cid].behavior.delivers(t, self.states[cid].rng)
                    for cid in self.cohort}

        def work(cid):
            st = self.states[cid]
            fresh_step = delivers[cid] and st.last_upload_round == t
            risk, rgrad, inner, fgrad = _client_terms(w, self.spec, self.train[cid], self.cfg,
                                                      fresh_step, t, cid)
            if not delivers[cid]:
                return risk, rgrad, inner, None
            if fresh_step:
                return risk, rgrad, inner, (w - self.eta * fgrad, rgrad)
            return risk, rgrad, inner, self._update_from(st.held, cid, t)

        results = self._map(work, self.cohort)
        weights = self.weights
        n_total = sum(self.clients[c].weight_n for c in self.cohort)

        global_grad = np.zeros_like(w)
        global_loss = 0.0
        for cid, (risk, rgrad, _, _) in zip(self.cohort, results):
            global_grad += weights[cid] * rgrad
            global_loss += weights[cid] * risk

        entries = []
        for cid, (risk, rgrad, inner, new_upload) in zip(self.cohort, results):
            st = self.states[cid]
            st.staleness = t - st.last_upload_round
            if new_upload is not None:
                st.upload, st.upload_grad = new_upload
            try:
                c_hat = contribution(global_grad, st.upload_grad, self.eta,
                                     self.clients[cid].weight_n, n_total, self.contribution_L)
                degenerate = False
            except DegenerateGradient:
                c_hat, degenerate = 0.0, True
                log.debug("round %d client %d: degenerate global gradient", t, cid)
            entries.append(ClientRound(cid, delivers[cid], st.staleness, c_hat, risk,
                                       inner * inner, degenerate))

        w_next = aggregate([(self.states[cid].upload, weights[cid]) for cid in self.cohort])
        if not np.all(np.isfinite(w_next)):
            raise NumericalError("aggregated model is not finite", t)
        for cid in self.cohort:
            if delivers[cid]:
                st = self.states[cid]
                st.held = w_next
                st.last_upload_round = t + 1
        self.w = w_next
        self.t = t
        penalty_mean = float(np.mean([e.local_penalty for e in entries]))
        return RoundRecord(t, global_loss, penalty_mean, entries)

    # -- evaluation ----------------------------------------------------------

    def summarize(self, params=None):
        """Global loss, mean penalty and ID/OOD accuracy of ``params`` (default: current)."""
        w = self.w if params is None else params
        weights = self.weights
        loss, pens = 0.0, []
        for cid in self.cohort:
            risk, g, _ = tc._eval(w, self.spec, self.train[cid])
            loss += weights[cid] * risk
            pens.append(invobj.penalty(w, g))
        id_parts = [self.id_test[c] for c in self.cohort if c in self.id_test and len(self.id_test[c])]
        id_acc = evalkit.pooled_accuracy(w, self.spec, id_parts)
        ood_acc = math.nan
        if self.ood_test is not None and len(self.ood_test):
            ood_acc = evalkit.evaluate(w, self.spec, self.ood_test).accuracy
        return Summary(self.t, loss, float(np.mean(pens)), id_acc, ood_acc)


# ---------------------------------------------------------------------------
# exit strategy

@dataclass
class ExitDecision:
    included: frozenset
    scores: dict
    records: list

    @property
    def excluded(self):
        return frozenset(self.scores) - self.included


def pretrain_and_exit(sim, K, epsilon_exit, w0=None):
    """Score every client over ``K`` probe rounds and keep those above ``epsilon_exit``.

    The probe uses its own delivery streams and starts from ``w0`` (default:
    the current model); afterwards the simulator is re-initialised at ``w0``
    with the surviving cohort.
    """
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    w0 = np.array(sim.w if w0 is None else w0, dtype=np.float64)
    prefix, cohort = sim.stream_prefix, list(sim.cohort)
    sim.stream_prefix = "probe-" + prefix
    try:
        sim.initialize(w0)
        records = [sim.run_round() for _ in range(K)]
    finally:
        sim.stream_prefix = prefix
    scores = {cid: math.fsum(e.contribution_hat for r in records for e in r.per_client
                             if e.id == cid) / K for cid in cohort}
    included = frozenset(cid for cid in cohort if scores[cid] > epsilon_exit)
    if not included:
        raise EmptyCohortError(f"every client scored <= {epsilon_exit}; nobody left to train")
    sim.set_cohort(included)
    sim.initialize(w0)
    return ExitDecision(included, scores, records)


def run_experiment(config, out_dir=None, quiet=True):
    """Build data and clients from ``config``, run it, and write the outputs."""
    from fedinv.experiment import execute
    return execute(config, out_dir=out_dir, quiet=quiet)
