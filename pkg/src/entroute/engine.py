"""Two-phase time-slot Monte Carlo engine.

Each trial is one time slot. The external phase samples every edge
independently (up with probability p(e)); the internal phase is never
sampled: evaluators return the exact conditional expectation of their
score given the external state, which keeps estimator variance down
without biasing the mean.

Reproducibility contract: the random stream for trial t is derived
from (seed, t) alone, trials are grouped into fixed-size batches, and
batch partials are reduced in batch-index order with exactly-rounded
summation. Results are therefore bit-identical for any worker count
and any scheduling order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from .topology import LinkModel, Topology

# Trials per batch. Part of the stream layout: changing it moves the
# early-stop check points, so it is a constant, not a knob.
BATCH_SIZE = 256


@dataclass(frozen=True)
class RateEstimate:
    """Monte Carlo mean with its standard error."""

    mean: float
    stderr: float
    trials: int

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("estimate needs at least one trial")


@dataclass(frozen=True)
class SimParams:
    """Simulation parameters for one run.

    stop_rel_err, when set, ends the run at the first batch boundary
    where stderr/|mean| falls at or below the target; trials remains
    the hard cap either way.
    """

    link: LinkModel
    q: float
    trials: int
    seed: int
    stop_rel_err: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"swap success q must lie in [0, 1], got {self.q}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.stop_rel_err is not None and self.stop_rel_err <= 0.0:
            raise ValueError("stop_rel_err must be positive when given")

    def with_trials(self, trials: int) -> "SimParams":
        return replace(self, trials=trials)


@dataclass(frozen=True)
class LinkInstance:
    """External-phase outcome for one slot: per-edge up flags."""

    up: np.ndarray  # uint8, length E

    @property
    def num_up(self) -> int:
        return int(self.up.sum())


def trial_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for one trial, derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(index))))


def derive_seed(seed: int, *ids: int) -> int:
    """Derived 64-bit sub-seed for a named sub-run (e.g. per node)."""
    ss = np.random.SeedSequence(entropy=(int(seed), 0x5EED) + tuple(int(i) for i in ids))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_external_phase(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample per-edge up flags; always consumes exactly E uniforms."""
    return (rng.random(probs.shape[0]) < probs).astype(np.uint8)


# A batch evaluator receives the sampled up-matrix (B, E), the
# per-trial generators (already advanced past the edge draws) and the
# global index of the first trial in the batch. It returns per-trial
# values, shape (B,) or (B, k).
BatchEvaluator = Callable[[np.ndarray, "list[np.random.Generator]", int], np.ndarray]


def _batch_bounds(trials: int) -> Iterator[tuple[int, int]]:
    start = 0
    while start < trials:
        yield start, min(start + BATCH_SIZE, trials)
        start = start + BATCH_SIZE


def _eval_batch(
    probs: np.ndarray,
    seed: int,
    start: int,
    stop: int,
    evaluator: BatchEvaluator,
) -> tuple[list[float], list[float], int]:
    rngs = [trial_stream(seed, t) for t in range(start, stop)]
    up_mat = np.empty((stop - start, probs.shape[0]), dtype=np.uint8)
    for i, rng in enumerate(rngs):
        up_mat[i] = sample_external_phase(probs, rng)
    values = np.asarray(evaluator(up_mat, rngs, start), dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    sums = [math.fsum(values[:, j]) for j in range(values.shape[1])]
    sq_sums = [math.fsum(values[:, j] ** 2) for j in range(values.shape[1])]
    return sums, sq_sums, values.shape[0]


def _finalise(sums: Sequence[float], sq_sums: Sequence[float], n: int) -> list[RateEstimate]:
    out = []
    for s, s2 in zip(sums, sq_sums):
        mean = s / n
        if n > 1:
            var = max(s2 - n * mean * mean, 0.0) / (n - 1)
            stderr = math.sqrt(var / n)
        else:
            stderr = 0.0
        out.append(RateEstimate(mean=mean, stderr=stderr, trials=n))
    return out


def run_batched(
    topology: Topology,
    params: SimParams,
    evaluator: BatchEvaluator,
    workers: int = 1,
    components: int = 1,
) -> list[RateEstimate]:
    """Run trials through a batch evaluator; the estimator work-horse.

    Batches are dispatched to `workers` threads but reduced strictly in
    batch-index order; the optional early-stop rule is evaluated on the
    index-ordered prefix (component 0), so the outcome is independent
    of scheduling.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    probs = params.link.edge_probs(topology)
    bounds = list(_batch_bounds(params.trials))
    batch_sums: list[list[float]] = [[] for _ in range(components)]
    batch_sq: list[list[float]] = [[] for _ in range(components)]
    n_done = 0

    def reduce_one(res: tuple[list[float], list[float], int]) -> bool:
        """Fold in one batch (in index order); True means stop early."""
        nonlocal n_done
        sums, sq_sums, n = res
        if len(sums) != components:
            raise ValueError(
                f"evaluator returned {len(sums)} components, expected {components}"
            )
        for j in range(components):
            batch_sums[j].append(sums[j])
            batch_sq[j].append(sq_sums[j])
        n_done += n
        if params.stop_rel_err is not None and n_done > 1:
            s = math.fsum(batch_sums[0])
            s2 = math.fsum(batch_sq[0])
            mean = s / n_done
            var = max(s2 - n_done * mean * mean, 0.0) / (n_done - 1)
            stderr = math.sqrt(var / n_done)
            if mean != 0.0 and stderr / abs(mean) <= params.stop_rel_err:
                return True
        return False

    if workers == 1:
        for start, stop in bounds:
            if reduce_one(_eval_batch(probs, params.seed, start, stop, evaluator)):
                break
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            it = iter(bounds)
            pending: dict[int, object] = {}
            submitted = 0
            for _ in range(workers + 1):
                try:
                    start, stop = next(it)
                except StopIteration:
                    break
                pending[submitted] = pool.submit(
                    _eval_batch, probs, params.seed, start, stop, evaluator)
                submitted += 1
            next_reduce = 0
            while next_reduce in pending:
                res = pending.pop(next_reduce).result()  # type: ignore[union-attr]
                next_reduce += 1
                if reduce_one(res):
                    for fut in pending.values():
                        fut.cancel()  # type: ignore[union-attr]
                    break
                try:
                    start, stop = next(it)
                    pending[submitted] = pool.submit(
                        _eval_batch, probs, params.seed, start, stop, evaluator)
                    submitted += 1
                except StopIteration:
                    pass

    comp_sums = [math.fsum(batch_sums[j]) for j in range(components)]
    comp_sq = [math.fsum(batch_sq[j]) for j in range(components)]
    return _finalise(comp_sums, comp_sq, n_done)


def run_trials(
    topology: Topology,
    params: SimParams,
    per_trial: Callable[[LinkInstance, np.random.Generator], float],
    workers: int = 1,
) -> RateEstimate:
    """Estimate the mean of a per-slot evaluator.

    per_trial receives the sampled LinkInstance and the trial's own
    random stream (already past the edge draws) and returns the slot
    value; internal randomness, if any, must come from that stream.
    """

    def batch_eval(up_mat, rngs, start):
        out = np.empty(up_mat.shape[0])
        for i in range(up_mat.shape[0]):
            out[i] = per_trial(LinkInstance(up=up_mat[i]), rngs[i])
        return out

    return run_batched(topology, params, batch_eval, workers=workers)[0]


def connectivity_probability(
    topology: Topology,
    params: SimParams,
    alice: int,
    bob: int,
    workers: int = 1,
) -> RateEstimate:
    """Probability that an up-path connects the endpoints in a slot."""
    from ._kernels import shortest_path_batch

    check_endpoints(topology, alice, bob)
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = topology.degrees

    def batch_eval(up_mat, rngs, start):
        k = shortest_path_batch(up_mat, inc_e, inc_n, deg, alice, bob)
        return (k >= 0).astype(np.float64)

    return run_batched(topology, params, batch_eval, workers=workers)[0]


def check_endpoints(topology: Topology, alice: int, bob: int) -> None:
    v = topology.num_nodes
    if not (0 <= alice < v and 0 <= bob < v):
        raise ValueError(f"endpoints ({alice}, {bob}) outside node range 0..{v - 1}")
    if alice == bob:
        raise ValueError("Alice and Bob must be distinct nodes")
