"""Reduced oracle checks runnable from an installed package (``ratetune selftest``).

Each check compares the library against a brute-force reference on a small
random family; the full-size versions live in the test suite.
"""

from __future__ import annotations

import itertools
import math
import time
from typing import Callable

import numpy as np

from .inference import InferenceConfig, exact_posterior, chain_graph, infer_rates
from .metrics import confusion_rates, exploitation_probability
from .model import ObservationDataset, SamplingVector
from .selection import Batch, Budget, SelectionProblem, select_batches


def _random_dataset(rng, n_samples, n_classifiers):
    rows = []
    for _ in range(n_samples):
        k = int(rng.integers(1, min(3, n_classifiers) + 1))
        flags = rng.choice(n_classifiers, size=k, replace=False).tolist()
        rows.append((bool(rng.random() < 0.5), flags, float(rng.uniform(0.1, 1.0))))
    return ObservationDataset.from_rows(rows)


def check_exploitation(rng) -> str | None:
    for _ in range(5):
        rates = SamplingVector(rng.random(4))
        flags = [0, 2, 3]
        trials = 200_000
        draws = rng.random((trials, 3)) < rates.rates[flags]
        est = draws.any(axis=1).mean()
        p = exploitation_probability(flags, rates)
        se = math.sqrt(max(p * (1 - p), 1e-12) / trials)
        if abs(est - p) > 4 * se:
            return f"exploitation probability {p:.5f} vs Monte-Carlo {est:.5f}"
    return None


def check_confusion(rng) -> str | None:
    for _ in range(3):
        ds = _random_dataset(rng, 20, 5)
        if not any(s.malicious for s in ds) or all(s.malicious for s in ds):
            continue
        rates = SamplingVector(rng.random(5))
        cr = confusion_rates(ds, rates)
        trials = 20_000
        g = np.array([s.malicious for s in ds])
        w = np.array([s.weight for s in ds])
        mask = np.zeros((len(ds), 5), bool)
        for i, s in enumerate(ds):
            mask[i, sorted(s.flags)] = True
        hit = ((rng.random((trials, 1, 5)) < rates.rates) & mask).any(axis=2)
        tp = (hit[:, g] * w[g]).sum(axis=1) / w[g].sum()
        if abs(tp.mean() - cr.tp) > 4 * tp.std(ddof=1) / math.sqrt(trials) + 1e-12:
            return f"TP rate {cr.tp:.5f} vs Monte-Carlo {tp.mean():.5f}"
    return None


def check_selection(rng) -> str | None:
    for _ in range(40):
        n = int(rng.integers(1, 11))
        batches = [
            Batch(frozenset([i]), float(rng.uniform(0, 10)), float(rng.uniform(0, 10)))
            for i in range(n)
        ]
        beta = float(rng.choice([0.0, 0.5, 1.0, 2.0]))
        got = select_batches(SelectionProblem(tuple(batches), Budget(beta))).value
        best = min(
            math.fsum(b.fp_mass if on else beta * b.tp_mass for b, on in zip(batches, v))
            for v in itertools.product((False, True), repeat=n)
        )
        if got != best:
            return f"selection value {got!r} differs from enumeration {best!r}"
    return None


def check_chain(rng) -> str | None:
    m = infer_rates(chain_graph()).marginals
    if np.max(np.abs(m - 1.0)) > 1e-6:
        return f"all-true evidence gave {m.tolist()}"
    m = infer_rates(chain_graph((True, True, True, False, True))).marginals
    if np.max(np.abs(m - np.array([1.0, 0.5, 0.5]))) > 0.05:
        return f"one false factor gave {m.tolist()}"
    return None


def check_tree_exact(rng) -> str | None:
    from .inference import Factor, FactorGraph

    cfg = InferenceConfig(tolerance=1e-10, max_iterations=2000)
    for _ in range(10):
        n = int(rng.integers(2, 8))
        hidden = rng.random(n) < 0.6
        scopes = [(int(rng.integers(0, i)), i) for i in range(1, n)]
        scopes += [(i,) for i in range(n) if rng.random() < 0.3]
        factors = [Factor(s, bool(hidden[list(s)].any())) for s in scopes]
        g = FactorGraph(n, tuple(factors))
        err = np.max(np.abs(infer_rates(g, cfg).marginals - exact_posterior(g)))
        if err > 1e-6:
            return f"tree marginals off by {err:.2e}"
    return None


CHECKS: dict[str, Callable] = {
    "exploitation probability vs Monte-Carlo": check_exploitation,
    "confusion rates vs Monte-Carlo": check_confusion,
    "batch selection vs enumeration": check_selection,
    "inference on the five-factor example": check_chain,
    "inference exact on trees": check_tree_exact,
}


def run_selftest(seed: int = 0, echo: Callable[[str], None] = print) -> bool:
    ok = True
    for i, (name, fn) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        problem = fn(rng)
        dt = time.perf_counter() - t0
        if problem is None:
            echo(f"PASS  {name} ({dt:.1f}s)")
        else:
            ok = False
            echo(f"FAIL  {name}: {problem}")
    return ok
