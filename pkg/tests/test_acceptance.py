"""Desk-scale acceptance experiments, one test per criterion.

Every test prints a single ``[PASS]``/``[FAIL]`` line (also collected into
pytest's terminal summary). The toy-alignment runs behind criteria 3 to 6
are cached per session, so running the whole file trains each
configuration once.
"""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass

import numpy as np
import pytest

from skipwalk import nn
from skipwalk.evaluate import (align_entities, complete_triples, filtered_ranks,
                               frequency_baseline_ranks, summarize)
from skipwalk.kg import Kg, add_reverse_relations, build_joint_graph
from skipwalk.model import NoiseDistribution, RsnModel, TrainConfig, nce_backward, nce_forward
from skipwalk.nn import BatchNormState, LstmLayer
from skipwalk.pipeline import AlignmentTask, completion_walk_config, fit, run_alignment
from skipwalk.srp import DegreeDistribution, SamplingError, SrpConfig, ks_statistic, sample_dataset
from skipwalk.synthetic import coupled_power_law, isomorphic_pair, power_law_kg
from skipwalk.walker import WalkConfig

from conftest import small_joint
from gradcheck import model_grad_error, numeric_grad, rel_error
from oracles import brute_alignment_ranks, brute_ks, brute_metrics, brute_rank, tied_embeddings
from walklaw import pick_start, step_law_pvalue, uniform_law

RESULTS: dict[int, str] = {}


def report(n: int, name: str, passed: bool, detail: str):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {n} ({name}): {detail}"
    RESULTS[n] = line
    print("\n" + line)
    assert passed, line


# ---------------------------------------------------------------- toy alignment

TOY_SIZE = dict(n_entities=300, n_relations=15, avg_degree=6.0)
TOY_DIM = 64
TOY_NEGATIVES = 16
TOY_WALKS = 25  # walks per entity per epoch
SEEDS = (0, 1, 2)


@dataclass
class ToyRun:
    hits1: list  # per epoch, percent
    seconds: float  # training wall time, evaluation excluded
    predictions: int  # predicted positions per epoch

    @property
    def final(self) -> float:
        return self.hits1[-1]

    def epochs_to(self, level: float) -> float:
        for i, h in enumerate(self.hits1):
            if h >= level:
                return i + 1
        return float("inf")


def toy_task(seed: int, prior: float = 0.3) -> AlignmentTask:
    kg1, kg2, al = isomorphic_pair(**TOY_SIZE, seed=seed)
    pairs = np.array([(kg1.entity_index[a], kg2.entity_index[b]) for a, b in al])
    return AlignmentTask.from_pairs(kg1, kg2, pairs, prior, seed)


@functools.lru_cache(maxsize=None)
def toy_run(seed: int, variant: str = "rsn", prior: float = 0.3, length: int = 15,
            walks: int = TOY_WALKS, budget: int | None = None) -> ToyRun:
    task = toy_task(seed, prior)
    wc = WalkConfig(length=length, walks_per_entity=walks, seed=seed)
    # reference settings apart from the permitted d = 64
    tc = TrainConfig(dim=TOY_DIM, negatives=TOY_NEGATIVES, variant=variant, seed=seed)
    _, hist = run_alignment(task, wc, tc, eval_every=1, max_predictions=budget)
    n_walks = task.graph.n_entities * walks
    preds = min(n_walks * 2 * length, budget or n_walks * 2 * length)
    return ToyRun([h.metrics.hits1 for h in hist], sum(h.seconds for h in hist), preds)


# ---------------------------------------------------------------- 1


def test_criterion_1_walk_law():
    t0 = time.perf_counter()
    g, kg1, _, _, prior = small_joint(n_entities=25)
    assert g.n_entities == 50
    s = pick_start(g, prior, kg1.n_entities)
    p_bias, _, dof = step_law_pvalue(g, s, 0.9, 0.9, n_steps=10_000)
    p_unif, _, dof_u = step_law_pvalue(g, s, 0.5, 0.5, n_steps=10_000, law=uniform_law)
    secs = time.perf_counter() - t0
    ok = p_bias > 0.01 and p_unif > 0.01 and secs < 5
    report(1, "walk-law fidelity", ok,
           f"alpha=beta=0.9 p={p_bias:.3f} (dof {dof}); alpha=beta=0.5 vs uniform p={p_unif:.3f} "
           f"(dof {dof_u}); {secs:.2f}s")


# ---------------------------------------------------------------- 2


def _kernel_errors(rng) -> dict[str, float]:
    err = {}
    # LSTM over a sequence, inputs and all weights
    layer = LstmLayer(3, 4, rng)
    for p in layer.parameters().values():
        p.value += rng.normal(0, 0.3, p.shape)
    xs, R = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 4))
    f = lambda: float((layer.forward(xs)[0] * R).sum())
    dxs = layer.backward(R, layer.forward(xs)[1])
    err["lstm"] = max([rel_error(numeric_grad(f, xs), dxs)] +
                      [rel_error(numeric_grad(f, p.value), p.grad) for p in layer.parameters().values()])
    # batch norm with a padding mask
    st = BatchNormState.create(5)
    st.scale.value[...] = rng.uniform(0.5, 1.5, 5)
    st.shift.value[...] = rng.normal(size=5)
    x = rng.normal(size=(8, 5))
    mask = np.array([1, 1, 1, 0, 1, 1, 0, 1], dtype=bool)
    R = rng.normal(size=x.shape) * mask[:, None]
    f = lambda: float((nn.batchnorm_forward(x, st, mask)[0] * R).sum())
    dx = nn.batchnorm_backward(R, nn.batchnorm_forward(x, st, mask)[1], st)
    gs, gb = st.scale.grad.copy(), st.shift.grad.copy()
    err["batch norm"] = max(rel_error(numeric_grad(f, x), dx), rel_error(numeric_grad(f, st.scale.value), gs),
                            rel_error(numeric_grad(f, st.shift.value), gb))
    # dropout path: fixed mask, gradient through the kept units
    x = rng.normal(size=(6, 7))
    R = rng.normal(size=x.shape)
    f = lambda: float((nn.dropout_forward(x, 0.3, np.random.default_rng(5))[0] * R).sum())
    _, m = nn.dropout_forward(x, 0.3, np.random.default_rng(5))
    err["dropout"] = rel_error(numeric_grad(f, x), nn.dropout_backward(R, m))
    # embedding lookup with repeated ids
    table = rng.normal(size=(6, 4))
    ids = np.array([[0, 3, 3], [5, 0, 3]])
    R = rng.normal(size=(2, 3, 4))
    f = lambda: float((nn.embedding_forward(table, ids)[0] * R).sum())
    err["embedding"] = rel_error(numeric_grad(f, table), nn.embedding_backward(R, nn.embedding_forward(table, ids)[1]))
    # NCE heads, shared negatives with collisions masked
    h, W, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 9)), rng.normal(size=9)
    tgt, negs = rng.integers(9, size=5), rng.integers(9, size=4)
    nmask = (negs[None, :] != tgt[:, None]).astype(float)
    f = lambda: float(nce_forward(h, tgt, negs, W, b, nmask)[0].sum())
    dh, dW, db = nce_backward(np.ones(5), nce_forward(h, tgt, negs, W, b, nmask)[1])
    err["nce"] = max(rel_error(numeric_grad(f, h), dh), rel_error(numeric_grad(f, W), dW),
                     rel_error(numeric_grad(f, b), db))
    return err


def _model_errors() -> dict[str, float]:
    out = {}
    ne, nr = 20, 10
    rng = np.random.default_rng(5)
    tok = np.zeros((4, 7), dtype=np.int64)  # length 3: e r e r e r e
    tok[:, 0::2] = rng.integers(ne, size=(4, 4))
    tok[:, 1::2] = ne + rng.integers(nr, size=(4, 3))
    en, rn = NoiseDistribution(np.arange(1, ne + 1)), NoiseDistribution(np.arange(1, nr + 1))
    for variant in ("rsn", "rnn", "rrn"):
        cfg = TrainConfig(dim=8, negatives=5, dropout=0.2, variant=variant, dtype="float64")
        m = RsnModel(ne, nr, cfg, np.random.default_rng(1))
        prng = np.random.default_rng(2)
        for p in m.parameters().values():
            p.value += prng.normal(0, 0.1, p.shape)

        def loss():
            m.zero_grad()
            return m.loss_and_grads(tok, np.random.default_rng(9), en, rn)[0]

        out[f"model:{variant}"], _ = model_grad_error(m, loss, eps=1e-4)
        if variant == "rsn":
            loss()
            g = m.skip.grad.copy()
            out["skip"] = rel_error(numeric_grad(loss, m.skip.value, 1e-4), g)
    return out


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    err = {**_kernel_errors(np.random.default_rng(0)), **_model_errors()}
    secs = time.perf_counter() - t0
    worst = max(err.values())
    ok = worst <= 1e-4 and secs < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in err.items())
    report(2, "gradient integrity", ok, f"max rel err {worst:.1e} [{detail}]; {secs:.1f}s")


# ---------------------------------------------------------------- 3


@pytest.mark.slow
def test_criterion_3_toy_alignment():
    runs = [toy_run(s) for s in SEEDS]
    finals = [r.final for r in runs]
    secs = sum(r.seconds for r in runs)
    ok = all(f >= 90.0 for f in finals) and all(len(r.hits1) <= 30 for r in runs) and secs <= 600
    report(3, "toy alignment", ok,
           "Hits@1 after 30 epochs " + ", ".join(f"seed {s}: {f:.1f}%" for s, f in zip(SEEDS, finals))
           + f"; training {secs / 60:.1f} min for all seeds ({max(r.seconds for r in runs) / 60:.1f} min max per seed)")


# ---------------------------------------------------------------- 4


@pytest.mark.slow
def test_criterion_4_ablation():
    rows, wins = [], 0
    for s in SEEDS:
        rsn, rnn, rrn = toy_run(s), toy_run(s, "rnn"), toy_run(s, "rrn")
        fewer = rsn.epochs_to(60) < rnn.epochs_to(60)
        better = rsn.final >= rrn.final
        wins += fewer and better
        rows.append(f"seed {s}: epochs to 60% rsn {rsn.epochs_to(60)} vs rnn {rnn.epochs_to(60)}, "
                    f"final rsn {rsn.final:.1f} vs rrn {rrn.final:.1f}")
    report(4, "ablation direction", wins >= 2, f"{wins}/3 seeds hold; " + "; ".join(rows))


# ---------------------------------------------------------------- 5


@pytest.mark.slow
def test_criterion_5_walk_length():
    long = toy_run(0)
    # a length-5 walk predicts 10 positions against 30, so three times the walks
    short = toy_run(0, length=5, walks=3 * TOY_WALKS, budget=long.predictions)
    ok = long.final > short.final and short.predictions == long.predictions
    report(5, "walk-length trend", ok,
           f"Hits@1 length 15 {long.final:.1f}% vs length 5 {short.final:.1f}% "
           f"at {long.predictions} predictions per epoch")


# ---------------------------------------------------------------- 6


@pytest.mark.slow
def test_criterion_6_prior_fraction():
    fracs = (0.5, 0.4, 0.3, 0.2, 0.1)
    hits = [toy_run(0, prior=f).final for f in fracs]
    monotone = all(a >= b for a, b in zip(hits, hits[1:]))
    random_h1 = 100.0 / TOY_SIZE["n_entities"]
    ok = monotone and hits[-1] >= 10 * random_h1
    report(6, "prior-fraction trend", ok,
           ", ".join(f"{int(f * 100)}%: {h:.1f}" for f, h in zip(fracs, hits))
           + f"; random retrieval {random_h1:.2f}%, 10% run is {hits[-1] / random_h1:.0f}x")


# ---------------------------------------------------------------- 7


def _srp_best(avg_degree: float):
    kg1, kg2, pairs = coupled_power_law(100_000, 50, avg_degree, seed=0)
    cfg = SrpConfig(target_entities=15_000, epsilon=0.05, retries=10, seed=0)
    t0 = time.perf_counter()
    try:
        out = sample_dataset(kg1, kg2, pairs, cfg)
        stats = out.stats
    except SamplingError as e:
        stats = e.stats
    return stats, time.perf_counter() - t0


def test_criterion_7_srp():
    stats, secs = _srp_best(4.0)
    ks, n = max(stats["ks"]), stats["kg1"]["entities"]
    ok = ks <= 0.05 and stats["attempt"] <= 10 and secs < 120 and n >= 0.95 * 15_000
    # a denser source is harder at the default damping; shown, not judged
    dense_stats, _ = _srp_best(6.0)
    report(7, "SRP sampler", ok,
           f"K-S {ks:.4f} on attempt {stats['attempt']}, {n} entities / {stats['kg1']['triples']} triples, "
           f"{secs:.1f}s (source average degree 4; at degree 6 best K-S {max(dense_stats['ks']):.4f})")


# ---------------------------------------------------------------- 8

COMPLETION_EPOCHS = 20
COMPLETION_WALKS = 50  # 1k entities: 50 walks each gives about 100 updates per epoch


def completion_split(seed: int = 0, n_test: int = 500):
    """1k-entity community KG; held-out triples keep all their entities."""
    kg = power_law_kg(1000, 10, 8.0, np.random.default_rng(seed), exponent=2.5)
    t = kg.triples
    deg = kg.degrees().copy()
    held = []
    for i in np.random.default_rng(seed + 1).permutation(len(t)):
        s, _, o = t[i]
        if len(held) < n_test and deg[s] > 1 and deg[o] > 1:
            held.append(i)
            deg[s] -= 1
            deg[o] -= 1
    rest = np.setdiff1d(np.arange(len(t)), held)
    return Kg(kg.entities, kg.relations, t[rest]), t[np.sort(held)]


@pytest.mark.slow
def test_criterion_8_completion():
    train, test = completion_split()
    g = build_joint_graph(add_reverse_relations(train))
    wc = completion_walk_config(WalkConfig(walks_per_entity=COMPLETION_WALKS, seed=0))
    tc = TrainConfig(dim=TOY_DIM, negatives=TOY_NEGATIVES, epochs=COMPLETION_EPOCHS, seed=0)
    model, _ = fit(g, wc, tc)
    nb = train.n_relations
    known = add_reverse_relations(Kg(train.entities, train.relations,
                                     np.concatenate([train.triples, test]))).triples
    res, _ = complete_triples(model, test, nb, known)
    base = summarize(frequency_baseline_ranks(test, nb, known, train.n_entities,
                                              counts_from=add_reverse_relations(train).triples))
    ok = res.hits10 >= 2 * base.hits10
    report(8, "completion sanity", ok,
           f"filtered Hits@10 model {res.hits10:.1f}% vs frequency baseline {base.hits10:.1f}% "
           f"({res.hits10 / max(base.hits10, 1e-9):.1f}x), {len(test)} test triples both directions")


# ---------------------------------------------------------------- 9


def test_criterion_9_metric_oracles():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        n1, n2, d = int(rng.integers(2, 8)), int(rng.integers(2, 14)), int(rng.integers(1, 5))
        emb = tied_embeddings(rng, n1 + n2, d)
        k = int(rng.integers(1, min(n1, n2) + 1))
        pairs = np.stack([rng.choice(n1, k, replace=False), n1 + rng.choice(n2, k, replace=False)], 1)
        res = align_entities(emb, pairs, n1, n2)
        ref = brute_metrics(brute_alignment_ranks(emb, pairs[:, 0], pairs[:, 1], list(range(n1, n1 + n2))))
        worst = max(worst, abs(res.hits1 - ref[0]), abs(res.hits10 - ref[1]), abs(res.mrr - ref[2]))
    for _ in range(1000):
        n_q, n_e = int(rng.integers(1, 5)), int(rng.integers(2, 16))
        scores = rng.integers(0, 4, size=(n_q, n_e)).astype(float)
        ans = rng.integers(n_e, size=n_q)
        known = [set(rng.choice(n_e, int(rng.integers(0, n_e)), replace=False).tolist()) for _ in ans]
        _, filt = filtered_ranks(scores, ans, known)
        ref = [brute_rank(scores[i], ans[i], [c for c in range(n_e) if c not in known[i] or c == ans[i]])
               for i in range(n_q)]
        a, b = summarize(filt), brute_metrics(ref)
        worst = max(worst, abs(a.hits1 - b[0]), abs(a.hits10 - b[1]), abs(a.mrr - b[2]))
    for _ in range(1000):
        x = rng.integers(0, 30, size=int(rng.integers(1, 40)))
        y = rng.integers(0, 30, size=int(rng.integers(1, 40)))
        ks = ks_statistic(DegreeDistribution(x), DegreeDistribution(y))
        worst = max(worst, abs(ks - brute_ks(x, y)))
    report(9, "metric oracles", worst <= 1e-12,
           f"3 x 1000 randomized trials (alignment Hits@k/MRR, filtered ranks, K-S), max deviation {worst:.1e}")
