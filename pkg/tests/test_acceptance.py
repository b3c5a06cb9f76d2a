"""Acceptance criteria 1-9. The summary hook in conftest prints one PASS/FAIL line each."""
import time

import numpy as np
import pytest

from chainqa import autodiff as ad
from chainqa.answer_filter import FilterModel, filter_loss, train_filter
from chainqa.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from chainqa.dataset import QAExample, resolve
from chainqa.embedding import (BatchNegativeSampler, ComplexEmbeddingTable, ComplexVector, EmbeddingTrainConfig,
                               complex_score, embedding_loss, link_prediction_eval, train_embeddings)
from chainqa.encoder import Vocabulary
from chainqa.kg import KnowledgeGraph, augment_reverse, chains_from
from chainqa.pipeline import (Pipeline, desk_config, evaluate, filter_only, fit_reasoner, prepare_graph,
                              run_half_ablation, train_pipeline)
from chainqa.reasoner import ReasonerModel, encode_chain_side, encode_question_side, mse_loss, similarity
from chainqa.synthetic import DEFAULT_TEMPLATES, SyntheticSpec, generate_synthetic_benchmark
from gradcheck import check_gradients
from oracles import brute_force_chains, complex_oracle, random_graph
from test_autodiff import BINARY, UNARY

pytestmark = pytest.mark.slow


def detail(record_property, text):
    record_property("detail", text)


# ---------------------------------------------------------------- 1

def test_criterion_1_complex_oracle(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for d in (1, 2, 8):
        for _ in range(1000):
            z = [rng.normal(size=d) + 1j * rng.normal(size=d) for _ in range(3)]
            got = complex_score(*(ComplexVector(v.real, v.imag) for v in z))
            want = complex_oracle(*z)
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    seconds = time.perf_counter() - start
    detail(record_property, f"max rel err {worst:.2e}, {seconds:.2f}s")
    assert worst <= 1e-12 and seconds < 1.0


# ---------------------------------------------------------------- 2

def test_criterion_2_gradient_suite(record_property):
    start = time.perf_counter()
    checked = 0
    rng = np.random.default_rng(7)
    for name, fn in sorted(UNARY.items()):
        data = rng.normal(size=(4, 3))
        if name == "relu":
            data = np.where(np.abs(data) < 0.1, 0.5, data)
        x = ad.parameter(data)
        w = rng.normal(size=fn(ad.Tensor(data)).shape)
        check_gradients(lambda: ad.sum(ad.mul(fn(x), w)), {"x": x})
        checked += 1
    for name, fn in sorted(BINARY.items()):
        a, b = ad.parameter(rng.normal(size=(3, 4))), ad.parameter(rng.normal(size=(3, 4)))
        w = rng.normal(size=fn(ad.Tensor(a.data), ad.Tensor(b.data)).shape)
        check_gradients(lambda: ad.sum(ad.mul(fn(a, b), w)), {"a": a, "b": b})
        checked += 1

    kg = augment_reverse(KnowledgeGraph.build([f"e{i}" for i in range(6)], ["r", "s"],
                                              [(0, 0, 1), (1, 1, 2), (2, 0, 3), (4, 1, 5), (3, 1, 0)]))
    table = ComplexEmbeddingTable.random(kg.n_entities, kg.n_relations, 2, seed=1)
    params = [ad.parameter(a.copy()) for a in table.arrays()]
    pos = kg.triple_array()[:5]
    neg = BatchNegativeSampler(kg).sample(pos, 3, rng)
    check_gradients(lambda: embedding_loss(params, pos, neg, 0.05), dict(zip("abcd", params)))
    checked += 1

    vocab = Vocabulary(["who", "is", "of", "what"])
    questions = [QAExample("who is r of [e0]", "e0", ("e1",)), QAExample("what is s of [e1]", "e1", ("e2", "e3"))]
    filt = FilterModel(table, vocab, hidden=2, rng=np.random.default_rng(3), mask_topic=True)
    ids = np.asarray([filt.tokens(q).ids for q in questions])
    topics = np.array([0, 1])
    answers = [frozenset({1}), frozenset({2, 3})]
    check_gradients(lambda: filter_loss(filt, topics, ids, answers), filt.named_parameters())
    checked += 1

    reasoner = ReasonerModel(table, vocab, hidden=2, rng=np.random.default_rng(4), dropout=0.0)
    qs = [tuple(reasoner.tokens(q).ids) for q in questions]
    chains = [(0,), (1, 2), (3, 0)]
    check_gradients(lambda: mse_loss(reasoner, qs, chains, np.array([0, 0, 1, 1]), np.array([0, 1, 1, 2]),
                                     np.array([1.0, 0.0, 1.0, 0.0])), reasoner.named_parameters())
    checked += 1
    seconds = time.perf_counter() - start
    detail(record_property, f"{checked} gradient paths within 1e-4, {seconds:.1f}s")
    assert seconds < 60


# ---------------------------------------------------------------- 3

def test_criterion_3_chain_oracle(record_property):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    pairs = 0
    for _ in range(100):
        kg = random_graph(rng, max_nodes=12, max_edges=40)
        for source in range(kg.n_entities):
            fast = chains_from(kg, source, 4)
            slow = brute_force_chains(kg, source, 4)
            for target in range(kg.n_entities):
                a, b = fast.get(target), slow.get(target)
                assert (a is None) == (b is None)
                assert a is None or len(a) == len(b)
                pairs += 1
    seconds = time.perf_counter() - start
    detail(record_property, f"{pairs} ordered pairs agree, {seconds:.2f}s")
    assert seconds < 10


# ---------------------------------------------------------------- 4

def inverse_pattern_graph(seed=0, n=200, links=600, held=200):
    """Facts come in inverse or symmetric pairs; each held-out triple keeps its partner in training."""
    rng = np.random.default_rng(seed)
    names = ["likes", "liked_by", "parent_of", "child_of", "sibling_of", "married_to"]
    partner = {0: 1, 1: 0, 2: 3, 3: 2, 4: 4, 5: 5}
    facts = set()
    for _ in range(links):
        h, t = (int(x) for x in rng.choice(n, 2, replace=False))
        r = (0, 2, 4, 5)[int(rng.integers(4))]
        facts |= {(h, r, t), (t, partner[r], h)}
    facts = sorted(facts)
    test, taken = [], set()
    for i in rng.permutation(len(facts)):
        h, r, t = facts[i]
        if (t, partner[r], h) in taken:
            continue
        test.append((h, r, t))
        taken.add((h, r, t))
        if len(test) == held:
            break
    kg = KnowledgeGraph.build([f"e{i}" for i in range(n)], names, [f for f in facts if f not in taken])
    return kg, test


def test_criterion_4_link_prediction(record_property):
    start = time.perf_counter()
    kg, held = inverse_pattern_graph()
    table = train_embeddings(kg, EmbeddingTrainConfig(dim=16, epochs=100, batch_size=128, l2_weight=1e-4, seed=0))
    report = link_prediction_eval(table, kg, held)
    seconds = time.perf_counter() - start
    detail(record_property, f"filtered hits@10 {report.hits[10]:.3f} (mrr {report.mrr:.3f}) on "
                            f"{report.count} held-out triples, {seconds:.1f}s")
    assert report.hits[10] >= 0.8 and seconds < 300


# ---------------------------------------------------------------- shared synthetic runs

@pytest.fixture(scope="module")
def bench():
    return generate_synthetic_benchmark(SyntheticSpec(), seed=0)


@pytest.fixture(scope="module")
def full_run(bench):
    start = time.perf_counter()
    trained = train_pipeline(bench.kg, bench.train, bench.dev, desk_config())
    report = evaluate(trained.pipeline, bench.test)
    return trained, report, time.perf_counter() - start


@pytest.fixture(scope="module")
def staged_run(bench):
    """The same pipeline built stage by stage, snapshotting the embeddings before downstream training."""
    config = desk_config()
    graph = prepare_graph(bench.kg, config)
    table = train_embeddings(graph, config.kge_config())
    snapshot = [a.copy() for a in table.arrays()]
    filt = train_filter(graph, table, bench.train, config.filter_config(), bench.dev)
    pipe = Pipeline(graph, table, filt, None, config.top_n, True, config.max_chain_len)
    fit_reasoner(pipe, bench.train, bench.dev, config)
    return pipe, snapshot, evaluate(pipe, bench.test)


def save(pipe, path):
    save_checkpoint(Checkpoint(pipe.table, pipe.filter, pipe.reasoner, desk_config().to_mapping()), path)
    return path.read_bytes()


# ---------------------------------------------------------------- 5

def test_criterion_5_end_to_end(record_property, bench, full_run):
    trained, report, seconds = full_run
    ablated = evaluate(filter_only(trained.pipeline), bench.test)
    gap = report.hit1 - ablated.hit1
    detail(record_property, f"hit@1 {report.hit1:.3f} vs reasoner-disabled {ablated.hit1:.3f} "
                            f"(gap {100 * gap:.1f} pts), {bench.kg.n_entities} entities, "
                            f"{len(bench.train)}/{len(bench.test)} train/test, {seconds:.0f}s")
    assert report.hit1 >= 0.85
    assert gap >= 0.05
    assert seconds < 15 * 60


# ---------------------------------------------------------------- 6

def test_criterion_6_order_sensitivity(record_property, bench, full_run):
    trained, _, _ = full_run
    pipe = trained.pipeline
    model = pipe.reasoner
    templates = {t.name: t for t in DEFAULT_TEMPLATES}
    wins = total = 0
    for ex in bench.test:
        path = tuple(pipe.kg.relation_id(r) for r in templates[bench.template_of[ex.question]].path)
        if len(path) != 2 or path == path[::-1]:
            continue
        vq = encode_question_side(model, model.tokens(ex))
        wins += similarity(vq, encode_chain_side(model, path)) > similarity(vq, encode_chain_side(model, path[::-1]))
        total += 1
    rate = wins / total
    detail(record_property, f"gold order preferred in {wins}/{total} = {rate:.3f}")
    assert total > 0 and rate >= 0.9


# ---------------------------------------------------------------- 7

def test_criterion_7_half_kg(record_property, bench, full_run):
    trained, _, _ = full_run
    report = run_half_ablation(bench.kg, bench.train, bench.dev, bench.test, desk_config(), full=trained)
    detail(record_property, f"full {report.full.hit1:.3f}, half {report.half.hit1:.3f}, "
                            f"half filter-only {report.half_filter.hit1:.3f} "
                            f"({report.half_triples}/{report.full_triples} triples)")
    assert report.half_triples < report.full_triples
    assert report.half.hit1 < report.full.hit1
    assert report.half.hit1 >= report.half_filter.hit1
    for r in (report.full, report.half, report.full_filter, report.half_filter):
        assert r.hits[1] <= r.hits[5] <= r.hits[10]
        assert r.hit1 <= r.filter_hits[r.top_n]


# ---------------------------------------------------------------- 8

def test_criterion_8_structural_invariants(record_property, tmp_path, bench, full_run, staged_run):
    trained, report, _ = full_run
    pipe, snapshot, _ = staged_run
    reports = [report, evaluate(filter_only(trained.pipeline), bench.test)]
    for r in reports:
        assert r.hits[1] <= r.hits[5] <= r.hits[10]
        assert r.hit1 <= r.filter_hits[r.top_n]
        assert len(r.traces) == r.evaluated
    frozen = all(np.array_equal(a, b) for a, b in zip(snapshot, pipe.table.arrays()))
    frozen &= np.array_equal(pipe.filter._entities, pipe.table.entity_matrix())
    frozen &= np.array_equal(pipe.reasoner.relations, pipe.table.relation_matrix())
    assert frozen
    first = save(trained.pipeline, tmp_path / "a.ckpt")
    ckpt = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(ckpt, tmp_path / "b.ckpt")
    assert (tmp_path / "b.ckpt").read_bytes() == first
    assert (tmp_path / "b.ckpt.meta").read_bytes() == (tmp_path / "a.ckpt.meta").read_bytes()
    detail(record_property, "monotone hits, top-N bound, frozen tables, bit-identical checkpoint round trip")


# ---------------------------------------------------------------- 9

def test_criterion_9_determinism(record_property, tmp_path, bench, full_run, staged_run):
    trained, report, _ = full_run
    pipe, _, again = staged_run
    assert again.hits == report.hits and again.filter_hits == report.filter_hits
    assert [t.answer for t in again.traces] == [t.answer for t in report.traces]
    a = save(trained.pipeline, tmp_path / "first.ckpt")
    b = save(pipe, tmp_path / "second.ckpt")
    assert a == b
    detail(record_property, f"identical metrics (hit@1 {report.hit1:.3f}) and {len(a)}-byte checkpoints")
