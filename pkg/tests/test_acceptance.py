"""Acceptance gate: every release criterion, each at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. The timed criteria (gradients, forgetting analogue, ratio
sweep) build everything they time inside the test so the budget covers
the whole procedure, not a cached remnant.

Finite-difference comparisons use step 1e-6 in double precision and
compare entries by |analytic - numeric| <= atol + rtol * max(|.|) with
rtol 1e-5 and atol 1e-8; the absolute floor absorbs the ~1e-9 roundoff
inherent to central differences at that step, an order below any
meaningful gradient entry at this scale.
"""

from __future__ import annotations

import math
import random
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from maintgen.agents import RoutingKind, has_numbered_steps, run
from maintgen.config import AppConfig
from maintgen.corpus import MixSpec, MixedDataset
from maintgen.embedding import HashEmbedder
from maintgen.errors import ChecksumMismatch
from maintgen.fixtures import domain_fixture, fixture_texts, general_fixture
from maintgen.harness import ratio_sweep
from maintgen.index import VectorIndex, load_index, mips_top_k, save_index
from maintgen.lora import LoraAdapter, lora_forward, merge_adapter
from maintgen.losses import KRWeightInputs, kl_loss, kr_weight
from maintgen.metrics import bleu, rouge_l, rouge_n
from maintgen.model import LMParams, lm_forward_graph, param_tensors
from maintgen.rag import marginalize, retrieval_prior
from maintgen.index import ScoredHit
from maintgen.service import create_app
from maintgen.snapshot import Snapshot
from maintgen.tokenizer import build_vocab
from maintgen.training import (
    KRConfig,
    encode_records,
    evaluate_ce,
    fit_lm,
    init_adapters,
    kr_gradients,
    pretrained_reference,
    train_loop,
)

RTOL, ATOL, FD_STEP = 1e-5, 1e-8, 1e-6


def fd_matches(analytic: np.ndarray, numeric: np.ndarray) -> bool:
    return bool(np.all(np.abs(analytic - numeric)
                       <= ATOL + RTOL * np.maximum(np.abs(analytic), np.abs(numeric))))


def report(line: str) -> None:
    print(f"\nACCEPTANCE PASS - {line}")


# -- 1. gradient correctness -------------------------------------------------

def _combined_loss(params, adapters, batch, pre_rows, w: float) -> float:
    """Loss evaluation at frozen w; pretrained rows precomputed (they do
    not depend on the adapters being perturbed)."""
    ptensors = param_tensors(params)
    from maintgen.autodiff import Tensor

    atensors = {k: (Tensor(v.a), Tensor(v.b)) for k, v in adapters.items()}
    ce_total, kl_total, n = 0.0, 0.0, 0
    for (prompt, cont), pre_logp in zip(batch, pre_rows):
        full = list(prompt) + list(cont)
        logits = lm_forward_graph(params, ptensors, full[:-1], atensors).data
        shifted = logits - logits.max(-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))
        pos = list(range(len(prompt) - 1, len(full) - 1))
        ce_total += -logp[pos, cont].sum()
        kl_total += (np.exp(pre_logp) * (pre_logp - logp[pos])).sum()
        n += len(cont)
    return (1 - w) * ce_total / n + w * kl_total / n


def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = LMParams.init(vocab_size=11, d_model=8, n_blocks=1, n_heads=2,
                               max_length=32, seed=seed)
        adapters = init_adapters(params, rank=2, seed=seed + 100)
        for adapter in adapters.values():
            adapter.a = rng.normal(0, 0.4, adapter.a.shape)
            adapter.b = rng.normal(0, 0.4, adapter.b.shape)
        batch = []
        for _ in range(2):
            prompt = [int(x) for x in rng.integers(1, 11, int(rng.integers(2, 4)))]
            cont = [int(x) for x in rng.integers(1, 11, int(rng.integers(2, 4)))]
            batch.append((prompt, cont))
        gamma = float(rng.uniform(0.5, 4.0))
        grads, stats = kr_gradients(params, adapters, batch, gamma)
        pre_rows = [pretrained_reference(params, ex) for ex in batch]
        for name, adapter in adapters.items():
            for which, mat in ((0, adapter.a), (1, adapter.b)):
                numeric = np.zeros_like(mat)
                for idx in np.ndindex(*mat.shape):
                    orig = mat[idx]
                    mat[idx] = orig + FD_STEP
                    up = _combined_loss(params, adapters, batch, pre_rows, stats.w)
                    mat[idx] = orig - FD_STEP
                    down = _combined_loss(params, adapters, batch, pre_rows, stats.w)
                    mat[idx] = orig
                    numeric[idx] = (up - down) / (2 * FD_STEP)
                analytic = grads[name][which]
                assert fd_matches(analytic, numeric), (seed, name, which)
                scale = np.maximum(np.abs(analytic), np.abs(numeric))
                with np.errstate(invalid="ignore"):
                    rel = np.abs(analytic - numeric) / np.maximum(scale, ATOL / RTOL)
                worst = max(worst, float(np.nanmax(rel)))
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"gradient check took {elapsed:.1f}s"
    report(f"1 gradient correctness: 20 seeds, worst scaled error "
           f"{worst:.2e} < 1e-5, {elapsed:.1f}s < 10s")


# -- 2. adapter/merge equivalence ---------------------------------------------

def test_criterion_2_adapter_merge_equivalence():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d_out, d_in, rank = 3 + seed % 6, 2 + seed % 7, 1 + seed % 4
        w0 = rng.normal(size=(d_out, d_in))
        adapter = LoraAdapter("t", rng.normal(size=(rank, d_in)),
                              rng.normal(size=(d_out, rank)))
        bias = rng.normal(size=d_out)
        z = rng.normal(size=d_in)
        gap = np.max(np.abs(lora_forward(w0, adapter, z, bias)
                            - (merge_adapter(w0, adapter) @ z + bias)))
        worst = max(worst, float(gap))
        assert gap < 1e-10
    report(f"2 adapter/merge equivalence: 100 instances, worst gap {worst:.2e} < 1e-10")


# -- 3. weight and retention-loss invariants ----------------------------------

def test_criterion_3_weight_and_kl_invariants():
    rng = np.random.default_rng(0)
    for i in range(10_000):
        f = 0.0 if i % 10 == 0 else float(rng.uniform(0, 100))
        inputs = KRWeightInputs(
            grad_sq_norm=f,
            prob_pretrained=float(rng.uniform(1e-6, 1.0)),
            prob_current=float(rng.uniform(1e-6, 1.0)),
        )
        w = kr_weight(inputs, float(rng.uniform(0.1, 10.0)))
        assert 0.0 <= w <= 1.0
        assert (w == 0.0) == (f == 0.0)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(8))
        q = rng.dirichlet(np.ones(8))
        value = kl_loss(p, q)
        assert value >= 0.0
        assert kl_loss(p, p.copy()) <= 1e-12
    assert kr_weight(KRWeightInputs(1.0, 0.5, 0.5), gamma=1.0) == 0.5
    report("3 weight/retention invariants: 10^4 weight draws in [0,1] with "
           "w=0 iff f=0; 10^3 KL pairs >= 0 and 0 iff equal; symmetric case = 0.5")


# -- 4. retrieval oracle -------------------------------------------------------

def test_criterion_4_retrieval_oracle():
    rng = np.random.default_rng(7)
    for trial in range(50):
        n = int(rng.integers(1, 1001))
        vectors = rng.normal(size=(n, 32))
        refs = [(f"d{i % 13}", i) for i in range(n)]
        index = VectorIndex(32, refs, vectors)
        for _ in range(20):
            query = rng.normal(size=32)
            k = int(rng.integers(1, 12))
            hits = mips_top_k(index, query, k)
            scores = vectors @ query
            order = sorted(range(n), key=lambda i: (-scores[i], refs[i][0], refs[i][1]))
            assert [h.chunk_ref for h in hits] == [refs[i] for i in order[:k]]
    for _ in range(1000):
        m = int(rng.integers(1, 10))
        prior = retrieval_prior(
            [ScoredHit((f"c{i}", 0), float(s))
             for i, s in enumerate(rng.normal(0, 2, m))]
        )
        assert abs(prior.priors().sum() - 1.0) <= 1e-12
        conds = rng.uniform(0, 1, m)
        value = marginalize(prior, list(conds))
        assert conds.min() - 1e-12 <= value <= conds.max() + 1e-12
    report("4 retrieval oracle: 50 indexes x 20 queries match brute force; "
           "priors sum to 1 within 1e-12; marginal within convex bounds x10^3")


# -- 5. metric oracles ----------------------------------------------------------

def test_criterion_5_metric_oracles():
    r1 = rouge_n("check fuel pump", "check the fuel pump", 1)
    assert r1.recall == pytest.approx(0.75, abs=1e-9)
    assert r1.precision == pytest.approx(1.0, abs=1e-9)
    assert r1.f1 == pytest.approx(0.857143, abs=1e-6)
    assert r1.f1 == pytest.approx(12 / 14, abs=1e-9)
    r2 = rouge_n("check fuel pump", "check the fuel pump", 2)
    assert r2.recall == pytest.approx(1 / 3, abs=1e-9)
    assert r2.precision == pytest.approx(1 / 2, abs=1e-9)
    assert r2.f1 == pytest.approx(0.4, abs=1e-9)
    rl = rouge_l("a c e", "a b c d e")
    assert rl.recall == pytest.approx(0.6, abs=1e-12)
    assert rl.precision == pytest.approx(1.0, abs=1e-12)
    assert rl.f1 == pytest.approx(0.75, abs=1e-12)
    rng = np.random.default_rng(1)
    words = [f"w{i}" for i in range(40)]
    for _ in range(100):
        text = " ".join(words[int(i)]
                        for i in rng.integers(0, 40, int(rng.integers(1, 14))))
        assert bleu(text, text).score == pytest.approx(1.0, abs=1e-12)
    bp = bleu("a b c d e", "a b c d e f g h i j", max_n=1)
    assert bp.score == pytest.approx(0.367879, abs=1e-6)
    report("5 metric oracles: hand-counted overlap values, BLEU identity on "
           "100 strings, brevity-penalty case 0.367879")


# -- 6. desk-scale forgetting analogue ------------------------------------------

def test_criterion_6_forgetting_analogue():
    started = time.perf_counter()
    domain_qa, documents, _ = domain_fixture(40)        # 5 objects x 40 Q&A
    general_qa = general_fixture(260)
    tokenizer = build_vocab(fixture_texts(domain_qa, general_qa, documents))
    general_train, general_holdout = general_qa[:200], general_qa[200:240]
    domain_train = [r for i, r in enumerate(domain_qa) if i % 5 != 4]
    domain_holdout = [r for i, r in enumerate(domain_qa) if i % 5 == 4]

    base = LMParams.init(tokenizer.size, d_model=64, n_blocks=2, n_heads=4,
                         max_length=128, seed=0)
    assert base.n_parameters() < 5e5
    fit_lm(base, encode_records(tokenizer, general_train, max_length=64),
           steps=350, batch_size=16, learning_rate=5e-3, lr_decay=0.8, seed=1)
    base_hash = base.byte_hash()

    general_enc = encode_records(tokenizer, general_holdout, max_length=64)
    domain_enc = encode_records(tokenizer, domain_holdout, max_length=64)
    base_general = evaluate_ce(base, None, general_enc)
    base_domain = evaluate_ce(base, None, domain_enc)

    data = MixedDataset(records=tuple(domain_train), spec=MixSpec(1, 0), seed=0)

    def tune(gamma: float):
        config = KRConfig(gamma=gamma, learning_rate=0.15, epochs=4, batch_size=8,
                          rank=8, max_length=64, grad_tolerance=0.0, max_steps=10**6)
        adapters = init_adapters(base, rank=8, seed=2)
        tuned, state = train_loop(base, adapters, data, config, tokenizer)
        return tuned, state

    kr_tuned, kr_state = tune(gamma=100.0)
    ce_tuned, ce_state = tune(gamma=math.inf)
    assert base.byte_hash() == base_hash

    mean_w = float(np.mean([s.w for s in kr_state.steps]))
    assert 0.2 <= mean_w <= 0.8, f"mean w {mean_w} outside the tuned band"
    assert all(s.w == 0.0 for s in ce_state.steps)

    kr_general = evaluate_ce(base, kr_tuned, general_enc)
    ce_general = evaluate_ce(base, ce_tuned, general_enc)
    kr_domain = evaluate_ce(base, kr_tuned, domain_enc)
    ce_domain = evaluate_ce(base, ce_tuned, domain_enc)

    kr_increase = kr_general - base_general
    ce_increase = ce_general - base_general
    assert kr_increase < ce_increase, (
        f"retention run increase {kr_increase:.4f} not below pure task-loss "
        f"run increase {ce_increase:.4f}"
    )
    assert kr_domain < base_domain
    assert ce_domain < base_domain
    elapsed = time.perf_counter() - started
    assert elapsed < 300.0, f"forgetting analogue took {elapsed:.0f}s"
    report(
        f"6 forgetting analogue: mean w {mean_w:.2f} in [0.2,0.8]; general-CE "
        f"increase {kr_increase:+.4f} (retention) vs {ce_increase:+.4f} (task-only); "
        f"domain CE {base_domain:.2f} -> {kr_domain:.2f}/{ce_domain:.2f}; "
        f"{elapsed:.0f}s < 300s"
    )


# -- 7. ratio-sweep harness --------------------------------------------------

def test_criterion_7_ratio_sweep(tmp_path):
    started = time.perf_counter()
    domain_qa, documents, _ = domain_fixture(8)
    general_qa = general_fixture(520)
    tokenizer = build_vocab(fixture_texts(domain_qa, general_qa, documents))
    domain_train = [r for i, r in enumerate(domain_qa) if i % 4 != 3]
    domain_test = [r for i, r in enumerate(domain_qa) if i % 4 == 3]
    general_train, general_test = general_qa[:440], general_qa[440:470]

    base = LMParams.init(tokenizer.size, d_model=64, n_blocks=2, n_heads=4,
                         max_length=128, seed=0)
    fit_lm(base, encode_records(tokenizer, general_train[:200], max_length=64),
           steps=300, batch_size=16, learning_rate=5e-3, lr_decay=0.8, seed=1)

    ratios = [MixSpec.parse(r) for r in ("1:0", "1:1", "1:2", "1:5", "1:7", "1:10")]
    config = KRConfig(gamma=100.0, learning_rate=0.15, epochs=4, batch_size=8,
                      rank=8, max_length=64, grad_tolerance=0.0, max_steps=10**6)
    testsets = {"domain": domain_test, "general": general_test}
    embedder = HashEmbedder(dim=64)

    first = ratio_sweep(base, domain_train, general_train, ratios, config,
                        testsets, tokenizer, embedder, seed=0, max_new_tokens=16)
    second = ratio_sweep(base, domain_train, general_train, ratios, config,
                         testsets, tokenizer, embedder, seed=0, max_new_tokens=16)
    assert first.aborted is None
    assert len(first.rows) == 6 * 2 * 8
    assert first.to_csv() == second.to_csv()
    csv_path, _ = first.write(tmp_path)
    assert csv_path.read_text() == first.to_csv()
    # mixing in general data must not hurt the general test set more than
    # training on domain data alone
    assert first.value("1:7", "general", "ce") <= first.value("1:0", "general", "ce")
    elapsed = time.perf_counter() - started
    assert elapsed < 900.0, f"ratio sweep took {elapsed:.0f}s"
    report(f"7 ratio sweep: 6 ratios x 2 test sets x 8 metrics, byte-identical "
           f"reruns, general CE 1:7 {first.value('1:7','general','ce'):.4f} <= "
           f"1:0 {first.value('1:0','general','ce'):.4f}, {elapsed:.0f}s < 900s")


# -- 8. end-to-end grounded accuracy -------------------------------------------

def test_criterion_8_end_to_end_accuracy(demo):
    retrieval_hits = 0
    for rec in demo.domain_qa:
        top = mips_top_k(demo.index, demo.embedder.embed(rec.question), 1)[0]
        if demo.gold[rec.id] in demo.chunks[top.chunk_ref].text:
            retrieval_hits += 1
    retrieval_rate = retrieval_hits / len(demo.domain_qa)
    assert retrieval_rate >= 0.95

    env = demo.agent_env()
    answered = 0
    for rec in demo.domain_qa:
        result = run(rec.question, env)
        if result.done and demo.gold[rec.id] in result.text:
            answered += 1
        # routing soundness: a known-object answer only ever cites its
        # own object's partition
        if result.done and result.state.decision.kind is RoutingKind.KNOWN:
            routed = result.state.decision.object_type
            assert all(demo.doc_object_types[c.doc_id] == routed
                       for c in result.state.draft.citations)
    answer_rate = answered / len(demo.domain_qa)
    assert answer_rate >= 0.90

    result = run("the new hydraulic pump has a failure", env)
    assert result.done
    assert result.state.decision.kind is RoutingKind.ANALOGOUS
    assert result.state.decision.object_type == "fuel pump"
    assert all(demo.doc_object_types[c.doc_id] == "fuel pump"
               for c in result.state.draft.citations)
    report(f"8 end-to-end accuracy: top-1 retrieval {retrieval_rate:.0%} >= 95%, "
           f"grounded answers {answer_rate:.0%} >= 90%, analogous scenario routes "
           f"to the known object with matching citations")


# -- 9. agent safety ------------------------------------------------------------

def test_criterion_9_agent_safety(demo):
    env = demo.agent_env()
    rng = random.Random(99)
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    refusals = 0
    for _ in range(1000):
        query = " ".join(
            "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 9)))
            for _ in range(rng.randint(1, 6))
        )
        result = run(query, env)
        assert result.state.terminal
        assert len(result.trace) <= 8
        if result.refused:
            refusals += 1
            assert not has_numbered_steps(result.text)
    assert refusals > 0
    report(f"9 agent safety: 1000 fuzzed queries terminated within 8 "
           f"transitions; {refusals} refusals, none with numbered steps")


# -- 10. persistence and service ---------------------------------------------

def test_criterion_10_persistence_and_service(demo, tmp_path):
    from maintgen.cli import main
    from maintgen.fixtures import write_corpus_dir

    index_path = tmp_path / "index.bin"
    save_index(demo.index, index_path)
    reloaded = load_index(index_path)
    assert reloaded == demo.index
    assert reloaded.vectors.tobytes() == demo.index.vectors.tobytes()
    save_index(reloaded, tmp_path / "index2.bin")
    assert (tmp_path / "index2.bin").read_bytes() == index_path.read_bytes()
    blob = index_path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(blob[:-9])
    with pytest.raises(ChecksumMismatch):
        load_index(tmp_path / "trunc.bin")

    corpus_dir = tmp_path / "corpus"
    write_corpus_dir(corpus_dir, demo.domain_qa, demo.general_qa, demo.documents)
    config = AppConfig(corpus_dir=str(corpus_dir),
                       artifacts_dir=str(tmp_path / "artifacts"),
                       report_dir=str(tmp_path / "reports"),
                       temperature=0.0, max_new_tokens=24)
    snapshot = Snapshot(
        index=demo.index, chunks=demo.chunks,
        doc_object_types=demo.doc_object_types, registry=demo.registry,
        params=demo.params, tokenizer=demo.tokenizer, embedder=demo.embedder,
        adapters=None, generation=1,
    )
    client = TestClient(create_app(config, snapshot=snapshot))
    health = client.get("/healthz")
    assert health.status_code == 200
    assert health.json() == {"status": "ok", "generation": 1}
    rec = demo.domain_qa[0]
    body = client.post("/api/query", json={"query": rec.question}).json()
    assert demo.gold[rec.id] in body["text"]
    assert body["generation"] == 1
    assert body["citations"] and body["trace"]
    assert client.post("/api/query", json={"query": " "}).status_code == 400
    ingest = client.post("/api/ingest", json={"corpus_path": str(corpus_dir)})
    assert ingest.json()["generation"] == 2
    assert client.get("/healthz").json()["generation"] == 2

    cfg_path = tmp_path / "cli-config.json"
    AppConfig(corpus_dir=str(corpus_dir),
              artifacts_dir=str(tmp_path / "cli-artifacts"),
              report_dir=str(tmp_path / "cli-reports"),
              pretrain_steps=2, max_new_tokens=4).save(cfg_path)
    assert main([f"--config={cfg_path}", "ingest"]) == 0
    assert main(["no-such-command"]) == 1
    assert main([f"--config={cfg_path}", "eval", "--predictions",
                 str(tmp_path / "missing.jsonl")]) == 2
    report("10 persistence and service: index round-trip bit-exact, truncation "
           "detected, generation tags coherent, query/healthz round-trips, "
           "CLI exit codes 0/1/2")
