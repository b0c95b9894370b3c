"""Smoke test for the Python bindings. Run after `pip install -e crates/python`."""

import math

import tri_retrieve_py as tr


def close(a, b, tol=1e-9):
    assert abs(a - b) <= tol, (a, b)


def main():
    enc = tr.ToyEncoder(dim=16, seed=3)
    out = enc.encode([5, 9, 5, 12])
    close(math.sqrt(sum(x * x for x in out["dense"])), 1.0)
    assert len(out["colbert"]) == 4
    assert all(w >= 0 for w in out["sparse"].values())
    assert out == tr.ToyEncoder(dim=16, seed=3).encode([5, 9, 5, 12])

    close(tr.s_dense([3.0, 4.0], [4.0, 3.0]), 24 / 25)
    close(tr.s_lex({1: 0.5, 2: 1.0}, {2: 0.25, 7: 3.0}), 0.25)
    close(tr.s_mul([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0]]), 0.5)
    close(tr.weighted_score(0.5, 2.0, 0.25, (1.0, 0.3, 1.0)), 1.35)

    dense = tr.DenseIndex([("a", [1.0, 0.0]), ("b", [0.6, 0.8]), ("c", [0.0, 1.0])])
    assert [d for d, _ in dense.search([0.0, 1.0], 2)] == ["c", "b"]
    sparse = tr.SparseIndex([("a", {1: 1.0}, [1, 1, 2]), ("b", {2: 2.0}, [2, 3])])
    assert sparse.search({2: 1.0}, 5) == [("b", 2.0)]
    assert sparse.search_bm25([1], 5)[0][0] == "a"

    docs = [(f"d{i}", [i, i + 1, i + 2, 40 + i % 7]) for i in range(30)]
    hybrid = tr.HybridRetriever(enc, docs)
    hits = hybrid.search([7, 8, 9, 47], "miracl_all", 5)
    assert len(hits) == 5 and hits[0][0] == "d7", hits
    for _, fused, sd, sl, sm in hits:
        close(fused, sd + 0.3 * sl + sm)

    run = {"q1": ["d1", "d2"], "q2": ["d9", "d3"]}
    qrels = {"q1": {"d2": 1}, "q2": {"d9": 1}}
    close(tr.ndcg_at_k(run, qrels, 10), (1 / math.log2(3) + 1) / 2)
    close(tr.recall_at_k(run, qrels, 1), 0.5)

    close(tr.info_nce([1.0, 0.0], 0, 1.0), math.log(1 + math.exp(-1)))
    losses = tr.distill_losses([1, 0], [1, 0], [1, 0], 0, tau=1.0)
    close(losses["l_final"], (losses["l"] + losses["lp"]) / 2)

    lengths = {f"d{i}": 10 + (i * 37) % 900 for i in range(2000)}
    batches, padding = tr.plan_batches(lengths, seed=1, workers=2)
    assert len(batches) == 2 and 0.0 <= padding < 1.0
    print("python smoke test OK")


if __name__ == "__main__":
    main()
