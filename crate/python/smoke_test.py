"""Exercises the Python bindings end to end on the mirror-pair fixture.

Build first, e.g. ``maturin develop --release -m crates/python/Cargo.toml``.
"""

import os
import random
import tempfile

import typoparse_py as tp


def check_treebanks():
    a, b = tp.synth_mirror_pair(30, max_len=8, seed=3)
    assert a.language == "A" and len(a) == 30
    back = tp.Treebank.from_conllu(a.to_conllu(), "A")
    assert back.heads() == a.heads() and back.deprels() == a.deprels()
    assert a.truncate(50).token_count() <= 50
    assert a.upos() == b.upos()
    return a, b


def check_typology(a, b):
    fwd = tp.liu_directionalities(a)
    rev = tp.liu_directionalities(a.reversed())
    assert all(x + y == 1.0 for x, y in zip(fwd.values, rev.values))
    assert fwd.kind == "DIRECTIONALITY"
    assert tp.corpus_wals(a)["82A"] == "SV"
    assert tp.corpus_wals(b)["82A"] == "VS"
    khot = tp.wals_khot(tp.corpus_wals(a))
    assert set(khot.values) <= {0.0, 1.0}
    vectors = {"A": fwd, "B": tp.liu_directionalities(b), "C": fwd}
    assignments, centroids, inertia = tp.kmeans(vectors, 2, restarts=5, seed=1)
    assert assignments["A"] == assignments["C"] != assignments["B"]
    assert len(centroids) == 2 and inertia == 0.0
    return vectors


def check_decoder():
    rng = random.Random(0)
    for _ in range(50):
        n = rng.randint(1, 5)
        scores = [[rng.uniform(-5, 5) for _ in range(n + 1)] for _ in range(n + 1)]
        fast = tp.cle_mst(scores)
        slow = tp.brute_force_mst(scores)
        total = lambda heads: sum(scores[h][d + 1] for d, h in enumerate(heads))
        assert abs(total(fast) - total(slow)) < 1e-9


def check_statistics(a):
    report = tp.evaluate(a, a)
    assert report["uas"] == 100.0 and report["las"] == 100.0
    p, delta = tp.permutation_test(report["arcs"], report["arcs"], 1000, 1)
    assert p == 1.0 and delta == 0.0
    p, _ = tp.permutation_test([True] * 100, [False] * 100)
    assert p < 0.001
    vectors = {
        lang: tp.TypologyVector("DIRECTIONALITY", [x, 0.5])
        for lang, x in zip("pqrs", [0.0, 0.1, 0.5, 1.0])
    }
    best = {"p": "q", "s": "p"}
    prec = tp.precision_at_k(vectors, best, list("pqrs"), [1, 2, 3])
    assert list(prec.values()) == sorted(prec.values())
    assert prec[1] == 50.0 and prec[3] == 100.0


def check_parser(a, b, vectors):
    config = dict(
        pos_embed_dim=8,
        lstm_layers=1,
        lstm_hidden=16,
        arc_mlp_dim=16,
        rel_mlp_dim=8,
        typology_mode="INPUT_FEATURE",
        typology_mlp_hidden=4,
        typology_out_dim=4,
        dropout=0.0,
        batch_tokens=100,
        max_updates=300,
        eval_every=100,
    )
    parser = tp.Parser(typology_dim=len(vectors["A"]), **config)
    log = parser.train([a, b], dev=[a, b], typologies=vectors)
    assert [row[0] for row in log] == [100, 200, 300]
    assert log[-1][1] < log[0][1]
    parsed = parser.parse(b, typology=vectors["B"])
    uas = tp.evaluate(parsed, b)["uas"]
    assert uas > 50.0, uas

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        parser.save(path)
        again = tp.Parser.load(path)
        assert again.to_bytes() == parser.to_bytes()
        assert again.parse(b, typology=vectors["B"]).heads() == parsed.heads()
        try:
            tp.Parser.load(path, schema="ud2")
        except ValueError as e:
            assert "schema hash" in str(e)
        else:
            raise AssertionError("schema mismatch accepted")

    tuned = parser.finetune(b, steps=20, lr=0.01, typology=vectors["B"])
    assert tuned.to_bytes() != parser.to_bytes()
    assert parser.finetune(b, steps=20, lr=0.01, typology=vectors["B"]).to_bytes() == tuned.to_bytes()
    return uas


def main():
    a, b = check_treebanks()
    vectors = check_typology(a, b)
    check_decoder()
    check_statistics(a)
    uas = check_parser(a, b, vectors)
    print(f"smoke test passed (parser UAS on B: {uas:.2f})")


if __name__ == "__main__":
    main()
