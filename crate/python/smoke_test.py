"""End-to-end smoke test of the Python bindings.

Build and install first, e.g. `maturin develop --release -m crates/py/Cargo.toml`.
"""

import os
import tempfile

import kandos


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok: {what}")


def main():
    grid = kandos.SplineGrid()
    check(grid.basis_count == 8, "default grid has 8 basis functions")
    check(abs(sum(grid.basis(0.37)) - 1.0) < 1e-12, "basis sums to one")

    data = kandos.synth_generate(samples_per_class=300, feature_count=12, seed=1)
    train, test = data.split(0.2, seed=1)
    stats = kandos.CleanStats.fit(train)
    clean_train, clean_test = stats.apply(train), stats.apply(test)
    check(clean_train.n_features == 12, "cleaned data keeps its width")

    model = kandos.KanModel([12, 8, 1], seed=1)
    check(model.count_params() == 12 * 8 * 9 + 8 * 9 + 9, "parameter count")
    model, history = kandos.fit(model, clean_train, clean_test, epochs=10, seed=1)
    check(len(history) == 10, "one history row per epoch")
    check(history[-1][2] < history[0][2], "test loss decreases")

    model = model.with_clean_stats(stats)
    scores = model.score(test)
    metrics = kandos.evaluate(test.labels, scores)
    check(metrics["accuracy"] > 0.95 and metrics["auc"] > 0.99, f"accuracy {metrics['accuracy']:.3f}")

    m = kandos.scalar_metrics(45484, 731, 198, 46017)
    check(round(m["precision"], 3) == 0.984, "reference confusion matrix")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.kan.json")
        model.save(path)
        loaded = kandos.KanModel.load(path)
        check(loaded.score(test) == scores, "save/load round trip is exact")
        try:
            kandos.KanModel.load(os.path.join(tmp, "missing.json"))
            check(False, "missing file raises")
        except kandos.KandosError as e:
            check(str(e).startswith("E_IO"), "missing file raises E_IO")

    top = kandos.feature_correlation(data)[0]
    check(top[0].startswith("informative_"), "informative feature ranks first")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
