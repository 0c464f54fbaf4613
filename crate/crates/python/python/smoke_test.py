"""Smoke test for the taskgraph_py extension module."""

import json
import math
import os
import tempfile

import taskgraph_py as tg


def main():
    truth, taxonomy, sequences = tg.synth(6, 0.3, 50, seed=5)
    data = tg.SequenceSet(taxonomy, sequences)
    assert len(data) == 50

    model = tg.train(data, seed=1)
    assert tg.evaluate(model.graph, truth)["f1"] == 1.0
    assert model.meta["config"]["beta"] == 0.005

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        again = tg.TrainedModel.load(path)
        assert again.to_json() == model.to_json()
        assert tg.train(data, seed=1).to_json() == model.to_json()

    assert tg.TaskGraph.from_json(truth.to_json()) == truth
    assert truth.to_dot().startswith("digraph")

    report = model.reason(taxonomy[2], taxonomy[:2])
    assert abs(sum(report["future"].values()) - 1.0) < 1e-9
    binary = model.reason(taxonomy[2], taxonomy[:2], mode="binary")
    assert abs(sum(binary["previous"].values()) - 1.0) < 1e-12

    verdicts = model.detect(sequences[0])
    assert all(v["label"] == "correct" for v in verdicts)
    assert model.detect(sequences[0], perturb_rate=0.0) == verdicts
    assert math.isfinite(model.log_likelihood(sequences[0]))

    z = [[0, 0, 0, 0], [1, 0, 0, 0], [0.3, 0.7, 0, 0], [0, 0.2, 0.8, 0]]
    chain = tg.postprocess(z, ["A", "B"])
    assert chain.edges == [(1, 0), (2, 1), (3, 2)]

    try:
        model.reason("no-such-step")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown label accepted")

    print(json.dumps({"smoke_test": "ok", "edges": len(model.graph.edges)}))


if __name__ == "__main__":
    main()
