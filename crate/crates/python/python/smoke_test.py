"""Smoke test for the compiled `lens` module on the AND2 and noisy-or fixtures."""

import lens

AND2 = {"variant": "LinearThreshold", "weights": [1.0, 1.0], "bias": 0.0, "threshold": 2.0}
GRID = [[0, 0], [0, 1], [1, 0], [1, 1]]
NOISY_OR = {
    "nodes": ["X", "U", "Y"],
    "parents": {"Y": ["X", "U"]},
    "equations": {
        "X": {"kind": "table", "cpt": [[0.5, 0.5]]},
        "U": {"kind": "table", "cpt": [[0.75, 0.25]]},
        "Y": {"kind": "table", "cpt": [[1, 0], [0, 1], [0, 1], [0, 1]]},
    },
}


def main():
    assert lens.predict(AND2, GRID) == [0, 0, 0, 1]

    report = lens.explain(AND2, GRID, [1, 1], 0.9)
    assert [c["factor"]["targets"] for c in report["candidates"]] == [[0, 1]]
    assert report["cumulativePN"] == 4 / 9

    rows = lens.sweep_tau(AND2, GRID, [1, 1], [0.0, 0.6, 0.95])
    assert [r["cumulativePN"] for r in rows] == [8 / 9, 4 / 9, 4 / 9]

    assert lens.shapley(AND2, GRID, [1, 1])["phi"] == [0.375, 0.375]
    assert lens.recourse(AND2, GRID, [1, 0], 0.9)["chosen"]["assignments"] == {"1": 1.0}

    pearl = lens.pearl(NOISY_OR, "X", "Y")
    assert (pearl["suf"], pearl["nec"]) == (1.0, 0.75)

    p, reject = lens.binomial_tau_test(100, 100, 0.9, 0.05)
    assert abs(p - 0.9**100) <= 1e-12 and reject

    try:
        lens.explain(AND2, GRID, [1, 1], 1.1)
    except lens.LensError as e:
        assert str(e).startswith("BadParameters")
    else:
        raise AssertionError("tau 1.1 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
