import json

import numpy as np
import pytest

from mgshadows.cli import _parse_grid, main
from mgshadows.fermion import GaussianStateSpec, SlaterSpec
from mgshadows.oracle import dense_slater_state
from mgshadows.skewlin import ValidationError


@pytest.fixture
def workdir(tmp_path):
    rng = np.random.default_rng(5)
    n = 2
    psi = rng.standard_normal(1 << n) + 1j * rng.standard_normal(1 << n)
    psi /= np.linalg.norm(psi)
    state = tmp_path / "state.json"
    state.write_text(json.dumps({"n": n, "amplitudes": [[x.real, x.imag] for x in psi]}))

    gauss = tmp_path / "gauss.json"
    gauss.write_text(json.dumps(GaussianStateSpec.vacuum(n).to_json_dict()))

    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    v = np.linalg.qr(a.conj().T)[0].conj().T
    slater_even = SlaterSpec(n=n, zeta=2, v=v[:2])
    slater_odd = SlaterSpec(n=n, zeta=1, v=v[:1])
    slaters = tmp_path / "slaters.json"
    slaters.write_text(
        json.dumps({"slaters": [slater_even.to_json_dict(), slater_odd.to_json_dict()]})
    )

    obs = tmp_path / "obs.json"
    obs.write_text(
        json.dumps(
            {
                "observables": [
                    {"id": "m01", "type": "majorana", "s": [0, 1]},
                    {"id": "vac", "type": "gaussian", **GaussianStateSpec.vacuum(n).to_json_dict()},
                    {"id": "sl", "type": "slater", **slater_even.to_json_dict()},
                ]
            }
        )
    )
    return {
        "dir": tmp_path,
        "n": n,
        "psi": psi,
        "state": str(state),
        "gauss": str(gauss),
        "slaters": str(slaters),
        "obs": str(obs),
        "slater_even": slater_even,
        "slater_odd": slater_odd,
    }


def test_collect_empty_file(workdir):
    out = str(workdir["dir"] / "empty.jsonl")
    code = main(
        ["collect", "--state", workdir["state"], "--samples", "0", "--seed", "1", "--out", out]
    )
    assert code == 0
    assert open(out).read() == ""


def test_collect_deterministic(workdir):
    out1 = str(workdir["dir"] / "a.jsonl")
    out2 = str(workdir["dir"] / "b.jsonl")
    for out in (out1, out2):
        assert (
            main(
                [
                    "collect",
                    "--state",
                    workdir["state"],
                    "--samples",
                    "40",
                    "--seed",
                    "7",
                    "--out",
                    out,
                ]
            )
            == 0
        )
    assert open(out1, "rb").read() == open(out2, "rb").read()


def test_collect_gaussian_state(workdir):
    out = str(workdir["dir"] / "g.jsonl")
    code = main(
        [
            "collect",
            "--state",
            workdir["gauss"],
            "--ensemble",
            "haar",
            "--samples",
            "10",
            "--seed",
            "2",
            "--out",
            out,
        ]
    )
    assert code == 0
    assert len(open(out).readlines()) == 10


def test_collect_bad_state_file(workdir):
    bad = workdir["dir"] / "bad.json"
    bad.write_text("{not json")
    code = main(
        ["collect", "--state", str(bad), "--samples", "1", "--seed", "1", "--out", "/dev/null"]
    )
    assert code == 2


def test_estimate_empty_observables(workdir):
    shadows = str(workdir["dir"] / "s.jsonl")
    main(["collect", "--state", workdir["state"], "--samples", "5", "--seed", "3", "--out", shadows])
    empty = workdir["dir"] / "none.json"
    empty.write_text(json.dumps({"observables": []}))
    out = str(workdir["dir"] / "est.json")
    code = main(
        ["estimate", "--shadows", shadows, "--observables", str(empty), "--out", out]
    )
    assert code == 0
    assert json.load(open(out)) == {"estimates": []}


def test_estimate_rejects_odd_zeta(workdir):
    shadows = str(workdir["dir"] / "s2.jsonl")
    main(["collect", "--state", workdir["state"], "--samples", "5", "--seed", "3", "--out", shadows])
    oddobs = workdir["dir"] / "odd.json"
    oddobs.write_text(
        json.dumps({"observables": [{"type": "slater", **workdir["slater_odd"].to_json_dict()}]})
    )
    code = main(["estimate", "--shadows", shadows, "--observables", str(oddobs)])
    assert code == 2


def test_estimate_insufficient_samples(workdir):
    shadows = str(workdir["dir"] / "s3.jsonl")
    main(["collect", "--state", workdir["state"], "--samples", "5", "--seed", "3", "--out", shadows])
    code = main(
        [
            "estimate",
            "--shadows",
            shadows,
            "--observables",
            workdir["obs"],
            "--eps",
            "0.1",
        ]
    )
    assert code == 4


def test_estimate_produces_records(workdir):
    shadows = str(workdir["dir"] / "s4.jsonl")
    main(
        ["collect", "--state", workdir["state"], "--samples", "2000", "--seed", "4", "--out", shadows]
    )
    out = str(workdir["dir"] / "est4.json")
    code = main(
        [
            "estimate",
            "--shadows",
            shadows,
            "--observables",
            workdir["obs"],
            "--eps",
            "2.0",
            "--delta",
            "0.2",
            "--out",
            out,
        ]
    )
    assert code == 0
    records = json.load(open(out))["estimates"]
    assert [r["observable_id"] for r in records] == ["m01", "vac", "sl"]
    for r in records:
        assert r["n_samples"] == r["K"] * r["L"]


def test_estimate_general_observable_with_bmax(workdir):
    shadows = str(workdir["dir"] / "s5.jsonl")
    main(
        ["collect", "--state", workdir["state"], "--samples", "1100", "--seed", "8", "--out", shadows]
    )
    n = workdir["n"]
    gen = workdir["dir"] / "general.json"
    gen.write_text(
        json.dumps(
            {
                "observables": [
                    {
                        "id": "vacproj",
                        "type": "general",
                        "s": [],
                        "phase": [1.0, 0.0],
                        "r": np.eye(2 * n).tolist(),
                    }
                ]
            }
        )
    )
    # planning needs an explicit bound when only general observables are given
    code = main(["estimate", "--shadows", shadows, "--observables", str(gen), "--eps", "1.0"])
    assert code == 2
    out = str(workdir["dir"] / "gen_est.json")
    code = main(
        [
            "estimate",
            "--shadows",
            shadows,
            "--observables",
            str(gen),
            "--eps",
            "1.0",
            "--delta",
            "0.3",
            "--bmax",
            "2.0",
            "--out",
            out,
        ]
    )
    assert code == 0
    record = json.load(open(out))["estimates"][0]
    # the observable is |0><0| built as a rotation of the vacuum: its
    # estimate should land near |<0|psi>|^2
    truth = abs(workdir["psi"][0]) ** 2
    assert abs(complex(*record["estimate"]) - truth) < 0.5


def test_overlap_end_to_end(workdir):
    out = str(workdir["dir"] / "ovl.json")
    code = main(
        [
            "overlap",
            "--state",
            workdir["state"],
            "--slaters",
            workdir["slaters"],
            "--eps",
            "0.45",
            "--delta",
            "0.2",
            "--seed",
            "11",
            "--out",
            out,
        ]
    )
    assert code == 0
    doc = json.load(open(out))
    psi = workdir["psi"]
    for record, slater in zip(doc["estimates"], (workdir["slater_even"], workdir["slater_odd"])):
        truth = np.vdot(psi, dense_slater_state(slater))
        est = complex(*record["estimate"])
        assert abs(est - truth) <= 0.45


def test_variance_table_single_point(tmp_path):
    out = str(tmp_path / "t.csv")
    code = main(["variance-table", "--grid", "n=1,zeta=0", "--out", out, "--no-plot"])
    assert code == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "n,zeta,bound"
    n, zeta, bound = lines[1].split(",")
    assert (n, zeta) == ("1", "0")
    assert float(bound) == pytest.approx(1.0, rel=1e-12)


def test_variance_table_default_zeta_and_plot(tmp_path):
    out = str(tmp_path / "t2.csv")
    code = main(["variance-table", "--grid", "n=2..8:log", "--out", out])
    assert code == 0
    rows = open(out).read().strip().splitlines()[1:]
    assert all(line.split(",")[1] == "0" for line in rows)
    assert (tmp_path / "t2.png").exists()


def test_grid_parsing():
    ns, zetas = _parse_grid("n=4..64:log,zeta=0,2,10")
    assert ns == (4, 8, 16, 32, 64)
    assert zetas == (0, 2, 10)
    ns, zetas = _parse_grid("n=5..7:lin")
    assert ns == (5, 6, 7)
    assert zetas == (0,)
    with pytest.raises((ValidationError, ValueError)):
        _parse_grid("bogus=3")


def test_verify_design_n1():
    assert main(["verify-design", "--n", "1"]) == 0


def test_verify_design_resource_guard():
    assert main(["verify-design", "--n", "3"]) == 3
