import json
from dataclasses import replace

import pytest

import cases
from conftest import assert_golden
from msvol import asymptotics as asy
from msvol import cli, data_io
from msvol import model_oracle as mo


@pytest.fixture
def phi_file(tmp_path):
    path = tmp_path / "phi.json"
    path.write_text(asy.PUBLISHED_2006.to_json())
    return path


@pytest.fixture
def chain_file(tmp_path):
    path = tmp_path / "chain.csv"
    path.write_text(data_io.serialize_chain(data_io.ChainFile(cases.synthetic_chain())))
    return path


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_price_matches_library(phi_file, capsys):
    code = cli.main(["price", "--input", str(phi_file), "--tau", "0.5", "--spot", "100",
                     "--strike", "100", "--rate", "0.02"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out == asy.price_terms(0.5, 100.0, 100.0, 0.02, asy.PUBLISHED_2006, "call")


def test_price_golden(phi_file, tmp_path, golden):
    out = tmp_path / "p.json"
    cli.main(["price", "--input", str(phi_file), "--tau", "0.5", "--spot", "100",
              "--strike", "100", "--rate", "0.02", "--output", str(out)])
    inputs = dict(phi=cases.PUBLISHED_06, tau=0.5, spot=100.0, strike=100.0, rate=0.02)
    assert_golden(golden("cli_price_2006"), json.loads(out.read_text()), inputs)


def test_zero_params_give_black_scholes(tmp_path, capsys):
    path = tmp_path / "flat.json"
    path.write_text(asy.GroupParams(0.2, *[0.0] * 17).to_json())
    cli.main(["price", "--input", str(path), "--tau", "1", "--spot", "100", "--strike", "110"])
    out = json.loads(capsys.readouterr().out)
    assert out["total"] == out["p00"]


def test_missing_field_is_schema_error(tmp_path, capsys):
    data = json.loads(asy.PUBLISHED_2006.to_json())
    del data["sigma_star"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    code = cli.main(["price", "--input", str(path), "--tau", "1", "--spot", "100",
                     "--strike", "100"])
    assert code == 2
    err = _error(capsys)
    assert err["error"] == "data" and "sigma_star" in err["message"]


def test_surface_csv(phi_file, capsys):
    assert cli.main(["surface", "--input", str(phi_file), "--tau", "0.5,1", "--d=-0.1,0,0.1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "tau,d,iv" and len(lines) == 7
    tau, d, iv = map(float, lines[3].split(","))
    assert iv == float(asy.iv_terms(tau, d, asy.PUBLISHED_2006)["total"])


def test_bogus_command(capsys):
    assert cli.main(["fly"]) == 1
    assert _error(capsys)["error"] == "usage"


def test_calibrate_round_trip(chain_file, tmp_path, golden):
    out = tmp_path / "fit"
    assert cli.main(["calibrate", "--input", str(chain_file), "--output", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["rmse_total"] <= 1e-9
    computed = {"rmse_total": report["rmse_total"]}
    computed.update({f"theta_{k}": v for k, v in report["theta"].items()})
    inputs = dict(phi=cases.PUBLISHED_06, taus=list(cases.CHAIN_TAUS), ds=list(cases.CHAIN_DS),
                  seed=cli.DEFAULT_SEED)
    assert_golden(golden("cli_calibrate_2006"), computed, inputs)
    names = {p.name for p in out.iterdir()}
    assert {f"fit_{round(t * 365)}.csv" for t in cases.CHAIN_TAUS} <= names


def test_single_expiry_exits_with_rank_error(tmp_path, capsys):
    quotes = cases.synthetic_chain(taus=(0.5,))
    chain = tmp_path / "one.csv"
    chain.write_text(data_io.serialize_chain(data_io.ChainFile(quotes)))
    out = tmp_path / "fit"
    assert cli.main(["calibrate", "--input", str(chain), "--output", str(out)]) == 2
    err = _error(capsys)
    assert err["error"] == "rank" and err["deficient_directions"]
    assert not out.exists()


def test_vega_weighting_recorded(chain_file, tmp_path):
    out = tmp_path / "fit"
    cli.main(["calibrate", "--input", str(chain_file), "--output", str(out),
              "--weights", "vega", "--starts", "4"])
    report = json.loads((out / "report.json").read_text())
    assert report["metadata"]["weights"] == "vega"


def test_calibrate_bytes_deterministic(chain_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["calibrate", "--input", str(chain_file), "--output", str(out), "--starts", "4"])
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]


def _flat_model(tmp_path):
    path = tmp_path / "flat.json"
    path.write_text(json.dumps(replace(mo.REFERENCE_MODEL, c1=0.2, c2=0.2).to_dict()))
    return path


def test_verify_degenerate_model(tmp_path, capsys):
    out = tmp_path / "v"
    code = cli.main(["verify", "--input", str(_flat_model(tmp_path)), "--output", str(out),
                     "--paths", "4096", "--eps-ladder", "0.32,0.16", "--regime", "fast"])
    assert code == 0
    assert "PASS fast" in capsys.readouterr().out
    assert (out / "scaling_fast.csv").read_text().startswith("eps,delta,abs_error,mc_se\n")


def test_verify_rejects_coarse_step(tmp_path, capsys):
    out = tmp_path / "v"
    code = cli.main(["verify", "--output", str(out), "--dt", "0.01", "--eps-ladder", "0.04"])
    assert code == 2
    err = _error(capsys)
    assert err["type"] == "ResolutionError"
    assert not out.exists()


def test_verify_bytes_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["verify", "--output", str(out), "--paths", "2048", "--eps-ladder", "0.32,0.16",
                  "--regime", "combined", "--no-escalate"])
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]


def test_frozen_default_verify(golden):
    rec = golden("cli_verify")
    assert rec.values["exit_code"] == 0
    assert rec.values["combined_passed"] == 1.0 and rec.values["fast_passed"] == 1.0
