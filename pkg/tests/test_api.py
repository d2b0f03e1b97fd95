import numpy as np
import pytest
from fastapi.testclient import TestClient
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dispatch_problem
from evflex.api import PolicyModel, create_app
from evflex.dispatch import build_dispatch_lp, compute_regions, lookup, write_policy_csv


@pytest.fixture(scope="module")
def policy():
    p = random_dispatch_problem(np.random.default_rng(8), 4)
    return compute_regions(build_dispatch_lp(p))


def test_upload_and_dispatch(policy):
    client = TestClient(create_app())
    body = PolicyModel.from_policy(policy).model_dump()
    r = client.put("/policies/7", json=body)
    assert r.status_code == 200 and r.json()["n_regions"] == len(policy.regions)
    assert client.get("/health").json() == {"status": "ok", "policies": 1}
    got = client.get("/policies/7/dispatch", params={"signal": 0.3}).json()
    ref = lookup(policy, 0.3)
    assert got["value"] == pytest.approx(ref.value, abs=1e-12)
    assert [s["dup_kw"] for s in got["setpoints"]] == pytest.approx(list(ref.dup), abs=1e-12)
    batch = client.post("/policies/7/dispatch", json={"signals": [-1.0, 0.0, 1.0]}).json()
    assert len(batch["value"]) == 3 and batch["ids"] == policy.ids
    assert client.get("/policies/7").json()["n_ev"] == policy.n_ev
    assert client.delete("/policies/7").status_code == 200
    assert client.get("/policies/7/dispatch", params={"signal": 0.0}).status_code == 404


def test_rejects_malformed_policy(policy):
    client = TestClient(create_app())
    body = PolicyModel.from_policy(policy).model_dump()
    body["regions"] = body["regions"][1:]  # no longer covers -1
    assert client.put("/policies/1", json=body).status_code == 422
    body = PolicyModel.from_policy(policy).model_dump()
    body["ids"] = body["ids"][:-1]
    assert client.put("/policies/1", json=body).status_code == 422


def test_loads_policy_directory(policy, tmp_path):
    write_policy_csv(policy, tmp_path / "hour_03.csv")
    client = TestClient(create_app(tmp_path))
    assert client.get("/policies").json() == [{"hour": 3, "n_ev": policy.n_ev, "n_regions": len(policy.regions)}]


@given(st.floats(-1, 1))
def test_model_round_trip_preserves_lookup(policy, s):
    back = PolicyModel.model_validate_json(PolicyModel.from_policy(policy).model_dump_json()).to_policy()
    assert lookup(back, s).value == lookup(policy, s).value
