"""HTTP lookup service over precomputed dispatch policies.

Policies are computed offline (``evflex simulate`` or ``evflex regions``) and
either loaded from a directory at start-up or uploaded per hour. Each signal
is then answered by a region lookup, with no optimisation on the request path.
"""
from __future__ import annotations

import re
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, model_validator

from .dispatch import NV, CriticalRegion, DispatchPolicy, lookup, lookup_many, read_policy_csv

COVER_TOL = 1e-10


class RegionModel(BaseModel):
    theta_lo: float
    theta_hi: float
    R: list[float]
    r: list[float]
    value_slope: float
    value_offset: float
    active_set: str = ""


class PolicyModel(BaseModel):
    n_ev: int = Field(ge=0)
    ids: list[str]
    members: list[int] | None = None
    regions: list[RegionModel] = Field(min_length=1)

    @model_validator(mode="after")
    def _check(self):
        nv = NV * self.n_ev
        if len(self.ids) != self.n_ev:
            raise ValueError("ids must list one entry per EV")
        if self.members is not None and len(self.members) != self.n_ev:
            raise ValueError("members must list one index per EV")
        for k, g in enumerate(self.regions):
            if len(g.R) != nv or len(g.r) != nv:
                raise ValueError(f"region {k}: expected {nv} coefficients")
            if g.theta_hi < g.theta_lo:
                raise ValueError(f"region {k}: empty interval")
        lo, hi = self.regions[0].theta_lo, self.regions[-1].theta_hi
        if lo > -1 + COVER_TOL or hi < 1 - COVER_TOL:
            raise ValueError("regions must cover [-1, 1]")
        for a, b in zip(self.regions, self.regions[1:]):
            if abs(a.theta_hi - b.theta_lo) > COVER_TOL:
                raise ValueError("regions must be sorted and contiguous")
        return self

    def to_policy(self) -> DispatchPolicy:
        regions = [CriticalRegion(g.theta_lo, g.theta_hi, np.array(g.R), np.array(g.r), g.value_slope,
                                  g.value_offset, g.active_set) for g in self.regions]
        members = None if self.members is None else np.array(self.members)
        return DispatchPolicy(regions, self.n_ev, list(self.ids), members)

    @classmethod
    def from_policy(cls, pol: DispatchPolicy) -> "PolicyModel":
        return cls(n_ev=pol.n_ev, ids=list(pol.ids), members=[int(m) for m in pol.members],
                   regions=[RegionModel(theta_lo=g.theta_lo, theta_hi=g.theta_hi, R=list(map(float, g.R)),
                                        r=list(map(float, g.r)), value_slope=g.value_slope,
                                        value_offset=g.value_offset, active_set=g.active_set)
                            for g in pol.regions])


class PolicySummary(BaseModel):
    hour: int
    n_ev: int
    n_regions: int


class SetPoint(BaseModel):
    id: str
    pc_kw: float
    pd_kw: float
    dup_kw: float
    ddn_kw: float


class DispatchResponse(BaseModel):
    hour: int
    signal: float
    value: float
    aggregate_kw: float
    setpoints: list[SetPoint]


class BatchRequest(BaseModel):
    signals: list[float] = Field(min_length=1)


class BatchResponse(BaseModel):
    hour: int
    ids: list[str]
    value: list[float]
    aggregate_kw: list[float]
    pc_kw: list[list[float]]
    pd_kw: list[list[float]]
    dup_kw: list[list[float]]
    ddn_kw: list[list[float]]


class PolicyStore:
    """Hour -> policy map, safe to share between request threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._pol: dict[int, DispatchPolicy] = {}

    def put(self, hour: int, pol: DispatchPolicy) -> None:
        with self._lock:
            self._pol[hour] = pol

    def get(self, hour: int) -> DispatchPolicy:
        with self._lock:
            pol = self._pol.get(hour)
        if pol is None:
            raise HTTPException(404, f"no policy loaded for hour {hour}")
        return pol

    def drop(self, hour: int) -> None:
        with self._lock:
            if self._pol.pop(hour, None) is None:
                raise HTTPException(404, f"no policy loaded for hour {hour}")

    def items(self):
        with self._lock:
            return sorted(self._pol.items())

    def load_dir(self, path) -> int:
        n = 0
        for f in sorted(Path(path).glob("hour_*.csv")):
            m = re.fullmatch(r"hour_(\d+)\.csv", f.name)
            if m:
                self.put(int(m.group(1)), read_policy_csv(f))
                n += 1
        return n


def create_app(policy_dir=None) -> FastAPI:
    app = FastAPI(title="evflex dispatch service")
    store = PolicyStore()
    if policy_dir is not None:
        store.load_dir(policy_dir)
    app.state.store = store

    def _signal(s: float) -> float:
        if not np.isfinite(s):
            raise HTTPException(422, "signal must be finite")
        return float(s)

    @app.get("/health")
    def health():
        return {"status": "ok", "policies": len(store.items())}

    @app.get("/policies", response_model=list[PolicySummary])
    def list_policies():
        return [PolicySummary(hour=h, n_ev=p.n_ev, n_regions=len(p.regions)) for h, p in store.items()]

    @app.put("/policies/{hour}", response_model=PolicySummary)
    def put_policy(hour: int, body: PolicyModel):
        pol = body.to_policy()
        store.put(hour, pol)
        return PolicySummary(hour=hour, n_ev=pol.n_ev, n_regions=len(pol.regions))

    @app.get("/policies/{hour}", response_model=PolicyModel)
    def get_policy(hour: int):
        return PolicyModel.from_policy(store.get(hour))

    @app.delete("/policies/{hour}")
    def delete_policy(hour: int):
        store.drop(hour)
        return {"deleted": hour}

    @app.get("/policies/{hour}/dispatch", response_model=DispatchResponse)
    def dispatch_one(hour: int, signal: float):
        pol = store.get(hour)
        r = lookup(pol, _signal(signal))
        pts = [SetPoint(id=i, pc_kw=r.pc[k], pd_kw=r.pd[k], dup_kw=r.dup[k], ddn_kw=r.ddn[k])
               for k, i in enumerate(pol.ids)]
        return DispatchResponse(hour=hour, signal=signal, value=r.value,
                                aggregate_kw=float(r.pc.sum() - r.pd.sum()), setpoints=pts)

    @app.post("/policies/{hour}/dispatch", response_model=BatchResponse)
    def dispatch_batch(hour: int, body: BatchRequest):
        pol = store.get(hour)
        s = np.array([_signal(v) for v in body.signals])
        X, v = lookup_many(pol, s)
        pc, pd = X[:, 0::NV], X[:, 1::NV]
        return BatchResponse(hour=hour, ids=list(pol.ids), value=v.tolist(),
                             aggregate_kw=(pc.sum(axis=1) - pd.sum(axis=1)).tolist(),
                             pc_kw=pc.tolist(), pd_kw=pd.tolist(),
                             dup_kw=X[:, 2::NV].tolist(), ddn_kw=X[:, 3::NV].tolist())

    return app
