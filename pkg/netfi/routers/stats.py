# netfi/routers/stats.py
import json
from dataclasses import asdict

from fastapi import APIRouter, HTTPException, Request

from ..services.scenario import serialize_scenario

router = APIRouter()


def _relay(request: Request):
    relay = getattr(request.app.state, "relay", None)
    if relay is None:
        raise HTTPException(status_code=503, detail="no relay attached")
    return relay


@router.get("/stats")
def stats(request: Request):
    return asdict(_relay(request).stats_snapshot())


@router.get("/scenario")
def scenario(request: Request):
    return json.loads(serialize_scenario(_relay(request).config.scenario))
