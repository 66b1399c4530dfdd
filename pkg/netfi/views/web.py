from dataclasses import asdict
from pathlib import Path

from fastapi import APIRouter, Request
from fastapi.responses import HTMLResponse
from fastapi.templating import Jinja2Templates

router = APIRouter()
templates_dir = Path(__file__).resolve().parents[1] / "templates"
templates = Jinja2Templates(directory=str(templates_dir))


@router.get("/", response_class=HTMLResponse)
def home(request: Request):
    relay = getattr(request.app.state, "relay", None)
    stats = asdict(relay.stats_snapshot()) if relay is not None else None
    scenario = relay.config.scenario if relay is not None else None
    stages = [s.describe() for s in relay.pipeline.stages] if relay is not None else []

    return templates.TemplateResponse(
        request,
        "index.html",
        {
            "title": "netfi",
            "stats": stats,
            "scenario": scenario,
            "stages": stages,
            "listen": relay.listen_address if relay is not None else None,
            "forward": relay.config.forward if relay is not None else None,
        },
    )
