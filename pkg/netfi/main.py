from typing import Optional

from fastapi import FastAPI

from . import config
from .routers.health import router as health_router
from .routers.stats import router as stats_router
from .views.web import router as web_router


def create_app(relay: Optional[object] = None) -> FastAPI:
    """Status app for a running relay; without one, stats endpoints answer 503."""
    app = FastAPI(title=config.APP_NAME, version="1.0.0", debug=config.DEBUG)
    app.state.relay = relay

    # Routers
    app.include_router(web_router, tags=["web"])
    app.include_router(health_router, prefix="/api", tags=["health"])
    app.include_router(stats_router, prefix="/api", tags=["stats"])
    return app


app = create_app()
