from fastapi import APIRouter, Request

router = APIRouter()

@router.get("/health")
def health(request: Request):
    relay = getattr(request.app.state, "relay", None)
    return {"status": "ok", "relay": "attached" if relay is not None else "detached"}
