import logging
import os

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from api.routes import router as model_router
from infrastructure.config import MODEL_PATH
from infrastructure.errors import NlsError
from infrastructure.model_store import load_model

logger = logging.getLogger(__name__)

app = FastAPI(title="Neural Local Smoother API")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(model_router)


@app.on_event("startup")
def startup():
    # a model injected before startup (tests, embedding) wins over MODEL_PATH
    if getattr(app.state, "model", None) is not None:
        return
    app.state.model = None
    if not os.path.exists(MODEL_PATH):
        logger.warning(f"No model at {MODEL_PATH}; /predict and /explain return 503 until one is saved there")
        return
    try:
        app.state.model = load_model(MODEL_PATH)
        print(f"✓ Model loaded from {MODEL_PATH}")
    except NlsError as e:
        logger.error(f"Could not load model from {MODEL_PATH}: {e}")


@app.get("/health")
def health():
    return {"status": "ok", "model_loaded": getattr(app.state, "model", None) is not None}
