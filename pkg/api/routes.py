from typing import List

import numpy as np
from fastapi import APIRouter, HTTPException, Request

from core import interpret, lls, nls
from infrastructure.errors import InputError, NlsError
from models.schemas import ExplainResponse, ModelInfo, ModelKind, PredictRequest, PredictResponse

router = APIRouter()


def get_model(request: Request):
    model = getattr(request.app.state, "model", None)
    if model is None:
        raise HTTPException(status_code=503, detail="No model loaded")
    return model


def _instances(model, rows: List[List[float]]) -> np.ndarray:
    try:
        return nls.as_instances(rows, model.d)
    except InputError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.get("/model", response_model=ModelInfo)
def get_model_info(request: Request):
    """Kind, feature names and penalization of the served model"""
    model = get_model(request)
    if isinstance(model, nls.NlsModel):
        kind, penalty = ModelKind.NLS, model.penalty
    elif isinstance(model, nls.NlsClassifier):
        kind, penalty = ModelKind.NLS_CLASSIFIER, model.config.penalty
    else:
        kind, penalty = ModelKind.LLS, None
    return ModelInfo(kind=kind, feature_names=list(model.feature_names), target_name=model.target_name, penalty=penalty)


@router.post("/predict", response_model=PredictResponse)
def predict(body: PredictRequest, request: Request):
    model = get_model(request)
    instances = _instances(model, body.instances)
    try:
        if isinstance(model, nls.NlsModel):
            predictions = nls.predict_batch(model, instances)
        elif isinstance(model, nls.NlsClassifier):
            predictions = nls.predict_class(model, instances)
        else:
            predictions = lls.predict_batch(model, instances)
    except NlsError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return PredictResponse(predictions=[float(p) for p in predictions])


@router.post("/explain", response_model=ExplainResponse)
def explain(body: PredictRequest, request: Request):
    """Local coefficients and per-feature contributions for each instance"""
    model = get_model(request)
    if isinstance(model, nls.NlsClassifier):
        raise HTTPException(status_code=400, detail="Explanations are available for regression models only")
    instances = _instances(model, body.instances)
    try:
        if isinstance(model, nls.NlsModel):
            explanations = interpret.explain_batch(model, instances)
        else:
            explanations = [interpret.explain_lls(model, x) for x in instances]
    except NlsError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return ExplainResponse(explanations=explanations)
