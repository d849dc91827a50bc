"""JSON-over-HTTP prediction API backing the dashboard.

Stateless: every response is a pure function of the loaded bundle and the
request body.  Invalid features get a 400 with a field-level message, an
unknown algorithm or organ without a model gets a 404.
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .bundle import ModelBundle, prediction_payload
from .core import FeatureVector, Organ
from .errors import InvalidFeatures
from .regressors import AlgorithmId


def create_app(bundle: ModelBundle, bands: dict | None = None, constraints: dict | None = None) -> FastAPI:
    app = FastAPI(title="dvhpredict", version=__version__)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    bands = bands or {}
    constraints = constraints or {}

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "version": __version__,
            "created_at": bundle.meta.get("created_at"),
        }

    @app.get("/api/models")
    def models():
        return {
            "organs": [o.value for o in bundle.organs()],
            "algorithms": {
                o.value: [a.value for a in bundle.algorithms(o)] for o in bundle.organs()
            },
            "ensembles": bundle.meta.get("ensembles", {}),
            "hyperparams": bundle.meta.get("hyperparams", {}),
            "split": bundle.meta.get("split", {}),
            "seed": bundle.meta.get("seed"),
        }

    @app.get("/api/constraints")
    def get_constraints():
        return constraints

    @app.post("/api/predict")
    def predict(body: dict):
        features_dict = body.get("features")
        if not isinstance(features_dict, dict):
            raise HTTPException(status_code=400, detail="body must carry a 'features' object")
        try:
            features = FeatureVector.from_dict(features_dict)
        except (InvalidFeatures, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"invalid features: {exc}") from None
        organ_name = body.get("organ")
        try:
            organ = Organ(organ_name)
        except ValueError:
            raise HTTPException(
                status_code=400, detail=f"organ must be one of {[o.value for o in Organ]}"
            ) from None
        requested = body.get("algorithms")
        if requested is None:
            algorithms = bundle.algorithms(organ)
        else:
            algorithms = []
            for name in requested:
                try:
                    algorithms.append(AlgorithmId(name))
                except ValueError:
                    raise HTTPException(
                        status_code=404, detail=f"unknown algorithm {name!r}"
                    ) from None
        try:
            return prediction_payload(
                bundle,
                features,
                organ,
                algorithms,
                band=bands.get(organ),
                constraints=constraints,
            )
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None

    return app
