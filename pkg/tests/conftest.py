import numpy as np
import pytest

from dvhpredict.core import Organ
from dvhpredict.regressors import AlgorithmId, train_dvh_model
from dvhpredict.synth import SynthConfig, synth_cohort

# light hyperparameters: enough structure to exercise every contract without
# burning minutes in the unit suite
FAST_PARAMS = {
    AlgorithmId.LR: {},
    AlgorithmId.EN: {},
    AlgorithmId.DT: {"max_depth": 3},
    AlgorithmId.RF: {"n_trees": 5, "max_depth": 3},
    AlgorithmId.GBR: {"n_stages": 10, "max_depth": 2},
    AlgorithmId.MLP: {"epochs": 60, "learning_rate": 0.05},
    AlgorithmId.FRBP: {"max_depth": 2},
}


@pytest.fixture(scope="session")
def small_cohort():
    return synth_cohort(SynthConfig(seed=11, n_patients=24))


@pytest.fixture(scope="session")
def holdout_cohort():
    return synth_cohort(SynthConfig(seed=12, n_patients=8))


@pytest.fixture(scope="session")
def small_models(small_cohort):
    """Every base algorithm trained (lightly) on the bladder of the small cohort."""
    return {
        algo: train_dvh_model(algo, Organ.BLADDER, small_cohort, params, seed=5)
        for algo, params in FAST_PARAMS.items()
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_bundle(small_models, tmp_path_factory):
    """All seven algorithms for the bladder, persisted once per session."""
    from dvhpredict.bundle import load_bundle, save_bundle
    from dvhpredict.core import Organ

    models = {(algo, Organ.BLADDER): m for algo, m in small_models.items()}
    meta = {
        "seed": 5,
        "split": {"train": 24, "test": 0, "ratio": 1.0},
        "algorithms": [a.value for a in small_models],
        "ensembles": {
            "bladder": {
                "Ensemble3": ["LR", "EN", "DT"],
                "Ensemble6": ["LR", "EN", "DT", "RF", "GBR", "MLP"],
            }
        },
    }
    path = tmp_path_factory.mktemp("bundle") / "tiny.dvhm"
    save_bundle(path, models, meta)
    return path, load_bundle(path)
