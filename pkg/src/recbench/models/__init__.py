"""
The thirteen benchmarked recommenders, all behind the :class:`Recommender`
contract.
"""

from .base import Recommender, ValidationData
from .classical import ItemKNN, PopularityRecommender, RandomRecommender, UserKNN
from .graph import GFCF, P3alpha, RP3beta
from .linear import SLIM, Ease
from .matrix import ALS, PureSVD
from .neural import MultiDAE, MultiVAE

MODELS: dict[str, type[Recommender]] = {
    cls.name: cls
    for cls in (
        RandomRecommender,
        PopularityRecommender,
        ItemKNN,
        UserKNN,
        PureSVD,
        ALS,
        Ease,
        SLIM,
        P3alpha,
        RP3beta,
        GFCF,
        MultiDAE,
        MultiVAE,
    )
}

#: display names used in reports
DISPLAY_NAMES = {
    "random": "Random",
    "popularity": "Popularity",
    "itemknn": "ItemKNN",
    "userknn": "UserKNN",
    "puresvd": "PureSVD",
    "als": "ALS",
    "ease": "Ease",
    "slim": "SLIM",
    "p3alpha": "P3alpha",
    "rp3beta": "RP3beta",
    "gfcf": "GFCF",
    "multidae": "MultiDAE",
    "multivae": "MultiVAE",
}

NEURAL = {"multidae", "multivae"}
UNPERSONALIZED = {"random", "popularity"}


def make_model(name: str, **params) -> Recommender:
    try:
        cls = MODELS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**params)


__all__ = [
    "MODELS",
    "DISPLAY_NAMES",
    "Recommender",
    "ValidationData",
    "make_model",
] + [cls.__name__ for cls in MODELS.values()]
