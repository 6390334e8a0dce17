"""Shared fixtures.

The desk-scale corpus (600 volume elements at 32^3, a paper-shaped mix of
untextured and fiber-textured examples over grain sizes 4..16) is built
once per session together with its feature sets, stress targets, and the
trained embedding; stage wall times are recorded so the acceptance suite
can assert the end-to-end budget.
"""

import time

import numpy as np
import pytest

from mvedesign.elasticity import field_summary, taylor_stress_field
from mvedesign.embedding import TripletEmbedding
from mvedesign.evaluation import split_pool
from mvedesign.features import FeatureMatrix, classic_descriptor
from mvedesign.microstructure import CorpusSpec, generate_corpus
from mvedesign.seeding import derive_rng

DESK_SEED = 20250808
EMBED_CONFIG = dict(epochs=200, learning_rate=0.3, seed=3)


@pytest.fixture(scope="session")
def mini_corpus():
    """Eight 16^3 volume elements for cheap unit tests."""
    spec = CorpusSpec(dims=(16, 16, 16), grain_sizes=(4.0, 5.0), seeds_per_size=2,
                      textured_count=4, seed=9)
    return generate_corpus(spec)


@pytest.fixture(scope="session")
def embed_corpus():
    """Desk-scale 120-element corpus (6 sizes x 10 seeds + 60 textured)."""
    spec = CorpusSpec(dims=(32, 32, 32), grain_sizes=(4.0, 6.0, 8.0, 10.0, 13.0, 16.0),
                      seeds_per_size=10, textured_count=60, seed=11)
    return generate_corpus(spec)


@pytest.fixture(scope="session")
def trained_embedding(embed_corpus):
    return TripletEmbedding(epochs=60, learning_rate=0.2, seed=3,
                            eval_triplets=150).fit(embed_corpus)


@pytest.fixture(scope="session")
def desk():
    """Desk-scale pipeline state: corpus, features, targets, split, timings."""
    timings = {}

    t0 = time.time()
    spec = CorpusSpec(dims=(32, 32, 32), grain_sizes=tuple(range(4, 17)),
                      seeds_per_size=9, textured_count=483, seed=DESK_SEED)
    corpus = generate_corpus(spec)
    timings["gen"] = time.time() - t0
    ids = tuple(m.meta.id for m in corpus)
    sizes = {m.meta.id: m.meta.target_grain_size for m in corpus}

    t0 = time.time()
    model = TripletEmbedding(**EMBED_CONFIG).fit(corpus)
    timings["embed_train"] = time.time() - t0

    t0 = time.time()
    features = {
        "classic": FeatureMatrix(ids, np.array([classic_descriptor(m) for m in corpus]), "classic"),
        "contrastive": FeatureMatrix(ids, model.transform(corpus), "contrastive"),
    }
    timings["featurize"] = time.time() - t0

    t0 = time.time()
    targets = {m.meta.id: field_summary(taylor_stress_field(m)) for m in corpus}
    timings["oracle"] = time.time() - t0

    plan = split_pool(ids, sizes, 0.2, seed=77, fractions=(0.25,), replicates=10)
    return {
        "corpus": corpus,
        "ids": ids,
        "sizes": sizes,
        "model": model,
        "features": features,
        "targets": targets,
        "plan": plan,
        "timings": timings,
    }


@pytest.fixture(scope="session")
def fig5_cloud():
    """The three-dimensional comparison cloud: 1000 uniform points on
    (-5, 5) plus 500 standard-normal points, min-max normalized."""
    from mvedesign.features import normalize_features

    rng = derive_rng(101, "fig5")
    cloud = np.vstack([
        rng.uniform(-5.0, 5.0, (1000, 3)),
        rng.normal(0.0, 1.0, (500, 3)),
    ])
    ids = tuple(f"pt-{i:04d}" for i in range(len(cloud)))
    return normalize_features(FeatureMatrix(ids, cloud, "external"))
