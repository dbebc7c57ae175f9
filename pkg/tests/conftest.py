import numpy as np
import pytest

from scotoma.dataset import Observation, SemiDataset


def obs(oid, group, x):
    return Observation(id=oid, group=group, x=np.asarray(x, dtype=float))


def make_pairs(Xc, Xt, prefix="p"):
    Xc = np.atleast_2d(Xc)
    Xt = np.atleast_2d(Xt)
    return tuple(
        (obs(f"{prefix}c{i}", "c", Xc[i]), obs(f"{prefix}t{i}", "t", Xt[i]))
        for i in range(len(Xc)))


@pytest.fixture
def toy_dataset():
    """2 training pairs, 1 pool observation per side, 2 object pairs (p=2)."""
    paired = make_pairs([[0.0, 0.0], [1.0, 1.0]], [[0.1, 0.0], [1.1, 1.0]])
    return SemiDataset(
        paired=paired,
        unpaired_control=(obs("uc0", "c", [2.0, 0.5]),),
        unpaired_treatment=(obs("ut0", "t", [2.1, 0.5]),),
        object_control=(obs("oc0", "c", [3.0, 0.2]), obs("oc1", "c", [5.0, 0.8])),
        object_treatment=(obs("ot0", "t", [3.1, 0.2]), obs("ot1", "t", [5.1, 0.8])),
    )


def random_dataset(rng, p=4, n_pairs=6, n_pool=3, n_object=4):
    paired = make_pairs(rng.normal(size=(n_pairs, p)), rng.normal(size=(n_pairs, p)))
    return SemiDataset(
        paired=paired,
        unpaired_control=tuple(obs(f"uc{i}", "c", rng.normal(size=p))
                               for i in range(n_pool)),
        unpaired_treatment=tuple(obs(f"ut{i}", "t", rng.normal(size=p))
                                 for i in range(n_pool)),
        object_control=tuple(obs(f"oc{i}", "c", rng.normal(size=p))
                             for i in range(n_object)),
        object_treatment=tuple(obs(f"ot{i}", "t", rng.normal(size=p))
                               for i in range(n_object)),
    )
