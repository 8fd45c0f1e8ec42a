import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")

DESK_N, DESK_M, DESK_MP = 32768, 150, 10


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20240917))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture(scope="session")
def desk_matrix():
    """The correlated column family at full desk scale."""
    from sketch_krylov.bench import gen_oscillatory

    return np.asarray(gen_oscillatory(DESK_N, DESK_M))


@pytest.fixture(scope="session")
def desk_prefix_conds(desk_matrix):
    """cond of each leading block of columns, one entry per block."""
    R = np.linalg.qr(desk_matrix, mode="r")
    return [float(np.linalg.cond(R[:c, :c]))
            for c in range(DESK_MP, DESK_M + 1, DESK_MP)]


@pytest.fixture(scope="session")
def desk_classic_coarse(desk_matrix):
    """Coarse-precision classical sweeps at desk scale.

    Returns per-variant per-iteration cond(Q) plus the final relative
    factorization error; shared because the sweeps cost seconds each.
    """
    from sketch_krylov.classic import ClassicBgsConfig, ClassicSweep
    from sketch_krylov.kernels import COARSE, BlockPartition

    part = BlockPartition.uniform(DESK_M, DESK_MP)
    off = part.offsets()
    out = {}
    for variant in ("bcgs", "bmgs", "bcgs2"):
        cfg = ClassicBgsConfig(partition=part, variant=variant, precision=COARSE)
        sweep = ClassicSweep(DESK_N, cfg)
        conds = []
        for b in range(part.num_blocks):
            _, j1 = sweep.push_block(desk_matrix[:, off[b]:off[b + 1]])
            conds.append(float(np.linalg.cond(sweep.Q[:, :j1])))
        err = float(np.linalg.norm(desk_matrix - sweep.Q @ sweep.R)
                    / np.linalg.norm(desk_matrix))
        out[variant] = {"conds": conds, "fact_err": err}
    return out
