import numpy as np
import pytest

from attn2d import DenseTensor


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def random_tensor(rng, heads, tokens, head_dim, positions=None, dtype=np.float64):
    if positions is None:
        positions = np.arange(tokens)
    return DenseTensor(rng.standard_normal((heads, tokens, head_dim)).astype(dtype),
                       np.asarray(positions))


def random_qkv(seed, heads, kv_heads, tokens, head_dim, dtype=np.float64):
    rng = philox(seed)
    q = random_tensor(rng, heads, tokens, head_dim, dtype=dtype)
    k = random_tensor(rng, kv_heads, tokens, head_dim, dtype=dtype)
    v = random_tensor(rng, kv_heads, tokens, head_dim, dtype=dtype)
    return q, k, v


@pytest.fixture
def rng():
    return philox(1234)
