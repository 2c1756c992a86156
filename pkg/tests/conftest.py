import numpy as np
import pytest

from chartransducer.data import Example, Vocabulary, build_vocab, gen_synthetic_inflection
from chartransducer.model import TransducerModel
from chartransducer.transformer import TransformerConfig

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


@pytest.fixture(scope="session", autouse=True)
def _single_threaded_blas():
    # the matrices here are small; threaded BLAS only adds overhead and
    # a fixed thread count keeps summation order reproducible
    if threadpool_limits is None:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def finite_difference(f, tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. tensor.data."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error; the floor guards entries whose true
    gradient is zero, where central differences see only roundoff."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float((np.abs(a - b) / denom).max())


@pytest.fixture(scope="session")
def synth_data():
    return gen_synthetic_inflection(300, 26, seed=11)


@pytest.fixture(scope="session")
def synth_vocabs(synth_data):
    train, _, _ = synth_data
    return build_vocab(train)


def tiny_config(**overrides) -> TransformerConfig:
    defaults = dict(num_layers=1, num_heads=2, d_model=8, d_ff=16,
                    dropout_rate=0.0, max_positions=64)
    defaults.update(overrides)
    return TransformerConfig(**defaults)


@pytest.fixture()
def tiny_model(synth_vocabs):
    src_vocab, tgt_vocab = synth_vocabs
    return TransducerModel.init(tiny_config(), src_vocab, tgt_vocab, seed=5)


@pytest.fixture(scope="session")
def ab_vocab():
    v = Vocabulary()
    for s in "abcdefgh":
        v.add(s)
    return v


def make_examples(pairs):
    """[(source, features, target)] -> [Example] with code-point splitting."""
    return [Example(list(s), list(f), list(t)) for s, f, t in pairs]
