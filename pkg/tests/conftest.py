import pytest
import torch

from ctran.config import GROUPS, ModelConfig
from ctran.data import build_label_maps, encode_batch
from ctran.model import CTRAN
from ctran.synthetic import synthetic_corpus

ACCEPTANCE_LINES = []


def tiny_config(**overrides):
    base = dict(d_emb=6, kernel_sizes=[1, 2], total_filters=8, heads=2, ffn_dim=12,
                encoder_layers=1, decoder_layers=1, dropout={g: 0.0 for g in GROUPS})
    base.update(overrides)
    return ModelConfig(**base).validate()


@pytest.fixture
def corpus():
    return synthetic_corpus(32, seed=0)


@pytest.fixture
def maps(corpus):
    return build_label_maps(corpus)


@pytest.fixture
def toy_model(maps):
    torch.manual_seed(0)
    return CTRAN.for_labels(tiny_config(), maps).double().eval()


@pytest.fixture
def toy_batch(corpus, maps):
    return encode_batch(corpus[:4], maps)


@pytest.fixture
def acceptance_line():
    def record(line: str):
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
