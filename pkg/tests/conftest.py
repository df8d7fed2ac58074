import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gaplab import corpus, stimgen
from gaplab.neural_lm import LmConfig, train


@pytest.fixture(scope="session")
def default_grammar() -> dict:
    return corpus.load_grammar_config(
        stimgen.DATA_DIR / "grammar" / "default_grammar.json"
    )


@pytest.fixture(scope="session")
def small_split(default_grammar) -> corpus.CorpusSplit:
    return corpus.synth_corpus(default_grammar, 60_000, seed=3)


@pytest.fixture(scope="session")
def tiny_lm(small_split):
    """A small trained model shared by scoring/perplexity tests."""
    cfg = LmConfig(
        embed_dim=24,
        hidden_dim=32,
        num_layers=2,
        dropout_prob=0.2,
        batch_size=16,
        learning_rate=20.0,
        max_epochs=2,
        bptt_len=35,
        vocab_size=len(small_split.vocab),
        seed=9,
    )
    params, log = train(cfg, small_split)
    return params, log, small_split
