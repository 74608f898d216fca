import random
import sys
from pathlib import Path

import pytest
import torch

torch.set_num_threads(1)  # tiny tensors; avoids intra-op thread overhead

sys.path.insert(0, str(Path(__file__).parent))

from nerbert.heads import TagScheme
from nerbert.tokenizer import SPECIAL_PIECES, Vocabulary, build_vocab

TABLE3_WORDS = ["Peter", "lebt", "in", "Frankfurt", "am", "Main"]
TABLE3_WORD_TAGS = ["B-Per", "O", "O", "B-Loc", "I-Loc", "I-Loc"]
TABLE3_TOKEN_TAGS = ["B-Per", "O", "O", "B-Loc", "I-Loc", "I-Loc", "I-Loc"]


@pytest.fixture
def table3_vocab():
    """Pieces that split "Frankfurt" into Frank + _furt, everything else whole."""
    return Vocabulary(
        SPECIAL_PIECES + ["Peter", "lebt", "in", "Frank", "_furt", "am", "Main"]
    )


@pytest.fixture
def per_loc_scheme():
    return TagScheme(("Per", "Loc"))


@pytest.fixture
def synth_vocab():
    from synth import make_pretrain_text

    rng = random.Random(7)
    return build_vocab(make_pretrain_text(rng, n_docs=10).splitlines(), 32)


@pytest.fixture(autouse=True)
def _stable_torch_seed():
    torch.manual_seed(12345)
