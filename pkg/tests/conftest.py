import pytest
import torch

from extsumm.corpus import CategorySchema, synth_corpus
from extsumm.model import AspectSummarizer, ModelConfig
from extsumm.vocab import Vocab

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def schema3():
    return CategorySchema.from_names("synthetic", ["alpha", "bravo", "charlie"])


@pytest.fixture(scope="session")
def tiny_corpus(schema3):
    return synth_corpus(seed=1, n_products=20, schema=schema3)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    texts = []
    for inst in tiny_corpus.all_instances():
        texts.extend(inst.sentences)
        texts.append(inst.summary)
    return Vocab.build(texts)


def build_model(vocab, n_aspects=3, **overrides):
    kwargs = dict(
        vocab_size=len(vocab),
        n_aspects=n_aspects,
        embed_dim=16,
        hidden_dim=16,
        seed=0,
    )
    kwargs.update(overrides)
    return AspectSummarizer(ModelConfig(**kwargs))


@pytest.fixture
def tiny_model(tiny_vocab):
    return build_model(tiny_vocab)


def gold_labels_for(corpus, instances):
    return [corpus.gold_labels[(i.product_id, i.aspect.name)] for i in instances]
