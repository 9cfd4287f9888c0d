import pytest

from dots.corpus import corpus_words, generate_synthetic
from dots.database import default_database
from dots.ontology import build_vocabulary, default_ontology
from dots.state import StateCodec


@pytest.fixture(scope="session")
def onto():
    return default_ontology()


@pytest.fixture(scope="session")
def db(onto):
    return default_database(onto)


@pytest.fixture(scope="session")
def corpus(onto, db):
    return generate_synthetic(onto, db, 300, seed=7)


@pytest.fixture(scope="session")
def vocab(onto, corpus):
    return build_vocabulary(onto, onto.words() | corpus_words(corpus.all()) | {"find", "a"})


@pytest.fixture(scope="session")
def codec(onto, vocab):
    return StateCodec(onto, vocab)
