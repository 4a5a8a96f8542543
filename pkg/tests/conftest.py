import json
import random

import numpy as np
import pytest

from taxorag import Document, LevelIndex, load_taxonomy


def random_rows(rng, depth, max_labels=600, max_children=5):
    """
    Random root-to-leaf rows of a taxonomy with at most ``max_labels``
    labels. Every label name is a distinct single word token.
    """
    counter = [0]

    def name(level):
        counter[0] += 1
        return "w{}x{}".format(level, counter[0])

    budget = max_labels
    chains = [(name(1),) for _ in range(rng.randint(2, 6))]
    budget -= len(chains)
    for level in range(2, depth + 1):
        deeper = []
        for chain in chains:
            # At least one child per parent so every chain reaches depth
            children = max(1, min(rng.randint(1, max_children),
                                  budget // max(1, len(chains))))
            for _ in range(children):
                deeper.append(chain + (name(level),))
        budget -= len(deeper)
        chains = deeper
    return chains


def random_taxonomy(rng, depth, max_labels=600, max_children=5):
    return load_taxonomy(random_rows(rng, depth, max_labels, max_children))


def random_index(rng, taxonomy, dim=16):
    """
    An index of random Gaussian label vectors, plus the numpy generator used
    (for drawing query vectors).
    """
    state = np.random.RandomState(rng.randint(0, 2 ** 31 - 1))
    entries = {level: [] for level in range(1, taxonomy.depth + 1)}
    for label in taxonomy.labels:
        entries[label.level].append((label, state.normal(size=dim)))
    return LevelIndex(entries, taxonomy.depth), state


def synthetic_corpus(rng, taxonomy, size, decoy_rate=0.2, noise_words=6):
    """
    Documents whose text names their gold labels, plus noise words which
    never occur in label names. About ``decoy_rate`` of the documents name a
    wrong level-1 label in place of their true one.
    """
    leaves = taxonomy.labels_at_level(taxonomy.depth)
    roots = taxonomy.labels_at_level(1)
    documents = []
    for number in range(size):
        path = taxonomy.ancestry(rng.choice(leaves))
        named = [label.name for label in path]
        if rng.random() < decoy_rate:
            named[0] = rng.choice(
                [root for root in roots if root != path[0]]).name
        noise = ["noise{}".format(rng.randint(0, 50))
                 for _ in range(noise_words)]
        words = named + noise
        rng.shuffle(words)
        documents.append(Document(
            "doc{}".format(number), " ".join(words),
            tuple(label.name for label in path)))
    return documents


def write_jsonl(path, documents, gold_fields=("l1", "l2", "l3")):
    with open(path, "w") as f:
        for document in documents:
            record = {"id": document.id, "text": document.text}
            record.update(zip(gold_fields, document.gold))
            f.write(json.dumps(record) + "\n")


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def pets():
    """A small three level taxonomy."""
    return load_taxonomy([
        ("pets", "dogs", "dog food"),
        ("pets", "dogs", "dog toys"),
        ("pets", "cats", "cat flaps"),
        ("pets", "cats", "cat food"),
        ("toys", "games", "board games"),
        ("toys", "games", "card games"),
        ("toys", "outdoor", "kites"),
        ("health", "supplements", "vitamins"),
        ("health", "personal care", "shaving"),
    ])


@pytest.fixture
def pet_documents(pets):
    return [
        Document("d0", "kibble for my dog food bowl",
                 ("pets", "dogs", "dog food")),
        Document("d1", "a cat flaps installation kit",
                 ("pets", "cats", "cat flaps")),
        Document("d2", "the kites fly high", ("toys", "outdoor", "kites")),
        Document("d3", "daily vitamins for adults",
                 ("health", "supplements", "vitamins")),
        Document("d4", "shaving foam and razor",
                 ("health", "personal care", "shaving")),
    ]
