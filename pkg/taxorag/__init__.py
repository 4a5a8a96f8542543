"""
taxorag: retrieval-augmented zero-shot hierarchical text classification.
"""

from taxorag.version import __version__

from taxorag.errors import *
from taxorag.taxonomy import *
from taxorag.embedding import *
from taxorag.cache import *
from taxorag.index import *
from taxorag.subgraph import *
from taxorag.prompt import *
from taxorag.throttle import *
from taxorag.llm import *
from taxorag.classifier import *
from taxorag.evaluation import *
from taxorag.datasets import *
from taxorag.config import *
from taxorag.harness import *
