"""
Turning a retrieved :py:class:`~taxorag.subgraph.Subgraph` into prompt text:
enumerate its complete root-to-leaf label paths, serialize them one per line
and embed them, together with the candidate labels, in the classification
template.
"""

import hashlib
from dataclasses import dataclass

import networkx as nx
from pydantic import BaseModel

from taxorag.errors import NoCandidates

__all__ = [
    "LabelPath",
    "PromptTemplate",
    "PromptBundle",
    "enumerate_paths",
    "taxonomy_paths",
    "serialize_paths",
    "build_prompt",
]

PATH_SEPARATOR = " -> "

DEFAULT_INSTRUCTION = (
    "Classify {task_description} into one of the following categories: "
    "{category_text}. You must directly output one of the categories and do "
    "not add \", ', and *."
)

DEFAULT_KNOWLEDGE_SECTION = (
    "\n\nHere is the partial knowledge graph: \n\"\"\"\n{knowledge}\n\"\"\""
)


@dataclass(frozen=True)
class LabelPath:
    """
    A chain of labels, one per level, running from level 1 downwards.

    Attributes
    ----------
    nodes : (:py:class:`~taxorag.taxonomy.Label`, ...)
    """
    nodes: tuple

    def __str__(self):
        return PATH_SEPARATOR.join(node.name for node in self.nodes)

    def __len__(self):
        return len(self.nodes)

    @property
    def leaf(self):
        return self.nodes[-1]


def enumerate_paths(subgraph, depth):
    """
    Enumerate every full-depth path of ``subgraph``.

    Each level-``depth`` node is walked upwards through the reversed
    subgraph to every level-1 node it reaches (using
    :py:func:`networkx.all_simple_paths`); each leaf-to-root chain found is
    reversed. Chains which stop before level 1 or which do not reach level
    ``depth`` are not paths.

    Parameters
    ----------
    subgraph : :py:class:`~taxorag.subgraph.Subgraph`
    depth : int
        The taxonomy depth ``L``.

    Returns
    -------
    frozenset of :py:class:`LabelPath`
    """
    roots = subgraph.at_level(1)
    if not roots:
        return frozenset()

    upward = subgraph.graph.reverse(copy=False)
    paths = set()
    for leaf in subgraph.at_level(depth):
        for chain in nx.all_simple_paths(upward, leaf, roots,
                                         cutoff=depth - 1):
            if len(chain) == depth:
                paths.add(LabelPath(tuple(reversed(chain))))

    return frozenset(paths)


def taxonomy_paths(taxonomy):
    """Every root-to-leaf path of the whole taxonomy."""
    return frozenset(
        LabelPath(taxonomy.ancestry(leaf))
        for leaf in taxonomy.labels_at_level(taxonomy.depth)
    )


def serialize_paths(paths):
    """
    Render paths as text: one path per line, nodes joined by ``" -> "``,
    lines sorted lexicographically, no trailing newline.

    Raises
    ------
    ValueError
        If the paths differ in length.
    """
    if len({len(path) for path in paths}) > 1:
        raise ValueError("all paths must have the same length")
    return "\n".join(sorted(str(path) for path in paths))


class PromptTemplate(BaseModel):
    """
    The classification prompt.

    ``instruction`` may use the ``{task_description}`` and
    ``{category_text}`` placeholders and ``knowledge_section`` the
    ``{knowledge}`` placeholder. The knowledge section (including its leading
    blank line) is appended only when there is knowledge to show.
    """

    instruction: str = DEFAULT_INSTRUCTION
    knowledge_section: str = DEFAULT_KNOWLEDGE_SECTION
    task_description: str = "the text"


@dataclass(frozen=True)
class PromptBundle:
    """
    A filled in classification prompt.

    Attributes
    ----------
    text : str
        The prompt, sent as the system message.
    candidate_labels : tuple
        The labels offered, in the order listed.
    knowledge_block : str
        The serialized paths shown (possibly empty).
    category_text : str
    """
    text: str
    candidate_labels: tuple
    knowledge_block: str
    category_text: str

    @property
    def prompt_hash(self):
        """A short, stable fingerprint of :py:attr:`text`."""
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:16]


def build_prompt(task_description, candidates, knowledge_block, template=None):
    """
    Fill in the classification template.

    Parameters
    ----------
    task_description : str or None
        What is being classified, e.g. ``"the review of a product"``. If
        ``None`` the template's own ``task_description`` is used.
    candidates : sequence of :py:class:`~taxorag.taxonomy.Label` or str
        Joined with ``", "`` into ``{category_text}``.
    knowledge_block : str
        Serialized paths. When empty the knowledge section is omitted.
    template : :py:class:`PromptTemplate` or None

    Raises
    ------
    NoCandidates
    """
    template = template or PromptTemplate()
    if task_description is None:
        task_description = template.task_description
    candidates = tuple(candidates)
    if not candidates:
        raise NoCandidates("a prompt needs at least one candidate label")

    category_text = ", ".join(getattr(c, "name", c) for c in candidates)
    text = template.instruction.format(
        task_description=task_description, category_text=category_text)
    if knowledge_block:
        text += template.knowledge_section.format(knowledge=knowledge_block)

    return PromptBundle(text, candidates, knowledge_block, category_text)
