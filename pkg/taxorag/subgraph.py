"""
Per-document subgraph retrieval: the parts of the taxonomy whose labels are
semantically close to the input text at adjacent levels.
"""

import networkx as nx

from taxorag.index import query_candidates

__all__ = [
    "Subgraph",
    "retrieve_candidates",
    "subgraph_from_candidates",
    "retrieve_subgraph",
]


class Subgraph(object):
    """
    A set of taxonomy edges, each joining labels at adjacent levels, held as
    a :py:class:`networkx.DiGraph` directed from parent to child.

    Attributes
    ----------
    graph : :py:class:`networkx.DiGraph`
        Nodes are :py:class:`~taxorag.taxonomy.Label` objects; exactly the
        endpoints of the edges.
    """

    def __init__(self, graph=None):
        self.graph = graph if graph is not None else nx.DiGraph()

    @classmethod
    def from_edges(cls, edges):
        graph = nx.DiGraph()
        graph.add_edges_from(edges)
        return cls(graph)

    @property
    def nodes(self):
        return frozenset(self.graph.nodes)

    @property
    def edges(self):
        """frozenset of (parent, child)"""
        return frozenset(self.graph.edges)

    def __len__(self):
        return self.graph.number_of_edges()

    def __eq__(self, other):
        if not isinstance(other, Subgraph):
            return NotImplemented
        return self.edges == other.edges

    def __repr__(self):
        return "<Subgraph nodes={} edges={}>".format(
            self.graph.number_of_nodes(), self.graph.number_of_edges())

    def sorted_edges(self):
        """Edges ordered by (parent id, child id)."""
        return sorted(self.graph.edges)

    def at_level(self, level):
        """The nodes of ``level``, in id order."""
        return sorted(node for node in self.graph if node.level == level)

    def parents_of(self, label):
        """The parents of ``label`` within the subgraph, in id order."""
        if label not in self.graph:
            return []
        return sorted(self.graph.predecessors(label))

    def format_edges(self):
        """One ``"parent -> child"`` line per edge, sorted."""
        return "\n".join(sorted(
            "{} -> {}".format(parent.name, child.name)
            for parent, child in self.graph.edges))


def retrieve_candidates(taxonomy, index, x_emb, config):
    """
    Query the candidate set of every level ``1..L`` of ``taxonomy``.

    Returns
    -------
    {level: :py:class:`~taxorag.index.CandidateSet`}
    """
    return {
        level: query_candidates(index, x_emb, level, config)
        for level in range(1, taxonomy.depth + 1)
    }


def subgraph_from_candidates(taxonomy, candidates):
    """
    Keep the taxonomy edges whose parent and child were both retrieved.

    Parameters
    ----------
    taxonomy : :py:class:`~taxorag.taxonomy.Taxonomy`
    candidates : {level: iterable of :py:class:`~taxorag.taxonomy.Label`}
        The retrieved labels per level. :py:class:`~taxorag.index.CandidateSet`
        values are accepted too. Missing levels count as empty.

    Returns
    -------
    :py:class:`Subgraph`
        ``{(parent(c), c) : c in Q[l], parent(c) in Q[l - 1], 2 <= l <= L}``.
        Retrieved labels with no surviving edge are not part of it.
    """
    retrieved = {}
    for level, members in candidates.items():
        labels = getattr(members, "labels", members)
        retrieved[level] = frozenset(labels)

    graph = nx.DiGraph()
    for level in range(2, taxonomy.depth + 1):
        above = retrieved.get(level - 1, frozenset())
        if not above:
            continue
        for child in retrieved.get(level, ()):
            parent = taxonomy.parent(child)
            if parent in above:
                graph.add_edge(parent, child)

    return Subgraph(graph)


def retrieve_subgraph(taxonomy, index, x_emb, config):
    """
    Retrieve the subgraph of ``taxonomy`` relevant to an input embedding.

    Equivalent to :py:func:`subgraph_from_candidates` applied to
    :py:func:`retrieve_candidates`.
    """
    return subgraph_from_candidates(
        taxonomy, retrieve_candidates(taxonomy, index, x_emb, config))
