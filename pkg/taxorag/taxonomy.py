"""
The label :py:class:`Taxonomy`: a leveled forest of :py:class:`Label`\\ s with
constant time parent and child lookup.
"""

import re
from dataclasses import dataclass

from taxorag.errors import (
    ConflictingParent, EmptyInput, RaggedRow, UnknownLabel, LevelOutOfRange)

__all__ = [
    "normalize_name",
    "Label",
    "Taxonomy",
    "load_taxonomy",
]


# Characters the classification prompt forbids the model from emitting.
_FORBIDDEN_CHARACTERS = re.compile(r"[\"'*]")


def normalize_name(text):
    """
    Normalize a label name (or a model's output) for comparison.

    Lowercases, removes the characters ``"``, ``'`` and ``*``, collapses runs
    of whitespace into single spaces and trims the ends.
    """
    text = _FORBIDDEN_CHARACTERS.sub("", str(text).lower())
    return " ".join(text.split())


@dataclass(frozen=True, order=True)
class Label:
    """
    A single node of a :py:class:`Taxonomy`.

    Labels order (and compare) by their ``id`` first, which is how every
    deterministic ordering in this package is defined.

    Attributes
    ----------
    id : int
        Stable identifier, unique within a taxonomy.
    name : str
        Normalized name (see :py:func:`normalize_name`).
    level : int
        1-based depth of the label.
    """
    id: int
    name: str
    level: int

    def __str__(self):
        return self.name


class Taxonomy(object):
    """
    An immutable leveled forest of labels.

    Every label at level ``l > 1`` has exactly one parent at level ``l - 1``.
    Several roots are permitted. Instances are normally created with
    :py:func:`load_taxonomy`.

    Parameters
    ----------
    levels : [[:py:class:`Label`, ...], ...]
        The labels of each level, level 1 first.
    parent_of : {:py:class:`Label`: :py:class:`Label`}
        The parent of every label below level 1.
    """

    def __init__(self, levels, parent_of):
        if not levels:
            raise EmptyInput("a taxonomy needs at least one level")

        self._levels = tuple(tuple(sorted(level)) for level in levels)
        self._parent_of = dict(parent_of)
        self._children_of = {}
        self._by_name = {}

        for number, level in enumerate(self._levels, 1):
            if not level:
                raise EmptyInput("level {} has no labels".format(number))
            for label in level:
                if label.level != number:
                    raise LevelOutOfRange(
                        "label {!r} claims level {} but is stored at "
                        "level {}".format(label.name, label.level, number))
                if not label.name:
                    raise RaggedRow("label {} has an empty name".format(label.id))
                key = (label.level, label.name)
                if key in self._by_name:
                    raise ConflictingParent(
                        "duplicate name {!r} at level {}".format(*key[::-1]))
                self._by_name[key] = label
                self._children_of[label] = []

        for label in self.labels:
            parent = self._parent_of.get(label)
            if label.level == 1:
                assert parent is None, "roots have no parent"
                continue
            assert parent is not None, "{!r} has no parent".format(label.name)
            assert parent.level == label.level - 1
            assert parent in self._children_of
            self._children_of[parent].append(label)

        self._children_of = {
            label: tuple(sorted(children))
            for label, children in self._children_of.items()
        }

        # Forest property: one parent edge per non-root label (which also
        # rules out cycles).
        assert len(self._parent_of) == len(self) - len(self._levels[0])

    @property
    def depth(self):
        """The number of levels, ``L``."""
        return len(self._levels)

    @property
    def labels(self):
        """Every label, in id order."""
        return tuple(sorted(label for level in self._levels for label in level))

    def __len__(self):
        return sum(len(level) for level in self._levels)

    def __contains__(self, label):
        return (isinstance(label, Label) and
                self._by_name.get((label.level, label.name)) == label)

    def __repr__(self):
        return "<Taxonomy depth={} sizes={}>".format(
            self.depth, "/".join(str(len(level)) for level in self._levels))

    def _check(self, label):
        if label not in self:
            raise UnknownLabel("{!r} is not in this taxonomy".format(label))

    def _check_level(self, level):
        if not 1 <= level <= self.depth:
            raise LevelOutOfRange(
                "level {} is outside 1..{}".format(level, self.depth))

    def parent(self, label):
        """
        Return the parent of ``label``, or ``None`` for a level-1 label.

        Raises
        ------
        UnknownLabel
        """
        self._check(label)
        return self._parent_of.get(label)

    def children(self, label):
        """
        Return the children of ``label`` (in id order, empty for leaves).

        Raises
        ------
        UnknownLabel
        """
        self._check(label)
        return self._children_of[label]

    def labels_at_level(self, level):
        """
        Return every label at ``level`` (in id order).

        Raises
        ------
        LevelOutOfRange
        """
        self._check_level(level)
        return self._levels[level - 1]

    def lookup(self, level, name):
        """
        Find a label by level and (un-normalized) name.

        Raises
        ------
        LevelOutOfRange
        UnknownLabel
        """
        self._check_level(level)
        try:
            return self._by_name[(level, normalize_name(name))]
        except KeyError:
            raise UnknownLabel(
                "no label {!r} at level {}".format(name, level)) from None

    def edges(self):
        """Return every (parent, child) edge, ordered by child id."""
        return tuple(
            (self._parent_of[label], label)
            for label in self.labels
            if label.level > 1
        )

    def ancestry(self, label):
        """Return the chain of labels from the root down to ``label``."""
        self._check(label)
        chain = [label]
        while chain[-1].level > 1:
            chain.append(self._parent_of[chain[-1]])
        return tuple(reversed(chain))

    def rows(self):
        """
        Export the taxonomy as the set of root-to-leaf name tuples, one per
        level-L label: the inverse of :py:func:`load_taxonomy`.
        """
        return {
            tuple(label.name for label in self.ancestry(leaf))
            for leaf in self._levels[-1]
        }


def load_taxonomy(rows):
    """
    Build a :py:class:`Taxonomy` from full label paths.

    Parameters
    ----------
    rows : iterable of (str, ...)
        One ``(level-1 name, ..., level-L name)`` tuple per observed path.
        Duplicate rows are harmless. Names are normalized with
        :py:func:`normalize_name`.

    Returns
    -------
    :py:class:`Taxonomy`
        Label ids are assigned in (level, name) order so that they do not
        depend on the order of ``rows``.

    Raises
    ------
    EmptyInput
        If ``rows`` is empty.
    RaggedRow
        If a row's arity differs from the first row's, or an entry is empty
        after normalization.
    ConflictingParent
        If one (level, name) is observed under two different parents.
    """
    depth = None
    names = []
    parent_names = {}

    for number, row in enumerate(rows, 1):
        row = tuple(row)
        if depth is None:
            depth = len(row)
            if depth < 1:
                raise RaggedRow("row 1 has no entries")
            names = [set() for _ in range(depth)]
        if len(row) != depth:
            raise RaggedRow("row {} has {} entries, expected {}".format(
                number, len(row), depth))

        row = tuple(normalize_name(name) for name in row)
        for level, name in enumerate(row, 1):
            if not name:
                raise RaggedRow("row {} has an empty label at level {}".format(
                    number, level))
            names[level - 1].add(name)
            if level > 1:
                parent = row[level - 2]
                known = parent_names.setdefault((level, name), parent)
                if known != parent:
                    raise ConflictingParent(
                        "{!r} at level {} appears under both {!r} and "
                        "{!r}".format(name, level, known, parent))

    if depth is None:
        raise EmptyInput("no taxonomy rows given")

    levels = []
    by_name = {}
    next_id = 0
    for level, level_names in enumerate(names, 1):
        labels = []
        for name in sorted(level_names):
            label = Label(next_id, name, level)
            by_name[(level, name)] = label
            labels.append(label)
            next_id += 1
        levels.append(labels)

    parent_of = {
        by_name[(level, name)]: by_name[(level - 1, parent)]
        for (level, name), parent in parent_names.items()
    }

    return Taxonomy(levels, parent_of)
