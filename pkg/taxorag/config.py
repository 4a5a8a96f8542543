"""
Run configuration.

A run is described by a JSON document parsed into :py:class:`RunConfig`.
Any field may be overridden with a dotted path (``"chat.provider"``,
``"retrieval.k_per_level.2"``, ...), which is how the command line flags are
applied. API keys are never part of the configuration: they are read from
environment variables (a ``.env`` file is honoured).
"""

import json
import os
from typing import List, Literal, Optional

import sentinel
from dotenv import load_dotenv
from pydantic import (
    BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError,
    model_validator)

from taxorag.classifier import ClassifierConfig, Mode
from taxorag.datasets import PRESETS
from taxorag.errors import ConfigError
from taxorag.index import RetrievalConfig
from taxorag.llm import GenerationConfig
from taxorag.prompt import PromptTemplate

__all__ = [
    "Unset",
    "EmbeddingSettings",
    "ChatSettings",
    "DatasetSettings",
    "RunConfig",
    "load_config",
    "apply_overrides",
    "api_key",
]

Unset = sentinel.create("Unset")
"""
The value of an override which was not given. Unlike ``None`` (or ``0``, or
``""``) it never replaces a configured value.
"""


class _Settings(BaseModel):
    model_config = ConfigDict(extra="forbid")


class _ProviderSettings(_Settings):
    base_url: Optional[str] = None
    api_key_env: str = "OPENAI_API_KEY"
    max_tries: PositiveInt = 5
    base_delay: PositiveFloat = 0.5
    max_delay: PositiveFloat = 8.0
    timeout: PositiveFloat = 30.0
    max_in_flight: Optional[PositiveInt] = 4
    rate: Optional[PositiveFloat] = None


class EmbeddingSettings(_ProviderSettings):
    """
    ``provider`` is ``"openai"`` (any endpoint speaking its embeddings API)
    or ``"hashing"``, an offline bag-of-words embedder of ``dim``
    dimensions.
    """

    provider: Literal["openai", "hashing"] = "openai"
    model: str = "text-embedding-ada-002"
    dim: PositiveInt = 64
    cache_dir: Optional[str] = None
    batch_size: PositiveInt = 64
    contextual: bool = False


class ChatSettings(_ProviderSettings):
    """
    ``provider`` is ``"openai"``, ``"candidate-echo"`` or ``"scripted"``.
    A scripted provider reads its answers from ``script``, a JSON file of
    the form ``{"responses": {document_id: [level 1 answer, ...]},
    "default": answer}``.
    """

    provider: Literal["openai", "candidate-echo", "scripted"] = "openai"
    generation: GenerationConfig = Field(default_factory=GenerationConfig)
    script: Optional[str] = None
    audit: bool = False


class DatasetSettings(_Settings):
    """
    Where the documents come from. Unset column settings are taken from
    ``preset``, if one is named. ``taxonomy_header`` says whether a
    delimited taxonomy file starts with a header row.
    """

    path: str
    format: Optional[Literal["csv", "tsv", "jsonl"]] = None
    preset: Optional[Literal["amazon", "dbpedia", "wos"]] = None
    name: Optional[str] = None
    text_columns: Optional[List[str]] = None
    gold_columns: Optional[List[str]] = None
    id_column: Optional[str] = None
    text_separator: Optional[str] = None
    taxonomy_path: Optional[str] = None
    taxonomy_header: bool = True
    task_description: Optional[str] = None
    sample_size: Optional[PositiveInt] = None
    sample_seed: int = 42

    def resolved(self):
        """A copy with the preset's defaults filled in."""
        preset = PRESETS.get(self.preset)
        defaults = dict(
            name=self.preset or os.path.splitext(
                os.path.basename(self.path))[0],
            text_columns=preset.text_columns if preset else ["text"],
            gold_columns=preset.gold_columns if preset else [],
            text_separator=preset.text_separator if preset else " ",
            task_description=(
                preset.task_description if preset else
                PromptTemplate().task_description),
        )
        return self.model_copy(update={
            key: value for key, value in defaults.items()
            if getattr(self, key) is None
        })


class RunConfig(_Settings):
    """
    Everything needed to reproduce a run.

    ``retrieval`` only needs to name what differs from the defaults: its
    per-level maps are merged over the dataset preset's ``k`` (or the
    depth-based defaults of
    :py:meth:`~taxorag.index.RetrievalConfig.defaults_for`).
    ``failure_threshold`` is the largest share of documents allowed to fail
    at the provider before the run is aborted.
    """

    dataset: DatasetSettings
    embedding: EmbeddingSettings = Field(default_factory=EmbeddingSettings)
    chat: ChatSettings = Field(default_factory=ChatSettings)
    mode: Mode = Mode.KG_HTC
    retrieval: Optional[RetrievalConfig] = None
    prompt: PromptTemplate = Field(default_factory=PromptTemplate)
    containment_match: bool = True
    fallback_seed: int = 42
    workers: PositiveInt = 4
    failure_threshold: float = Field(0.1, ge=0.0, le=1.0)
    output_dir: str = "runs/latest"

    @model_validator(mode="after")
    def _paths_exist(self):
        paths = [("dataset.path", self.dataset.path),
                 ("dataset.taxonomy_path", self.dataset.taxonomy_path),
                 ("chat.script", self.chat.script)]
        for name, path in paths:
            if path is not None and not os.path.exists(path):
                raise ValueError("{} {!r} does not exist".format(name, path))
        if self.chat.provider == "scripted" and self.chat.script is None:
            raise ValueError("the scripted chat provider needs chat.script")
        return self

    def retrieval_for(self, depth):
        """The effective :py:class:`~taxorag.index.RetrievalConfig`."""
        preset = PRESETS.get(self.dataset.preset)
        base = RetrievalConfig.defaults_for(depth)
        if preset is not None and preset.k_per_level:
            base = RetrievalConfig(k_per_level=preset.k_per_level)
        if self.retrieval is None:
            return base
        return RetrievalConfig(
            mode=self.retrieval.mode,
            k_per_level={**base.k_per_level, **self.retrieval.k_per_level},
            tau_per_level=dict(self.retrieval.tau_per_level),
        )

    def resolved(self, depth):
        """
        A copy with every default made explicit, as written to a run's
        ``config.json``.
        """
        dataset = self.dataset
        if dataset.task_description is None and dataset.preset is None:
            dataset = dataset.model_copy(update={
                "task_description": self.prompt.task_description})
        dataset = dataset.resolved()
        return self.model_copy(update={
            "dataset": dataset,
            "retrieval": self.retrieval_for(depth),
            "prompt": self.prompt.model_copy(
                update={"task_description": dataset.task_description}),
        })

    def classifier_config(self, depth):
        resolved = self.resolved(depth)
        return ClassifierConfig(
            mode=resolved.mode,
            retrieval=resolved.retrieval,
            generation=resolved.chat.generation,
            template=resolved.prompt,
            containment_match=resolved.containment_match,
            fallback_seed=resolved.fallback_seed,
        )

    def snapshot(self, depth):
        return json.dumps(self.resolved(depth).model_dump(mode="json"),
                          sort_keys=True, indent=2) + "\n"


def apply_overrides(data, overrides):
    """
    Set dotted-path ``overrides`` in the nested dict ``data`` (in place).
    Overrides whose value is :py:data:`Unset` are skipped.
    """
    for dotted, value in (overrides or {}).items():
        if value is Unset:
            continue
        *parents, leaf = dotted.split(".")
        node = data
        for key in parents:
            child = node.get(key)
            if not isinstance(child, dict):
                child = node[key] = {}
            node = child
        node[leaf] = value
    return data


def load_config(path=None, overrides=None):
    """
    Load a :py:class:`RunConfig` from a JSON file and/or overrides.

    Parameters
    ----------
    path : str or None
    overrides : {dotted path: value} or None

    Raises
    ------
    ConfigError
    """
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError("cannot read {}: {}".format(path, e)) from None
        except json.JSONDecodeError as e:
            raise ConfigError("{} is not valid JSON: {}".format(path, e)) \
                from None
        if not isinstance(data, dict):
            raise ConfigError("{} must hold a JSON object".format(path))

    apply_overrides(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from None


def api_key(env_name):
    """
    Read an API key from the environment (after loading any ``.env`` file).

    Raises
    ------
    ConfigError
        If the variable is not set.
    """
    load_dotenv()
    key = os.environ.get(env_name)
    if not key:
        raise ConfigError("environment variable {} is not set".format(env_name))
    return key
