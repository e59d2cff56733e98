"""Helpers shared by the fusion stages and the command line."""

import contextlib
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from .protocols import Ddtrace


def add_stage_tags(fields, tags):
    # type: (Dict[str, Any], List[str]) -> None
    """Copy ``key:value`` statsd tags of a stage into its log fields.

    Keys already present in ``fields`` (the stage summary) are kept, and tags
    without a value are skipped.
    """
    for tag in tags:
        key, separator, value = tag.partition(":")
        if separator:
            fields.setdefault(key, value)


def format_scores(scores):
    # type: (Dict[str, float]) -> str
    """``name=value`` pairs on one line, names sorted, floats to 4 decimals."""
    return " ".join(
        f"{name}={value:.4f}" if isinstance(value, float) else f"{name}={value}"
        for name, value in sorted(scores.items())
    )


@contextlib.contextmanager
def traced_stage(trace_name, stage, ddtrace, service, tags=None):
    # type: (str, str, Optional[Ddtrace], str, Optional[dict]) -> Iterator[None]
    """Run a block inside a datadog span when a tracer is available.

    :param str trace_name: the name of the operation being traced
    :param str stage: resource name of the span
    :param Ddtrace ddtrace: (optional) tracer provider
    :param str service: service name of the span
    :param dict tags: tags to be added to trace e.g. `{"state": "2"}`
    """
    if ddtrace is None:
        yield
        return
    with ddtrace.tracer.trace(trace_name, service=service, resource=stage) as span:
        if tags:
            span.set_tags(tags)
        yield


def make_rng(seed):
    # type: (Optional[int]) -> np.random.Generator
    """Seeded generator; every random draw of the package goes through one."""
    return np.random.default_rng(seed)


def as_points(points):
    # type: (Any) -> np.ndarray
    """Coerce to a float ``(N, 3)`` array."""
    array = np.asarray(points, dtype=np.float64)
    return array.reshape(-1, 3)
