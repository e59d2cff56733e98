"""Simple protocols to duck type dependency injections."""

from typing import Any, List, Optional

import numpy as np


class FeatureExtractor(object):
    """Dense per-pixel descriptor protocol."""

    name = None  # type: str

    def extract(self, image):
        # type: (np.ndarray) -> np.ndarray
        """Return an ``(H, W, D)`` array of descriptors for an ``(H, W, 3)`` image.

        Descriptors do not need to be normalized, callers normalize them.
        """
        raise NotImplementedError


class Tracer(object):
    """Ddtrace Tracer protocol."""

    def trace(self, name, service=None, resource=None, span_type=None):
        # type: (str, Optional[str], Optional[str], Optional[str]) -> Span
        """Return a span that will trace an operation called `name`.

        :param str name: the name of the operation being traced
        :param str service: the name of the service being traced. If not set,
                            it will inherit the service from its parent.
        :param str resource: an optional name of the resource being tracked.
        :param str span_type: an optional operation type.

        Used as a context manager::

            >>> with tracer.trace('fusion.stage', resource='align') as span:
                    # do something
        """
        raise NotImplementedError


class Span(object):
    """Span protocol."""

    def set_tags(self, tags):
        # type: (Any) -> None
        """Set tags."""
        raise NotImplementedError

    def __enter__(self):
        # type: () -> Span
        raise NotImplementedError

    def __exit__(self, *args, **kwargs):
        # type: (*Any, **Any) -> None
        raise NotImplementedError


class Ddtrace(object):
    """Ddtrace protocol."""

    tracer = None  # type: Tracer


class Statsd(object):
    """Statsd protocol."""

    namespace = None  # type: str

    def increment(self, metric, value=1, tags=None, sample_rate=1):
        # type: (str, int, List[str], int) -> None
        """Increment a counter, optionally setting a value, tags and a sample rate.

        >>> statsd.increment('fusion.stage')
        >>> statsd.increment('fusion.primitives', 124)
        """

    def timed(self, metric=None, tags=None, sample_rate=1, use_ms=None):
        # type: (str, List[str], int, bool) -> TimedContextManagerDecorator
        """A context manager measuring the distribution of a block's run time.

        ::

            with statsd.timed('fusion.align.duration', use_ms=True):
                # Do what you need to ...
                pass
        """


class TimedContextManagerDecorator(object):
    """TimedContextManagerDecorator protocol."""

    def __enter__(self):
        # type: () -> TimedContextManagerDecorator
        raise NotImplementedError

    def __exit__(self, type, value, traceback):  # pylint: disable=redefined-builtin
        # type: (Any, Any, Any) -> None
        raise NotImplementedError
