"""Exception hierarchy shared across the package."""
from __future__ import annotations


class LayerPeelError(Exception):
    pass


# svg_core
class MalformedXml(LayerPeelError):
    pass


class UnsupportedFeature(LayerPeelError):
    """The document uses something outside the flat-color subset."""


class EmptyDocument(LayerPeelError):
    pass


class DimensionMismatch(LayerPeelError):
    pass


# layer graph
class GraphError(LayerPeelError):
    pass


class InvalidJson(GraphError):
    pass


class SchemaViolation(GraphError):
    pass


class DanglingEdge(GraphError):
    pass


# vectorizer
class DegeneratePolygon(LayerPeelError):
    pass


# attention planner
class PlanError(LayerPeelError):
    pass


class LayoutMismatch(PlanError):
    pass


class EmptyBox(PlanError):
    pass


# peel loop
class StallDetected(LayerPeelError):
    pass


class AnnotatorError(LayerPeelError):
    pass


class RemoverError(LayerPeelError):
    pass


# metrics
class EmptyCloud(LayerPeelError):
    pass


class ServiceUnavailable(LayerPeelError):
    pass


class UnpairedFile(LayerPeelError):
    pass


# gateways
class MissingTag(LayerPeelError):
    pass


class InvalidGraphJson(LayerPeelError):
    pass


class BoxOutOfRange(LayerPeelError):
    pass


class GatewayError(LayerPeelError):
    """Base for failures talking to a model service.

    ``raw_payload`` keeps whatever the server sent so traces can be audited.
    """

    def __init__(self, message: str, raw_payload: bytes | str | None = None, retries: int = 0):
        super().__init__(message)
        self.raw_payload = raw_payload
        self.retries = retries


class Timeout(GatewayError):
    pass


class Unauthorized(GatewayError):
    pass


class ProtocolError(GatewayError):
    pass


class ServerError(GatewayError):
    """The service kept failing (5xx or connection errors) past the retry budget."""


class ConfigError(LayerPeelError):
    pass
