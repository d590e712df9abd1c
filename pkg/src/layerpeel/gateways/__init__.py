"""Adapters and wire formats for external VLM, diffusion and embedding services."""
from .client import (
    API_KEY_ENV,
    EmbeddingClient,
    RemoteAnnotator,
    RemoteRemover,
    ServiceClient,
    embedding_service,
    remote_annotator,
    remote_remover,
)
from .parsing import (
    TAGS,
    bbox_to_box2d,
    box2d_to_bbox,
    graph_from_tags,
    parse_box_response,
    parse_tagged_response,
    strip_fences,
)
from .protocol import (
    PROTOCOL_VERSION,
    TEMPLATES,
    RemoverRequest,
    VlmRequest,
    render_template,
    template_text,
    verify_templates,
)
