"""Layer-by-layer decomposition of flat-color images into layered SVG.

The peel loop (:func:`layerpeel.peel.run`) repeatedly removes the topmost
visual elements of an image and vectorizes what disappeared; stacking those
layers in reverse rebuilds the picture as editable paths.
"""
from .attention import AttentionPlan, BBoxNorm, TokenLayout, build_joint_mask, image_tokens_in_box
from .layer_graph import LayerGraph, non_occluded_nodes, parse_graph, serialize
from .occlusion import BitMask, TopmostSet, coverage_mask, peel_generations, topmost_set
from .peel import PeelConfig, PeelTrace, oracle_backends, peel_once, run, run_oracle, save_trace
from .raster import RasterImage, diff_mask, extract_region, is_blank, rasterize
from .svg_core import ColorRGBA, PathShape, SvgDoc, load_svg, normalize_viewbox, parse_svg, to_svg
from .vectorizer import VectorLayer, emit_svg, simplify, trace_regions

__version__ = "0.1.0"
