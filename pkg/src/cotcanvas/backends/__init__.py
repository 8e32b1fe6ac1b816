"""Model-service boundary: interfaces, deterministic mocks, remote adapters."""

from .base import (
    EmbeddingBackend,
    InpaintBackend,
    JudgeBackend,
    JudgeCriterion,
    MllmBackend,
    SegmentationBackend,
    SegmentationContract,
)
from .config import BackendSuite, load_endpoints, mock_suite, remote_suite
from .mocks import (
    ColorFillInpaint,
    ColorHistogramEmbedding,
    ColorMatchSegmentation,
    CompositorInpaint,
    FixedJudge,
    HashRectSegmentation,
    MeanPoolEmbedding,
    MockMllm,
    OracleSegmentation,
)
from .remote import (
    EndpointConfig,
    RemoteEmbedding,
    RemoteInpaint,
    RemoteJudge,
    RemoteMllm,
    RemoteSegmentation,
    b64_to_image,
    b64_to_mask,
    image_to_b64,
    mask_to_b64,
)
from .synthetic import (
    PALETTE,
    SHAPES,
    SceneObject,
    SyntheticScene,
    anchor_band,
    generate_scene,
    oracle_localize,
    rasterize_shape,
)

__all__ = [
    "BackendSuite",
    "ColorFillInpaint",
    "ColorHistogramEmbedding",
    "ColorMatchSegmentation",
    "CompositorInpaint",
    "EmbeddingBackend",
    "EndpointConfig",
    "FixedJudge",
    "HashRectSegmentation",
    "InpaintBackend",
    "JudgeBackend",
    "JudgeCriterion",
    "MeanPoolEmbedding",
    "MllmBackend",
    "MockMllm",
    "OracleSegmentation",
    "PALETTE",
    "RemoteEmbedding",
    "RemoteInpaint",
    "RemoteJudge",
    "RemoteMllm",
    "RemoteSegmentation",
    "SHAPES",
    "SceneObject",
    "SegmentationBackend",
    "SegmentationContract",
    "SyntheticScene",
    "anchor_band",
    "b64_to_image",
    "b64_to_mask",
    "generate_scene",
    "image_to_b64",
    "load_endpoints",
    "mask_to_b64",
    "mock_suite",
    "oracle_localize",
    "rasterize_shape",
    "remote_suite",
]
