"""Two-level sparse decode attention over a simulated offloaded KV cache."""

from tlsattn.attention import (
    HeadLayout,
    KvCache,
    full_attention,
    oracle_token_ranking,
    sparse_attention,
)
from tlsattn.blocks import (
    BlockConfig,
    BlockMetadata,
    BlockSelection,
    build_metadata,
    score_blocks_direct,
    score_blocks_gemm,
    select_blocks,
)
from tlsattn.kernels import BACKEND
from tlsattn.offload import (
    CacheLedger,
    CostModel,
    OffloadEngine,
    StepReport,
    TransferPlan,
    commit_transfer,
    complexity_counters,
    incremental_transfer,
    model_step_latency,
)
from tlsattn.tokens import (
    ChannelProfile,
    QuantizedKeyIndex,
    TokenSelection,
    approx_scores,
    calibrate_channels,
    quantize_keys,
    select_tokens,
)

__version__ = "0.1.0"
