from .prefetch import IO_MODES, BlockReadError, PrefetchQueues, refine_batch
from .reference import ReferenceResult, reference_two_stage
from .search import (DiskIndex, IOStats, SearchParams, SearchResult, search_baseline,
                     search_two_stage)

__all__ = [
    "IO_MODES", "BlockReadError", "PrefetchQueues", "refine_batch", "ReferenceResult",
    "reference_two_stage", "DiskIndex", "IOStats", "SearchParams", "SearchResult",
    "search_baseline", "search_two_stage",
]
