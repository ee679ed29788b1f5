from .pq import (PQCodebook, approx_dist, approx_dists, build_lut, decode, encode, load_codes,
                 pq_memory_bytes, reconstruction_mse, save_codes, subspace_bounds, train_pq)
from .ratio import (d_ladder, default_candidates, io_proxy, measure_candidates,
                    pick_compression_ratio, sample_fraction)

__all__ = [
    "PQCodebook", "approx_dist", "approx_dists", "build_lut", "decode", "encode", "load_codes",
    "pq_memory_bytes", "reconstruction_mse", "save_codes", "subspace_bounds", "train_pq",
    "d_ladder", "default_candidates", "io_proxy", "sample_fraction", "measure_candidates", "pick_compression_ratio",
]
