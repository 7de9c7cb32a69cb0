"""Dense, streaming and block-sparse attention kernels."""
